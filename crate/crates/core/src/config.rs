//! Run configuration documents (TOML).
//!
//! Every section is optional at parse time; each command checks for the
//! sections it needs. Unknown keys are rejected everywhere. Relative paths
//! resolve against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bin_export::{BoundaryMode, MidpointSpace, DEFAULT_BINS};
use crate::error::{Error, Result};
use crate::fm::ModelSpec;
use crate::schema::SchemaConfig;
use crate::synthetic::ComparisonConfig;
use crate::training::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub data: Option<DataConfig>,
    pub schema: Option<SchemaConfig>,
    pub model: Option<ModelSpec>,
    pub train: Option<TrainConfig>,
    pub export: Option<ExportConfig>,
    pub synth: Option<ComparisonConfig>,
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    /// Evaluated after training when present.
    pub test: Option<PathBuf>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_delimiter() -> char {
    ','
}

impl DataConfig {
    pub fn delimiter_byte(&self) -> Result<u8> {
        u8::try_from(self.delimiter)
            .map_err(|_| Error::Config(format!("delimiter `{}` is not a single byte", self.delimiter)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportMode {
    #[default]
    InverseCdf,
    Geometric,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportConfig {
    /// Continuous fields to convert, in order.
    pub fields: Vec<String>,
    #[serde(default)]
    pub mode: ExportMode,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Geometric mode: overrides the transform's range.
    pub range: Option<(f64, f64)>,
    /// Explicit mode: the boundaries.
    pub boundaries: Option<Vec<f64>>,
    #[serde(default)]
    pub midpoint: MidpointSpace,
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

impl ExportConfig {
    pub fn boundary_mode(&self) -> Result<BoundaryMode> {
        match (self.mode, &self.boundaries) {
            (ExportMode::InverseCdf, None) => Ok(BoundaryMode::InverseCdf),
            (ExportMode::Geometric, None) => Ok(BoundaryMode::Geometric { range: self.range }),
            (ExportMode::Explicit, Some(b)) => Ok(BoundaryMode::Explicit { boundaries: b.clone() }),
            (ExportMode::Explicit, None) => Err(Error::Config("explicit export needs `boundaries`".into())),
            (_, Some(_)) => Err(Error::Config("`boundaries` is only valid with mode = \"explicit\"".into())),
        }
    }
}

/// Hyperparameter grid; empty lists keep the base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub step_size: Vec<f64>,
    pub embedding_dim: Vec<usize>,
    pub epochs: Vec<usize>,
    pub batch_size: Vec<usize>,
    pub l2: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Also render SVG charts next to plot-data tables.
    pub svg: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            svg: false,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        if let Some(t) = &cfg.train {
            t.validate()?;
        }
        if let Some(s) = &cfg.synth {
            s.curves.validate()?;
            s.train.validate()?;
        }
        Ok(cfg)
    }

    /// Reads a config and resolves its relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok((cfg, text))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = &mut self.data {
            fix(&mut d.train);
            if let Some(t) = &mut d.test {
                fix(t);
            }
        }
        fix(&mut self.output.dir);
    }

    pub fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T> {
        section
            .as_ref()
            .ok_or_else(|| Error::Config(format!("missing [{name}] section")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fm::Variant;
    use crate::schema::FieldDecl;

    const FULL: &str = r#"
version = 1

[data]
train = "train.csv"
delimiter = ";"

[schema]
label = "clicked"
[[schema.fields]]
kind = "categorical"
name = "site"
[[schema.fields]]
kind = "continuous"
name = "age"
num_functions = 8
transform = "min_max"

[model]
variant = "fwfm"
embedding_dim = 3

[train]
epochs = 2
holdout_fraction = 0.0

[export]
fields = ["age"]
mode = "geometric"
range = [1.0, 100.0]
bins = 50

[output]
dir = "results"
svg = true
"#;

    #[test]
    fn full_document_parses() {
        let mut cfg = RunConfig::parse(FULL).unwrap();
        cfg.resolve_paths(Path::new("/tmp/run"));
        let data = cfg.data.as_ref().unwrap();
        assert_eq!(data.train, PathBuf::from("/tmp/run/train.csv"));
        assert_eq!(data.delimiter_byte().unwrap(), b';');
        assert_eq!(cfg.model.as_ref().unwrap().variant, Variant::Fwfm);
        let schema = cfg.schema.as_ref().unwrap();
        assert!(matches!(schema.fields[1], FieldDecl::Continuous { num_functions: 8, .. }));
        let export = cfg.export.as_ref().unwrap();
        assert_eq!(
            export.boundary_mode().unwrap(),
            BoundaryMode::Geometric { range: Some((1.0, 100.0)) }
        );
        assert_eq!(cfg.output.dir, PathBuf::from("/tmp/run/results"));
    }

    #[test]
    fn unknown_keys_rejected() {
        for doc in [
            "version = 1\ncolour = 3",
            "version = 1\n[train]\nepoch = 3",
            "version = 1\n[model]\nvariant = \"fm\"\ndim = 2",
            "version = 1\n[schema]\nlabel = \"y\"\n[[schema.fields]]\nkind = \"binned\"\nname = \"a\"\nknots = 3",
        ] {
            assert!(matches!(RunConfig::parse(doc), Err(Error::Config(_))), "{doc}");
        }
    }

    #[test]
    fn version_and_values_checked() {
        assert!(RunConfig::parse("version = 2").is_err());
        assert!(RunConfig::parse("version = 1\n[train]\nstep_size = -1.0").is_err());
        assert!(RunConfig::parse("version = 1").is_ok());
    }

    #[test]
    fn export_mode_combinations() {
        let mut e: ExportConfig = toml::from_str("fields = [\"z\"]").unwrap();
        assert_eq!(e.bins, DEFAULT_BINS);
        assert_eq!(e.boundary_mode().unwrap(), BoundaryMode::InverseCdf);
        e.mode = ExportMode::Explicit;
        assert!(e.boundary_mode().is_err());
        e.boundaries = Some(vec![0.0, 1.0]);
        assert!(e.boundary_mode().is_ok());
        e.mode = ExportMode::Geometric;
        assert!(e.boundary_mode().is_err());
    }

    #[test]
    fn shipped_configs_parse() {
        for text in [
            include_str!("../../../configs/synthetic.toml"),
            include_str!("../../../configs/housing.toml"),
        ] {
            RunConfig::parse(text).unwrap();
        }
    }
}
