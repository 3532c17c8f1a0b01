use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::interaction::{InteractionSpec, Variant};
use crate::error::{Error, Result};
use crate::schema::{DatasetSchema, Reduction};

pub const MODEL_FORMAT: &str = "splinefm-model";
pub const MODEL_VERSION: u32 = 1;

/// Standardization applied to regression targets during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetScale {
    pub mean: f64,
    pub std: f64,
}

impl TargetScale {
    pub fn fit(labels: &[f64]) -> Self {
        let n = labels.len().max(1) as f64;
        let mean = labels.iter().sum::<f64>() / n;
        let var = labels.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        TargetScale { mean, std }
    }

    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn restore(&self, y: f64) -> f64 {
        y * self.std + self.mean
    }
}

/// Model family and embedding sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub variant: Variant,
    /// Embedding dimension for FM/FwFM/FmFM, per-field block size for FFM.
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    /// Per-field dimensions (FmFM only), in schema order.
    #[serde(default)]
    pub field_dims: Option<Vec<usize>>,
    /// Whether FwFM weights / FmFM matrices are learned.
    #[serde(default = "default_true")]
    pub learn_interaction: bool,
    /// Overrides the `1/sqrt(k_f)` initial embedding scale.
    #[serde(default)]
    pub init_std: Option<f64>,
}

fn default_dim() -> usize {
    4
}

fn default_true() -> bool {
    true
}

impl ModelSpec {
    pub fn new(variant: Variant, embedding_dim: usize) -> Self {
        ModelSpec {
            variant,
            embedding_dim,
            field_dims: None,
            learn_interaction: true,
            init_std: None,
        }
    }

    pub fn interaction(&self, num_fields: usize) -> Result<InteractionSpec> {
        let k = self.embedding_dim;
        Ok(match self.variant {
            Variant::Fm => InteractionSpec::fm(num_fields, k),
            Variant::Ffm => InteractionSpec::ffm(num_fields, k),
            Variant::Fwfm => InteractionSpec::fwfm(num_fields, k, self.learn_interaction),
            Variant::Fmfm => {
                let dims = match &self.field_dims {
                    Some(d) if d.len() == num_fields => d.clone(),
                    Some(d) => {
                        return Err(Error::Config(format!(
                            "field_dims has {} entries for {num_fields} fields",
                            d.len()
                        )))
                    }
                    None => vec![k; num_fields],
                };
                InteractionSpec::fmfm(dims, self.learn_interaction)
            }
        })
    }
}

/// Parameters of an FmFM-family model with per-field reductions.
///
/// Embedding rows are stored flat; the rows of field `f` start at
/// `row_offsets[f]` and have length `k_f`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ModelDoc", into = "ModelDoc")]
pub struct ModelParams {
    schema: DatasetSchema,
    interaction: InteractionSpec,
    bias: f64,
    linear: Vec<f64>,
    embeddings: Vec<f64>,
    row_offsets: Vec<usize>,
    target: Option<TargetScale>,
    generation: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    format: String,
    version: u32,
    schema: DatasetSchema,
    reductions: Vec<Reduction>,
    interaction: InteractionSpec,
    bias: f64,
    linear: Vec<f64>,
    embeddings: Vec<f64>,
    target: Option<TargetScale>,
}

impl TryFrom<ModelDoc> for ModelParams {
    type Error = Error;

    fn try_from(d: ModelDoc) -> Result<Self> {
        if d.format != MODEL_FORMAT {
            return Err(Error::Format(format!("not a model document (format `{}`)", d.format)));
        }
        if d.version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {}", d.version)));
        }
        d.schema.validate()?;
        let derived: Vec<Reduction> = d.schema.fields.iter().map(|f| f.reduction()).collect();
        if derived != d.reductions {
            return Err(Error::Format("reductions disagree with field kinds".into()));
        }
        ModelParams::from_parts(d.schema, d.interaction, d.bias, d.linear, d.embeddings, d.target)
    }
}

impl From<ModelParams> for ModelDoc {
    fn from(m: ModelParams) -> Self {
        ModelDoc {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            reductions: m.reductions(),
            schema: m.schema,
            interaction: m.interaction,
            bias: m.bias,
            linear: m.linear,
            embeddings: m.embeddings,
            target: m.target,
        }
    }
}

// generation is bookkeeping, not state
impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema
            && self.interaction == other.interaction
            && self.bias.to_bits() == other.bias.to_bits()
            && bits_eq(&self.linear, &other.linear)
            && bits_eq(&self.embeddings, &other.embeddings)
            && self.target == other.target
    }
}

fn bits_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn row_offsets(schema: &DatasetSchema, interaction: &InteractionSpec) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(schema.fields.len());
    let mut len = 0;
    for f in &schema.fields {
        offsets.push(len);
        len += f.width() * interaction.dim(f.field_id);
    }
    (offsets, len)
}

impl ModelParams {
    /// Zero bias and linear weights, Gaussian embeddings with standard
    /// deviation `1/sqrt(k_f)` (or `spec.init_std`).
    pub fn new(schema: DatasetSchema, spec: &ModelSpec, seed: u64) -> Result<Self> {
        let interaction = spec.interaction(schema.fields.len())?;
        let mut model = Self::zeros(schema, interaction)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for f in 0..model.schema.fields.len() {
            let k = model.interaction.dim(f);
            if k == 0 {
                continue;
            }
            let std = spec.init_std.unwrap_or(1.0 / (k as f64).sqrt());
            let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
            let start = model.row_offsets[f];
            let len = model.schema.fields[f].width() * k;
            for v in &mut model.embeddings[start..start + len] {
                *v = normal.sample(&mut rng);
            }
        }
        Ok(model)
    }

    /// All-zero parameters with the given interaction.
    pub fn zeros(schema: DatasetSchema, interaction: InteractionSpec) -> Result<Self> {
        let (_, len) = row_offsets(&schema, &interaction);
        let n = schema.total_features;
        Self::from_parts(schema, interaction, 0.0, vec![0.0; n], vec![0.0; len], None)
    }

    pub fn from_parts(
        schema: DatasetSchema,
        interaction: InteractionSpec,
        bias: f64,
        linear: Vec<f64>,
        embeddings: Vec<f64>,
        target: Option<TargetScale>,
    ) -> Result<Self> {
        if interaction.num_fields() != schema.fields.len() {
            return Err(Error::Dimension(format!(
                "interaction covers {} fields, schema has {}",
                interaction.num_fields(),
                schema.fields.len()
            )));
        }
        let (offsets, len) = row_offsets(&schema, &interaction);
        if linear.len() != schema.total_features || embeddings.len() != len {
            return Err(Error::Dimension(format!(
                "expected {} linear weights and {len} embedding values, got {} and {}",
                schema.total_features,
                linear.len(),
                embeddings.len()
            )));
        }
        if !bias.is_finite() || linear.iter().chain(&embeddings).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite model parameter".into()));
        }
        Ok(ModelParams {
            schema,
            interaction,
            bias,
            linear,
            embeddings,
            row_offsets: offsets,
            target,
            generation: 0,
        })
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn interaction(&self) -> &InteractionSpec {
        &self.interaction
    }

    pub fn interaction_mut(&mut self) -> &mut InteractionSpec {
        self.generation += 1;
        &mut self.interaction
    }

    pub fn reductions(&self) -> Vec<Reduction> {
        self.schema.fields.iter().map(|f| f.reduction()).collect()
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn set_bias(&mut self, b: f64) {
        self.generation += 1;
        self.bias = b;
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    pub fn linear_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.linear
    }

    /// Flat embedding storage (rows concatenated in feature order).
    pub fn embeddings(&self) -> &[f64] {
        &self.embeddings
    }

    pub fn embeddings_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.embeddings
    }

    /// Offset of feature `i`'s embedding row in [`embeddings`](Self::embeddings).
    pub fn row_offset(&self, field: usize, feature: usize) -> usize {
        let f = &self.schema.fields[field];
        self.row_offsets[field] + (feature - f.offset) * self.interaction.dim(field)
    }

    /// Embedding row `v_i` of a global feature.
    pub fn embedding(&self, feature: usize) -> &[f64] {
        let f = self.schema.field_of(feature).expect("feature index in range");
        let off = self.row_offset(f.field_id, feature);
        &self.embeddings[off..off + self.interaction.dim(f.field_id)]
    }

    pub fn embedding_mut(&mut self, feature: usize) -> &mut [f64] {
        self.generation += 1;
        let f = self.schema.field_of(feature).expect("feature index in range");
        let (field, k) = (f.field_id, self.interaction.dim(f.field_id));
        let off = self.row_offset(field, feature);
        &mut self.embeddings[off..off + k]
    }

    pub fn target(&self) -> Option<TargetScale> {
        self.target
    }

    pub fn set_target(&mut self, t: Option<TargetScale>) {
        self.target = t;
    }

    /// Incremented on every mutable access; forward traces record it.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// `1 + n + sum_i k_{f_i} + interaction parameters`.
    pub fn num_params(&self) -> usize {
        1 + self.linear.len() + self.embeddings.len() + self.interaction.params().len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    /// Rebuilds a model over a new schema and parameter arrays, keeping the
    /// interaction and target scaling.
    pub(crate) fn with_layout(&self, schema: DatasetSchema, linear: Vec<f64>, embeddings: Vec<f64>) -> Result<Self> {
        Self::from_parts(schema, self.interaction.clone(), self.bias, linear, embeddings, self.target)
    }
}
