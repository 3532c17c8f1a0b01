//! Field declarations, schema inference and row encoding.
//!
//! Every field maps to a contiguous range of global feature indices. Categorical
//! and binned fields are one-hot and keep the identity reduction; continuous
//! fields emit the non-zero basis values of their transformed value and are
//! sum-reduced inside the model.

use serde::{Deserialize, Serialize};

use crate::data::RawTable;
use crate::error::{Error, Result};
use crate::spline_basis::{SplineBasis, DEFAULT_DEGREE};
use crate::transforms::{sorted_quantile, MonotoneTransform, Transform, DEFAULT_RESOLUTION};

/// Per-field reduction applied to scaled embeddings before interactions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Identity,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    #[default]
    Binary,
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldKind {
    /// One-hot over a sorted vocabulary; the optional unknown slot sits at
    /// index `vocabulary.len()`.
    Categorical {
        vocabulary: Vec<String>,
        unknown_bucket: bool,
    },
    /// One-hot interval membership. `boundaries` has `N + 1` entries for `N`
    /// right-open bins, the last bin closed. Values outside clamp to the outer bins.
    BinnedNumerical {
        boundaries: Vec<f64>,
        fill_value: Option<f64>,
    },
    /// Basis values of `transform(z)`, summed into one slot by the model.
    ContinuousNumerical {
        transform: Transform,
        basis: SplineBasis,
        fill_value: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSchema {
    pub field_id: usize,
    pub name: String,
    pub kind: FieldKind,
    /// First global feature index owned by this field.
    pub offset: usize,
}

impl FieldSchema {
    /// Categorical field over the given values (sorted and deduplicated).
    pub fn categorical(name: impl Into<String>, values: &[&str], unknown_bucket: bool) -> Self {
        let mut vocabulary: Vec<String> = values.iter().map(|s| s.to_string()).collect();
        vocabulary.sort();
        vocabulary.dedup();
        Self::unplaced(
            name,
            FieldKind::Categorical {
                vocabulary,
                unknown_bucket,
            },
        )
    }

    pub fn binned(name: impl Into<String>, boundaries: Vec<f64>) -> Self {
        Self::unplaced(
            name,
            FieldKind::BinnedNumerical {
                boundaries,
                fill_value: None,
            },
        )
    }

    /// Continuous field; missing values map to `transform.inverse(0.5)`.
    pub fn continuous(name: impl Into<String>, transform: Transform, basis: SplineBasis) -> Self {
        let fill_value = transform.inverse(0.5).ok();
        Self::unplaced(
            name,
            FieldKind::ContinuousNumerical {
                transform,
                basis,
                fill_value,
            },
        )
    }

    fn unplaced(name: impl Into<String>, kind: FieldKind) -> Self {
        FieldSchema {
            field_id: 0,
            name: name.into(),
            kind,
            offset: 0,
        }
    }

    pub fn width(&self) -> usize {
        match &self.kind {
            FieldKind::Categorical {
                vocabulary,
                unknown_bucket,
            } => vocabulary.len() + usize::from(*unknown_bucket),
            FieldKind::BinnedNumerical { boundaries, .. } => boundaries.len() - 1,
            FieldKind::ContinuousNumerical { basis, .. } => basis.num_functions(),
        }
    }

    pub fn reduction(&self) -> Reduction {
        match self.kind {
            FieldKind::ContinuousNumerical { .. } => Reduction::Sum,
            _ => Reduction::Identity,
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, FieldKind::ContinuousNumerical { .. })
    }

    fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::field(&self.name, m));
        match &self.kind {
            FieldKind::Categorical {
                vocabulary,
                unknown_bucket,
            } => {
                if vocabulary.windows(2).any(|w| w[0] >= w[1]) {
                    return fail("vocabulary must be sorted and unique");
                }
                if vocabulary.is_empty() && !unknown_bucket {
                    return fail("empty vocabulary without an unknown slot");
                }
            }
            FieldKind::BinnedNumerical { boundaries, .. } => {
                if boundaries.len() < 2 {
                    return fail("binned field needs at least 2 boundaries");
                }
                if boundaries.iter().any(|b| !b.is_finite())
                    || boundaries.windows(2).any(|w| w[0] >= w[1])
                {
                    return fail("bin boundaries must be finite and strictly increasing");
                }
            }
            FieldKind::ContinuousNumerical { .. } => {}
        }
        Ok(())
    }
}

/// Index of the bin holding `z`: right-open bins, last bin closed, clamped.
pub fn bin_index(boundaries: &[f64], z: f64) -> usize {
    let bins = boundaries.len() - 1;
    boundaries
        .partition_point(|&b| b <= z)
        .saturating_sub(1)
        .min(bins - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSchema {
    pub fields: Vec<FieldSchema>,
    pub total_features: usize,
    pub label_kind: LabelKind,
    /// Name of the label column in input tables.
    pub label: String,
}

/// A raw field value before encoding.
#[derive(Debug, Clone, PartialEq)]
pub enum RawValue {
    Missing,
    Text(String),
    Number(f64),
}

impl RawValue {
    pub fn text(s: impl Into<String>) -> Self {
        RawValue::Text(s.into())
    }
}

impl From<f64> for RawValue {
    fn from(v: f64) -> Self {
        RawValue::Number(v)
    }
}

impl From<&str> for RawValue {
    fn from(v: &str) -> Self {
        RawValue::Text(v.to_owned())
    }
}

/// Raw values aligned with the schema's field order, plus the label.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub values: Vec<RawValue>,
    pub label: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub index: usize,
    pub value: f64,
    pub field: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedRow {
    pub entries: Vec<Entry>,
    pub label: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Substitute the field's median point.
    #[default]
    Median,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BinMode {
    #[default]
    Uniform,
    Quantile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Identity,
    MinMax,
    #[default]
    Quantile,
}

fn default_true() -> bool {
    true
}

fn default_degree() -> usize {
    DEFAULT_DEGREE
}

fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}

/// How a field should be encoded; the learned pieces (vocabularies, bin
/// boundaries, transforms) come from [`infer_schema`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldDecl {
    Categorical {
        name: String,
        #[serde(default = "default_true")]
        unknown_bucket: bool,
        /// Closed vocabulary; inferred from the sample when absent.
        #[serde(default)]
        values: Option<Vec<String>>,
    },
    Binned {
        name: String,
        #[serde(default)]
        bins: Option<usize>,
        #[serde(default)]
        mode: BinMode,
        #[serde(default)]
        boundaries: Option<Vec<f64>>,
        #[serde(default)]
        missing: MissingPolicy,
    },
    Continuous {
        name: String,
        num_functions: usize,
        #[serde(default = "default_degree")]
        degree: usize,
        #[serde(default)]
        transform: TransformKind,
        #[serde(default = "default_resolution")]
        resolution: usize,
        /// Fixed range for `min_max`; fitted when absent.
        #[serde(default)]
        range: Option<(f64, f64)>,
        #[serde(default)]
        missing: MissingPolicy,
    },
}

impl FieldDecl {
    pub fn name(&self) -> &str {
        match self {
            FieldDecl::Categorical { name, .. }
            | FieldDecl::Binned { name, .. }
            | FieldDecl::Continuous { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    pub label: String,
    #[serde(default)]
    pub label_kind: LabelKind,
    pub fields: Vec<FieldDecl>,
    /// Tokens read as missing values.
    #[serde(default = "default_missing_tokens")]
    pub missing_tokens: Vec<String>,
}

fn default_missing_tokens() -> Vec<String> {
    ["", "NA", "NaN", "nan", "?"].iter().map(|s| s.to_string()).collect()
}

impl SchemaConfig {
    pub fn new(label: impl Into<String>, label_kind: LabelKind, fields: Vec<FieldDecl>) -> Self {
        SchemaConfig {
            label: label.into(),
            label_kind,
            fields,
            missing_tokens: default_missing_tokens(),
        }
    }
}

fn parse_number(field: &str, v: &RawValue) -> Result<Option<f64>> {
    match v {
        RawValue::Missing => Ok(None),
        RawValue::Number(x) if x.is_finite() => Ok(Some(*x)),
        RawValue::Number(x) => Err(Error::field(field, format!("non-finite value {x}"))),
        RawValue::Text(s) => match s.trim().parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(Some(x)),
            Ok(x) => Err(Error::field(field, format!("non-finite value {x}"))),
            Err(_) => Err(Error::field(field, format!("cannot parse `{s}` as a number"))),
        },
    }
}

fn category_text(v: &RawValue) -> Option<String> {
    match v {
        RawValue::Missing => None,
        RawValue::Text(s) => Some(s.clone()),
        RawValue::Number(x) => Some(x.to_string()),
    }
}

/// Reads a label value for the given label kind.
pub fn parse_label(kind: LabelKind, text: &str) -> Result<f64> {
    let t = text.trim();
    let v: f64 = match (kind, t) {
        (LabelKind::Binary, "true" | "True" | "TRUE") => 1.0,
        (LabelKind::Binary, "false" | "False" | "FALSE") => 0.0,
        _ => t
            .parse()
            .map_err(|_| Error::Data(format!("cannot parse label `{text}`")))?,
    };
    match kind {
        LabelKind::Binary if v != 0.0 && v != 1.0 => {
            Err(Error::Data(format!("binary label must be 0 or 1, got `{text}`")))
        }
        _ if !v.is_finite() => Err(Error::Data(format!("non-finite label `{text}`"))),
        _ => Ok(v),
    }
}

/// Builds vocabularies, bin boundaries and transforms from a sample table.
pub fn infer_schema(table: &RawTable, config: &SchemaConfig) -> Result<DatasetSchema> {
    let mut seen = std::collections::HashSet::new();
    for d in &config.fields {
        if !seen.insert(d.name()) {
            return Err(Error::Config(format!("field `{}` declared twice", d.name())));
        }
        if d.name() == config.label {
            return Err(Error::Config(format!("field `{}` is also the label", d.name())));
        }
    }
    table.column(&config.label)?;

    let mut fields = Vec::with_capacity(config.fields.len());
    let mut offset = 0;
    for (field_id, decl) in config.fields.iter().enumerate() {
        let col = table.column(decl.name())?;
        let raw: Vec<RawValue> = table
            .rows
            .iter()
            .map(|r| table.raw_value(&r[col], &config.missing_tokens))
            .collect();
        let kind = infer_kind(decl, &raw)?;
        let field = FieldSchema {
            field_id,
            name: decl.name().to_owned(),
            kind,
            offset,
        };
        field.validate()?;
        offset += field.width();
        fields.push(field);
    }
    Ok(DatasetSchema {
        fields,
        total_features: offset,
        label_kind: config.label_kind,
        label: config.label.clone(),
    })
}

fn numeric_column(name: &str, raw: &[RawValue]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(raw.len());
    for v in raw {
        if let Some(x) = parse_number(name, v)? {
            out.push(x);
        }
    }
    if out.is_empty() {
        return Err(Error::field(name, "no valid values in sample"));
    }
    Ok(out)
}

fn infer_kind(decl: &FieldDecl, raw: &[RawValue]) -> Result<FieldKind> {
    match decl {
        FieldDecl::Categorical {
            name,
            unknown_bucket,
            values,
        } => {
            let mut vocabulary: Vec<String> = match values {
                Some(v) => v.clone(),
                None => raw.iter().filter_map(category_text).collect(),
            };
            vocabulary.sort();
            vocabulary.dedup();
            if vocabulary.is_empty() {
                return Err(Error::field(name, "no valid values in sample"));
            }
            Ok(FieldKind::Categorical {
                vocabulary,
                unknown_bucket: *unknown_bucket,
            })
        }
        FieldDecl::Binned {
            name,
            bins,
            mode,
            boundaries,
            missing,
        } => {
            let values = numeric_column(name, raw)?;
            let boundaries = match (boundaries, bins) {
                (Some(b), _) => b.clone(),
                (None, Some(n)) => fit_bin_boundaries(name, &values, *n, *mode)?,
                (None, None) => {
                    return Err(Error::Config(format!(
                        "binned field `{name}` needs `bins` or `boundaries`"
                    )))
                }
            };
            let fill_value = match missing {
                MissingPolicy::Median => Some(median(&values)),
                MissingPolicy::Error => None,
            };
            Ok(FieldKind::BinnedNumerical {
                boundaries,
                fill_value,
            })
        }
        FieldDecl::Continuous {
            name,
            num_functions,
            degree,
            transform,
            resolution,
            range,
            missing,
        } => {
            let basis = SplineBasis::build_uniform(*num_functions, *degree)
                .map_err(|e| Error::field(name, e.to_string()))?;
            let transform = match (transform, range) {
                (TransformKind::Identity, _) => Ok(Transform::Identity),
                (TransformKind::MinMax, Some((lo, hi))) => Transform::min_max(*lo, *hi),
                (TransformKind::MinMax, None) => {
                    Transform::fit_min_max(&numeric_column(name, raw)?)
                }
                (TransformKind::Quantile, _) => {
                    Transform::fit_quantile(&numeric_column(name, raw)?, *resolution)
                }
            }
            .map_err(|e| Error::field(name, e.to_string()))?;
            let fill_value = match missing {
                MissingPolicy::Median => Some(transform.inverse(0.5)?),
                MissingPolicy::Error => None,
            };
            Ok(FieldKind::ContinuousNumerical {
                transform,
                basis,
                fill_value,
            })
        }
    }
}

fn median(values: &[f64]) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    sorted_quantile(&s, 0.5)
}

/// Uniform or quantile bin boundaries (`bins + 1` edges, ties merged).
pub fn fit_bin_boundaries(name: &str, values: &[f64], bins: usize, mode: BinMode) -> Result<Vec<f64>> {
    if bins == 0 {
        return Err(Error::field(name, "bin count must be at least 1"));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let (lo, hi) = (s[0], s[s.len() - 1]);
    if lo == hi {
        return Err(Error::field(name, "cannot bin a constant field"));
    }
    let mut b: Vec<f64> = match mode {
        BinMode::Uniform => (0..=bins)
            .map(|j| {
                if j == bins {
                    hi
                } else {
                    lo + (hi - lo) * j as f64 / bins as f64
                }
            })
            .collect(),
        BinMode::Quantile => (0..=bins)
            .map(|j| sorted_quantile(&s, j as f64 / bins as f64))
            .collect(),
    };
    b.dedup();
    Ok(b)
}

impl DatasetSchema {
    /// Lays out fields in the given order.
    pub fn from_fields(fields: Vec<FieldSchema>, label_kind: LabelKind, label: impl Into<String>) -> Result<Self> {
        let mut s = DatasetSchema {
            fields,
            total_features: 0,
            label_kind,
            label: label.into(),
        };
        s.reindex()?;
        s.validate()?;
        Ok(s)
    }

    /// Recomputes offsets and total width after edits to `fields`.
    pub fn reindex(&mut self) -> Result<()> {
        let mut offset = 0;
        for (i, f) in self.fields.iter_mut().enumerate() {
            f.field_id = i;
            f.offset = offset;
            f.validate()?;
            offset += f.width();
        }
        self.total_features = offset;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = std::collections::HashSet::new();
        let mut offset = 0;
        for (i, f) in self.fields.iter().enumerate() {
            if f.field_id != i || f.offset != offset {
                return Err(Error::Format(format!("field `{}` has inconsistent layout", f.name)));
            }
            if !names.insert(f.name.as_str()) {
                return Err(Error::Format(format!("duplicate field `{}`", f.name)));
            }
            f.validate()?;
            offset += f.width();
        }
        if offset != self.total_features {
            return Err(Error::Format(format!(
                "total_features {} does not match field widths {offset}",
                self.total_features
            )));
        }
        Ok(())
    }

    pub fn field_by_name(&self, name: &str) -> Result<&FieldSchema> {
        self.fields
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| Error::Config(format!("unknown field `{name}`")))
    }

    /// Field owning a global feature index.
    pub fn field_of(&self, index: usize) -> Option<&FieldSchema> {
        let pos = self.fields.partition_point(|f| f.offset <= index);
        let f = self.fields.get(pos.checked_sub(1)?)?;
        (index < f.offset + f.width()).then_some(f)
    }

    /// Resolves table columns for the schema fields and the label.
    pub fn bind(&self, table: &RawTable, missing_tokens: &[String]) -> Result<Vec<RawRecord>> {
        let cols: Vec<usize> = self
            .fields
            .iter()
            .map(|f| table.column(&f.name))
            .collect::<Result<_>>()?;
        let label_col = table.column(&self.label)?;
        table
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let label = parse_label(self.label_kind, &r[label_col])
                    .map_err(|e| Error::Data(format!("row {}: {e}", i + 1)))?;
                let values = cols
                    .iter()
                    .map(|&c| table.raw_value(&r[c], missing_tokens))
                    .collect();
                Ok(RawRecord { values, label })
            })
            .collect()
    }

    /// Encodes one raw record into sorted sparse entries.
    pub fn encode_row(&self, raw: &RawRecord) -> Result<EncodedRow> {
        if raw.values.len() != self.fields.len() {
            return Err(Error::Dimension(format!(
                "record has {} values, schema has {} fields",
                raw.values.len(),
                self.fields.len()
            )));
        }
        let mut entries = Vec::with_capacity(self.fields.len() + 3);
        for (field, value) in self.fields.iter().zip(&raw.values) {
            self.encode_field(field, value, &mut entries)?;
        }
        Ok(EncodedRow {
            entries,
            label: raw.label,
        })
    }

    fn encode_field(&self, field: &FieldSchema, value: &RawValue, out: &mut Vec<Entry>) -> Result<()> {
        let one_hot = |local: usize| Entry {
            index: field.offset + local,
            value: 1.0,
            field: field.field_id,
        };
        let numeric = |fill: &Option<f64>| -> Result<f64> {
            match parse_number(&field.name, value)? {
                Some(x) => Ok(x),
                None => fill.ok_or_else(|| Error::field(&field.name, "missing value")),
            }
        };
        match &field.kind {
            FieldKind::Categorical {
                vocabulary,
                unknown_bucket,
            } => {
                let text = category_text(value);
                let idx = match text.as_deref().map(|t| vocabulary.binary_search_by(|v| v.as_str().cmp(t))) {
                    Some(Ok(i)) => i,
                    _ if *unknown_bucket => vocabulary.len(),
                    Some(Err(_)) => {
                        return Err(Error::field(
                            &field.name,
                            format!("value `{}` not in the closed vocabulary", text.unwrap_or_default()),
                        ))
                    }
                    None => return Err(Error::field(&field.name, "missing value")),
                };
                out.push(one_hot(idx));
            }
            FieldKind::BinnedNumerical {
                boundaries,
                fill_value,
            } => {
                let z = numeric(fill_value)?;
                out.push(one_hot(bin_index(boundaries, z)));
            }
            FieldKind::ContinuousNumerical {
                transform,
                basis,
                fill_value,
            } => {
                let z = numeric(fill_value)?;
                let u = transform.apply(z)?;
                for (i, b) in basis.eval_sparse(u)?.iter() {
                    if b != 0.0 {
                        out.push(Entry {
                            index: field.offset + i,
                            value: b,
                            field: field.field_id,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(header: &[&str], rows: &[&[&str]]) -> RawTable {
        RawTable {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: rows
                .iter()
                .map(|r| r.iter().map(|s| s.to_string()).collect())
                .collect(),
        }
    }

    fn binned(boundaries: Vec<f64>) -> DatasetSchema {
        DatasetSchema {
            fields: vec![FieldSchema {
                field_id: 0,
                name: "x".into(),
                kind: FieldKind::BinnedNumerical {
                    boundaries,
                    fill_value: None,
                },
                offset: 0,
            }],
            total_features: 2,
            label_kind: LabelKind::Real,
            label: "y".into(),
        }
    }

    fn rec(v: impl Into<RawValue>) -> RawRecord {
        RawRecord {
            values: vec![v.into()],
            label: 0.0,
        }
    }

    #[test]
    fn widths_add_up() {
        let t = table(
            &["a", "b", "c", "z", "y"],
            &[&["0", "1", "0", "0.1", "1"], &["1", "0", "1", "0.7", "0"]],
        );
        let cat = |n: &str| FieldDecl::Categorical {
            name: n.into(),
            unknown_bucket: false,
            values: None,
        };
        let cfg = SchemaConfig::new(
            "y",
            LabelKind::Binary,
            vec![
                cat("a"),
                cat("b"),
                cat("c"),
                FieldDecl::Continuous {
                    name: "z".into(),
                    num_functions: 9,
                    degree: 3,
                    transform: TransformKind::Identity,
                    resolution: 10,
                    range: None,
                    missing: MissingPolicy::Median,
                },
            ],
        );
        let s = infer_schema(&t, &cfg).unwrap();
        assert_eq!(s.total_features, 15);
        assert_eq!(s.fields[3].offset, 6);
        assert_eq!(s.fields[3].reduction(), Reduction::Sum);
        assert_eq!(s.fields[0].reduction(), Reduction::Identity);
    }

    #[test]
    fn categorical_reserves_unknown_slot() {
        let t = table(&["c", "y"], &[&["a", "0"], &["b", "0"], &["c", "1"], &["d", "1"], &["e", "0"], &["a", "1"]]);
        let cfg = SchemaConfig::new(
            "y",
            LabelKind::Binary,
            vec![FieldDecl::Categorical {
                name: "c".into(),
                unknown_bucket: true,
                values: None,
            }],
        );
        let s = infer_schema(&t, &cfg).unwrap();
        assert_eq!(s.fields[0].width(), 6);
        let row = s.encode_row(&rec("zzz")).unwrap();
        assert_eq!(row.entries, vec![Entry { index: 5, value: 1.0, field: 0 }]);
        let row = s.encode_row(&rec("b")).unwrap();
        assert_eq!(row.entries[0].index, 1);
    }

    #[test]
    fn closed_vocabulary_rejects_unseen() {
        let t = table(&["c", "y"], &[&["a", "0"], &["b", "1"]]);
        let cfg = SchemaConfig::new(
            "y",
            LabelKind::Binary,
            vec![FieldDecl::Categorical {
                name: "c".into(),
                unknown_bucket: false,
                values: None,
            }],
        );
        let s = infer_schema(&t, &cfg).unwrap();
        assert!(matches!(s.encode_row(&rec("q")), Err(Error::Field { .. })));
    }

    #[test]
    fn quantile_bins_match_sorted_oracle() {
        // skewed sample: squares
        let vals: Vec<String> = (0..97).map(|i| ((i * 37 % 97) as f64).powi(2).to_string()).collect();
        let rows: Vec<Vec<&str>> = vals.iter().map(|v| vec![v.as_str(), "0"]).collect();
        let rows_ref: Vec<&[&str]> = rows.iter().map(|r| r.as_slice()).collect();
        let t = table(&["x", "y"], &rows_ref);
        let cfg = SchemaConfig::new(
            "y",
            LabelKind::Real,
            vec![FieldDecl::Binned {
                name: "x".into(),
                bins: Some(12),
                mode: BinMode::Quantile,
                boundaries: None,
                missing: MissingPolicy::Median,
            }],
        );
        let s = infer_schema(&t, &cfg).unwrap();
        let FieldKind::BinnedNumerical { boundaries, .. } = &s.fields[0].kind else {
            panic!()
        };
        // oracle: sorted values i^2 for i in 0..97, position j/12 * 96 = 8j
        let expect: Vec<f64> = (0..=12).map(|j| ((8 * j) as f64).powi(2)).collect();
        assert_eq!(boundaries, &expect);
    }

    #[test]
    fn bin_membership_is_right_open() {
        let s = binned(vec![0.0, 1.0, 2.0]);
        let idx = |z: f64| s.encode_row(&rec(z)).unwrap().entries[0].index;
        assert_eq!(idx(0.5), 0);
        assert_eq!(idx(1.0), 1);
        assert_eq!(idx(2.0), 1);
        assert_eq!(idx(-5.0), 0);
        assert_eq!(idx(9.0), 1);
        assert!(s.encode_row(&rec(RawValue::Missing)).is_err());
        let err = s.encode_row(&rec("abc")).unwrap_err();
        assert!(err.to_string().contains("`x`"), "{err}");
    }

    #[test]
    fn continuous_entries_are_basis_values() {
        let basis = SplineBasis::cubic(8).unwrap();
        let s = DatasetSchema {
            fields: vec![FieldSchema {
                field_id: 0,
                name: "z".into(),
                kind: FieldKind::ContinuousNumerical {
                    transform: Transform::Identity,
                    basis: basis.clone(),
                    fill_value: Some(0.5),
                },
                offset: 0,
            }],
            total_features: 8,
            label_kind: LabelKind::Real,
            label: "y".into(),
        };
        let row = s.encode_row(&rec(0.3)).unwrap();
        let dense = basis.eval(0.3).unwrap();
        let nz: Vec<(usize, f64)> = dense.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
        assert_eq!(nz.len(), 4);
        let got: Vec<(usize, f64)> = row.entries.iter().map(|e| (e.index, e.value)).collect();
        assert_eq!(got, nz);
        let sum: f64 = row.entries.iter().map(|e| e.value).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        // missing uses the fill value
        let m = s.encode_row(&rec(RawValue::Missing)).unwrap();
        assert_eq!(m, s.encode_row(&rec(0.5)).unwrap().clone_with_label(0.0));
    }

    impl EncodedRow {
        fn clone_with_label(&self, label: f64) -> EncodedRow {
            EncodedRow {
                entries: self.entries.clone(),
                label,
            }
        }
    }

    #[test]
    fn config_errors() {
        let t = table(&["a", "y"], &[&["1", "0"]]);
        let dup = SchemaConfig::new(
            "y",
            LabelKind::Binary,
            vec![
                FieldDecl::Categorical { name: "a".into(), unknown_bucket: true, values: None },
                FieldDecl::Categorical { name: "a".into(), unknown_bucket: true, values: None },
            ],
        );
        assert!(matches!(infer_schema(&t, &dup), Err(Error::Config(_))));
        let missing = SchemaConfig::new(
            "y",
            LabelKind::Binary,
            vec![FieldDecl::Categorical { name: "nope".into(), unknown_bucket: true, values: None }],
        );
        assert!(infer_schema(&t, &missing).is_err());
        let empty = table(&["a", "y"], &[&["", "0"], &["NA", "1"]]);
        let num = SchemaConfig::new(
            "y",
            LabelKind::Binary,
            vec![FieldDecl::Binned {
                name: "a".into(),
                bins: Some(3),
                mode: BinMode::Uniform,
                boundaries: None,
                missing: MissingPolicy::Median,
            }],
        );
        assert!(matches!(infer_schema(&empty, &num), Err(Error::Field { .. })));
    }

    #[test]
    fn labels() {
        assert_eq!(parse_label(LabelKind::Binary, "1").unwrap(), 1.0);
        assert_eq!(parse_label(LabelKind::Binary, "false").unwrap(), 0.0);
        assert!(parse_label(LabelKind::Binary, "0.3").is_err());
        assert_eq!(parse_label(LabelKind::Real, "-2.5").unwrap(), -2.5);
        assert!(parse_label(LabelKind::Real, "x").is_err());
    }

    #[test]
    fn field_lookup_by_index() {
        let mut s = binned(vec![0.0, 1.0, 2.0, 3.0]);
        s.fields.push(FieldSchema {
            field_id: 1,
            name: "c".into(),
            kind: FieldKind::Categorical { vocabulary: vec!["a".into()], unknown_bucket: true },
            offset: 0,
        });
        s.reindex().unwrap();
        assert_eq!(s.total_features, 5);
        assert_eq!(s.field_of(2).unwrap().name, "x");
        assert_eq!(s.field_of(3).unwrap().name, "c");
        assert!(s.field_of(5).is_none());
        s.validate().unwrap();
    }
}
