//! Conversion of spline-encoded fields into fine-grained binned fields.
//!
//! Each bin receives the embedding and linear weight that the sum-reduced
//! field produces at the bin's midpoint, so the exported model scores every
//! value exactly as the source model scores its bin midpoint and needs no
//! basis evaluation at serving time.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::write_table;
use crate::error::{Error, Result};
use crate::fm::ModelParams;
use crate::schema::{bin_index, FieldKind};
use crate::transforms::{MonotoneTransform, Transform};

pub const DEFAULT_BINS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryMode {
    /// `transform.inverse(j / N)`.
    InverseCdf,
    /// Ratio-constant ladder over `range`, or the transform's range.
    Geometric { range: Option<(f64, f64)> },
    Explicit { boundaries: Vec<f64> },
}

/// Where bin midpoints are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MidpointSpace {
    /// Arithmetic midpoint of the raw bin edges.
    #[default]
    Raw,
    /// Raw value whose transformed image is the midpoint of the transformed edges.
    Transformed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedExport {
    pub field_id: usize,
    pub field_name: String,
    pub boundaries: Vec<f64>,
    /// Raw values at which the source field was evaluated, one per bin.
    pub midpoints: Vec<f64>,
    pub bin_linear: Vec<f64>,
    pub bin_embeddings: Vec<Vec<f64>>,
}

fn check_increasing(b: &[f64]) -> Result<()> {
    if b.len() < 2 {
        return Err(Error::Config("need at least two bin boundaries".into()));
    }
    if b.iter().any(|x| !x.is_finite()) || b.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("bin boundaries must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// `N + 1` strictly increasing boundaries. `n` is ignored in explicit mode.
pub fn make_boundaries(transform: &Transform, n: usize, mode: &BoundaryMode) -> Result<Vec<f64>> {
    let b = match mode {
        BoundaryMode::Explicit { boundaries } => boundaries.clone(),
        _ if n == 0 => return Err(Error::Config("bin count must be at least 1".into())),
        BoundaryMode::InverseCdf => (0..=n)
            .map(|j| transform.inverse(j as f64 / n as f64))
            .collect::<Result<_>>()?,
        BoundaryMode::Geometric { range } => {
            let (lo, hi) = range.unwrap_or_else(|| transform.range());
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(Error::Config(format!(
                    "geometric boundaries need 0 < lo < hi, got [{lo}, {hi}]"
                )));
            }
            let ratio = hi / lo;
            let mut b: Vec<f64> = (0..=n).map(|j| lo * ratio.powf(j as f64 / n as f64)).collect();
            b[n] = hi;
            b
        }
    };
    check_increasing(&b)?;
    Ok(b)
}

fn midpoint(transform: &Transform, space: MidpointSpace, a: f64, b: f64) -> Result<f64> {
    match space {
        MidpointSpace::Raw => Ok(0.5 * (a + b)),
        MidpointSpace::Transformed => {
            let m = 0.5 * (transform.apply(a)? + transform.apply(b)?);
            transform.inverse(m)
        }
    }
}

/// Replaces `field` by a binned field over `boundaries`.
///
/// A continuous source is evaluated at bin midpoints; a binned source copies
/// the parameters of the old bin holding each midpoint, so re-exporting over
/// the same boundaries reproduces the model exactly.
pub fn export_binned(
    model: &ModelParams,
    field: usize,
    boundaries: &[f64],
    space: MidpointSpace,
) -> Result<(ModelParams, BinnedExport)> {
    check_increasing(boundaries)?;
    let schema = model.schema();
    let src = schema
        .fields
        .get(field)
        .ok_or_else(|| Error::invalid(format!("no field {field}")))?;
    let k = model.interaction().dim(field);
    let n = boundaries.len() - 1;
    let mut midpoints = Vec::with_capacity(n);
    let mut bin_linear = Vec::with_capacity(n);
    let mut bin_embeddings = Vec::with_capacity(n);

    let fill_value = match &src.kind {
        FieldKind::ContinuousNumerical {
            transform,
            basis,
            fill_value,
        } => {
            let (lo, hi) = transform.range();
            if boundaries[0] > lo || boundaries[n] < hi {
                log::warn!(
                    "boundaries [{}, {}] do not cover the range [{lo}, {hi}] of `{}`; outer bins absorb the rest",
                    boundaries[0],
                    boundaries[n],
                    src.name
                );
            }
            for w in boundaries.windows(2) {
                let mid = midpoint(transform, space, w[0], w[1])?;
                let mut lin = 0.0;
                let mut v = vec![0.0; k];
                for (i, b) in basis.eval_sparse(transform.apply(mid)?)?.iter() {
                    lin += b * model.linear()[src.offset + i];
                    for (acc, e) in v.iter_mut().zip(model.embedding(src.offset + i)) {
                        *acc += b * e;
                    }
                }
                midpoints.push(mid);
                bin_linear.push(lin);
                bin_embeddings.push(v);
            }
            *fill_value
        }
        FieldKind::BinnedNumerical {
            boundaries: old,
            fill_value,
        } => {
            for w in boundaries.windows(2) {
                let mid = 0.5 * (w[0] + w[1]);
                let j = src.offset + bin_index(old, mid);
                midpoints.push(mid);
                bin_linear.push(model.linear()[j]);
                bin_embeddings.push(model.embedding(j).to_vec());
            }
            *fill_value
        }
        FieldKind::Categorical { .. } => {
            return Err(Error::field(&src.name, "categorical fields cannot be exported to bins"))
        }
    };

    let mut new_schema = schema.clone();
    new_schema.fields[field].kind = FieldKind::BinnedNumerical {
        boundaries: boundaries.to_vec(),
        fill_value,
    };
    new_schema.reindex()?;

    let mut linear = Vec::with_capacity(new_schema.total_features);
    let mut embeddings = Vec::new();
    for f in &schema.fields {
        if f.field_id == field {
            linear.extend_from_slice(&bin_linear);
            for v in &bin_embeddings {
                embeddings.extend_from_slice(v);
            }
        } else {
            linear.extend_from_slice(&model.linear()[f.offset..f.offset + f.width()]);
            for i in f.offset..f.offset + f.width() {
                embeddings.extend_from_slice(model.embedding(i));
            }
        }
    }
    let exported = model.with_layout(new_schema, linear, embeddings)?;
    let report = BinnedExport {
        field_id: field,
        field_name: src.name.clone(),
        boundaries: boundaries.to_vec(),
        midpoints,
        bin_linear,
        bin_embeddings,
    };
    Ok((exported, report))
}

impl BinnedExport {
    /// One row per bin: edges, midpoint, linear weight and embedding.
    pub fn table(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let k = self.bin_embeddings.first().map_or(0, Vec::len);
        let mut header: Vec<String> = ["field", "bin", "lower", "upper", "midpoint", "linear"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((0..k).map(|d| format!("v{d}")));
        let rows = (0..self.midpoints.len())
            .map(|j| {
                let mut r = vec![
                    self.field_name.clone(),
                    j.to_string(),
                    self.boundaries[j].to_string(),
                    self.boundaries[j + 1].to_string(),
                    self.midpoints[j].to_string(),
                    self.bin_linear[j].to_string(),
                ];
                r.extend(self.bin_embeddings[j].iter().map(f64::to_string));
                r
            })
            .collect();
        (header, rows)
    }

    pub fn write_table(&self, path: impl AsRef<Path>) -> Result<()> {
        let (header, rows) = self.table();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        write_table(path, &header, &rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::QuantileTransform;

    #[test]
    fn inverse_cdf_identity_quarters() {
        let b = make_boundaries(&Transform::Identity, 4, &BoundaryMode::InverseCdf).unwrap();
        assert_eq!(b, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn geometric_doubling_ladder() {
        let mode = BoundaryMode::Geometric { range: Some((1.0, 256.0)) };
        let b = make_boundaries(&Transform::Identity, 8, &mode).unwrap();
        for (j, x) in b.iter().enumerate() {
            let want = 2f64.powi(j as i32);
            assert!((x - want).abs() <= 1e-12 * want, "{j}: {x}");
        }
    }

    #[test]
    fn geometric_needs_positive_range() {
        let mode = BoundaryMode::Geometric { range: None };
        let t = Transform::min_max(-1.0, 4.0).unwrap();
        assert!(matches!(make_boundaries(&t, 4, &mode), Err(Error::Config(_))));
        let t = Transform::min_max(2.0, 32.0).unwrap();
        assert_eq!(make_boundaries(&t, 4, &mode).unwrap().len(), 5);
    }

    #[test]
    fn explicit_boundaries_validated() {
        let ok = BoundaryMode::Explicit { boundaries: vec![0.0, 1.0, 3.0] };
        assert_eq!(make_boundaries(&Transform::Identity, 0, &ok).unwrap(), vec![0.0, 1.0, 3.0]);
        for bad in [vec![0.0, 0.0, 1.0], vec![1.0], vec![0.0, f64::NAN]] {
            let m = BoundaryMode::Explicit { boundaries: bad };
            assert!(make_boundaries(&Transform::Identity, 0, &m).is_err());
        }
        assert!(make_boundaries(&Transform::Identity, 0, &BoundaryMode::InverseCdf).is_err());
    }

    #[test]
    fn transformed_midpoints_follow_the_transform() {
        let q = Transform::Quantile(QuantileTransform::from_reference_points(vec![0.0, 1.0, 10.0]).unwrap());
        let m = midpoint(&q, MidpointSpace::Transformed, 0.0, 10.0).unwrap();
        assert!((m - 1.0).abs() < 1e-15);
        assert_eq!(midpoint(&q, MidpointSpace::Raw, 0.0, 10.0).unwrap(), 5.0);
    }
}
