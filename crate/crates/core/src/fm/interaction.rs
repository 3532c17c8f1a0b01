//! Field-pair interaction kernels `<p, q>_{M_{e,f}}` for the FM family.
//!
//! All variants are expressed as FmFM kernels without materializing `M`:
//!
//! * FM: `M = I`, one shared embedding dimension.
//! * FFM: embeddings are `m` blocks of `block_dim`; the pair `(e, f)` reads
//!   block `f` of the first vector against block `e` of the second.
//! * FwFM: `M = s_{e,f} I` with a symmetric matrix of scalars.
//! * FmFM: a dense `k_e x k_f` matrix per unordered field pair.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Fm,
    Ffm,
    Fwfm,
    Fmfm,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fm" => Ok(Variant::Fm),
            "ffm" => Ok(Variant::Ffm),
            "fwfm" => Ok(Variant::Fwfm),
            "fmfm" => Ok(Variant::Fmfm),
            other => Err(Error::Config(format!("unknown model variant `{other}`"))),
        }
    }
}

/// Index of the unordered pair `e <= f` among `num_fields` fields.
pub fn pair_index(num_fields: usize, e: usize, f: usize) -> usize {
    debug_assert!(e <= f && f < num_fields);
    e * num_fields - e * e.saturating_sub(1) / 2 + (f - e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InteractionDoc", into = "InteractionDoc")]
pub struct InteractionSpec {
    variant: Variant,
    /// Embedding dimension `k_f` per field.
    field_dims: Vec<usize>,
    /// FwFM: one scalar per unordered pair. FmFM: concatenated row-major matrices.
    params: Vec<f64>,
    /// Offset of each unordered pair's parameters in `params`.
    pair_offsets: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InteractionDoc {
    variant: Variant,
    field_dims: Vec<usize>,
    params: Vec<f64>,
    trainable: bool,
}

impl TryFrom<InteractionDoc> for InteractionSpec {
    type Error = Error;

    fn try_from(d: InteractionDoc) -> Result<Self> {
        let mut spec = InteractionSpec::layout(d.variant, d.field_dims, d.trainable)?;
        if spec.params.len() != d.params.len() {
            return Err(Error::Format(format!(
                "interaction expects {} parameters, document has {}",
                spec.params.len(),
                d.params.len()
            )));
        }
        spec.params = d.params;
        spec.validate_params()?;
        Ok(spec)
    }
}

impl From<InteractionSpec> for InteractionDoc {
    fn from(s: InteractionSpec) -> Self {
        InteractionDoc {
            variant: s.variant,
            field_dims: s.field_dims,
            params: s.params,
            trainable: s.trainable,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl InteractionSpec {
    fn layout(variant: Variant, field_dims: Vec<usize>, trainable: bool) -> Result<Self> {
        let m = field_dims.len();
        match variant {
            Variant::Fm | Variant::Fwfm => {
                if field_dims.windows(2).any(|w| w[0] != w[1]) {
                    return Err(Error::invalid(format!("{variant:?} needs one shared embedding dimension")));
                }
            }
            Variant::Ffm => {
                if m > 0 && (field_dims.windows(2).any(|w| w[0] != w[1]) || !field_dims[0].is_multiple_of(m)) {
                    return Err(Error::invalid(
                        "FFM dimensions must all equal num_fields * block_dim",
                    ));
                }
            }
            Variant::Fmfm => {}
        }
        let mut pair_offsets = Vec::with_capacity(m * (m + 1) / 2);
        let mut len = 0;
        for e in 0..m {
            for f in e..m {
                pair_offsets.push(len);
                len += match variant {
                    Variant::Fwfm => 1,
                    Variant::Fmfm => field_dims[e] * field_dims[f],
                    _ => 0,
                };
            }
        }
        Ok(InteractionSpec {
            variant,
            field_dims,
            params: vec![0.0; len],
            pair_offsets,
            trainable,
        })
    }

    fn validate_params(&self) -> Result<()> {
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Format("non-finite interaction parameter".into()));
        }
        Ok(())
    }

    /// FM with dimension `dim` for every field.
    pub fn fm(num_fields: usize, dim: usize) -> Self {
        Self::layout(Variant::Fm, vec![dim; num_fields], false).expect("uniform dims")
    }

    /// FFM with `block_dim` per field block; each embedding has `num_fields` blocks.
    pub fn ffm(num_fields: usize, block_dim: usize) -> Self {
        Self::layout(Variant::Ffm, vec![num_fields * block_dim; num_fields], false)
            .expect("uniform dims")
    }

    /// FwFM with every pair weight set to 1.
    pub fn fwfm(num_fields: usize, dim: usize, trainable: bool) -> Self {
        let mut s = Self::layout(Variant::Fwfm, vec![dim; num_fields], trainable).expect("uniform dims");
        s.params.fill(1.0);
        s
    }

    /// FmFM with identity-padded matrices.
    pub fn fmfm(field_dims: Vec<usize>, trainable: bool) -> Self {
        let mut s = Self::layout(Variant::Fmfm, field_dims, trainable).expect("fmfm layout");
        let m = s.field_dims.len();
        for e in 0..m {
            for f in e..m {
                let (ke, kf) = (s.field_dims[e], s.field_dims[f]);
                let off = s.pair_offsets[pair_index(m, e, f)];
                for d in 0..ke.min(kf) {
                    s.params[off + d * kf + d] = 1.0;
                }
            }
        }
        s
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn num_fields(&self) -> usize {
        self.field_dims.len()
    }

    pub fn field_dims(&self) -> &[usize] {
        &self.field_dims
    }

    pub fn dim(&self, field: usize) -> usize {
        self.field_dims[field]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Whether the interaction parameters receive gradients.
    pub fn trainable(&self) -> bool {
        self.trainable && !self.params.is_empty()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }

    fn block_dim(&self) -> usize {
        self.field_dims.first().map_or(0, |k| k / self.num_fields())
    }

    fn pair_offset(&self, e: usize, f: usize) -> usize {
        self.pair_offsets[pair_index(self.num_fields(), e, f)]
    }

    /// FwFM weight `s_{e,f}`; symmetric by construction.
    pub fn pair_weight(&self, e: usize, f: usize) -> Option<f64> {
        let (e, f) = (e.min(f), e.max(f));
        (self.variant == Variant::Fwfm).then(|| self.params[self.pair_offset(e, f)])
    }

    pub fn set_pair_weight(&mut self, e: usize, f: usize, w: f64) {
        let (e, f) = (e.min(f), e.max(f));
        assert_eq!(self.variant, Variant::Fwfm);
        let off = self.pair_offset(e, f);
        self.params[off] = w;
    }

    /// FmFM matrix `M_{e,f}` (row-major `k_e x k_f`) for `e <= f`.
    pub fn pair_matrix(&self, e: usize, f: usize) -> Option<&[f64]> {
        (self.variant == Variant::Fmfm && e <= f).then(|| {
            let off = self.pair_offset(e, f);
            &self.params[off..off + self.field_dims[e] * self.field_dims[f]]
        })
    }

    pub fn pair_matrix_mut(&mut self, e: usize, f: usize) -> Option<&mut [f64]> {
        if self.variant != Variant::Fmfm || e > f {
            return None;
        }
        let off = self.pair_offset(e, f);
        let len = self.field_dims[e] * self.field_dims[f];
        Some(&mut self.params[off..off + len])
    }

    /// `<p, q>_{M_{e,f}}` for slot vectors `p` (field `e`) and `q` (field `f`), `e <= f`.
    pub fn pair_value(&self, e: usize, f: usize, p: &[f64], q: &[f64]) -> f64 {
        match self.variant {
            Variant::Fm => dot(p, q),
            Variant::Ffm => {
                let b = self.block_dim();
                dot(&p[f * b..(f + 1) * b], &q[e * b..(e + 1) * b])
            }
            Variant::Fwfm => self.params[self.pair_offset(e, f)] * dot(p, q),
            Variant::Fmfm => {
                let m = self.pair_matrix(e, f).expect("fmfm");
                let kf = self.field_dims[f];
                p.iter()
                    .enumerate()
                    .map(|(r, &pr)| pr * dot(&m[r * kf..(r + 1) * kf], q))
                    .sum()
            }
        }
    }

    /// Adds `scale * d<p,q>/dp` to `gp`, `scale * d<p,q>/dq` to `gq`, and the
    /// parameter gradient to `gparams` (same layout as [`params`](Self::params))
    /// when it is provided.
    pub fn pair_grad(
        &self,
        e: usize,
        f: usize,
        p: &[f64],
        q: &[f64],
        scale: f64,
        gp: &mut [f64],
        gq: &mut [f64],
        gparams: Option<&mut [f64]>,
    ) {
        match self.variant {
            Variant::Fm => {
                axpy(scale, q, gp);
                axpy(scale, p, gq);
            }
            Variant::Ffm => {
                let b = self.block_dim();
                let (pf, qe) = (f * b..(f + 1) * b, e * b..(e + 1) * b);
                axpy(scale, &q[qe.clone()], &mut gp[pf.clone()]);
                axpy(scale, &p[pf], &mut gq[qe]);
            }
            Variant::Fwfm => {
                let off = self.pair_offset(e, f);
                let s = self.params[off];
                axpy(scale * s, q, gp);
                axpy(scale * s, p, gq);
                if let Some(g) = gparams {
                    g[off] += scale * dot(p, q);
                }
            }
            Variant::Fmfm => {
                let off = self.pair_offset(e, f);
                let kf = self.field_dims[f];
                let m = &self.params[off..off + p.len() * kf];
                for (r, &pr) in p.iter().enumerate() {
                    let row = &m[r * kf..(r + 1) * kf];
                    gp[r] += scale * dot(row, q);
                    axpy(scale * pr, row, gq);
                }
                if let Some(g) = gparams {
                    for (r, &pr) in p.iter().enumerate() {
                        axpy(scale * pr, q, &mut g[off + r * kf..off + (r + 1) * kf]);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_indices_are_dense() {
        for m in 1..6 {
            let mut seen = Vec::new();
            for e in 0..m {
                for f in e..m {
                    seen.push(pair_index(m, e, f));
                }
            }
            let expect: Vec<usize> = (0..m * (m + 1) / 2).collect();
            assert_eq!(seen, expect, "m={m}");
        }
    }

    #[test]
    fn fmfm_identity_and_shapes() {
        let s = InteractionSpec::fmfm(vec![2, 3], true);
        assert_eq!(s.params().len(), 4 + 6 + 9);
        assert_eq!(s.pair_matrix(0, 1).unwrap(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let p = [1.0, 2.0];
        let q = [3.0, 4.0, 5.0];
        assert_eq!(s.pair_value(0, 1, &p, &q), 11.0);
    }

    #[test]
    fn ffm_reads_cross_blocks() {
        let s = InteractionSpec::ffm(2, 1);
        // p = (p_block0, p_block1), pair (0,1) reads p block 1 against q block 0
        assert_eq!(s.pair_value(0, 1, &[10.0, 2.0], &[3.0, 100.0]), 6.0);
        assert_eq!(s.pair_value(0, 0, &[10.0, 2.0], &[3.0, 100.0]), 30.0);
    }

    #[test]
    fn fwfm_weights_symmetric() {
        let mut s = InteractionSpec::fwfm(3, 2, true);
        s.set_pair_weight(2, 1, 0.5);
        assert_eq!(s.pair_weight(1, 2), Some(0.5));
        assert_eq!(s.pair_weight(2, 1), Some(0.5));
        assert_eq!(s.pair_value(1, 2, &[1.0, 1.0], &[2.0, 2.0]), 2.0);
    }

    #[test]
    fn bad_layouts_rejected() {
        let doc = r#"{"variant":"fm","field_dims":[2,3],"params":[],"trainable":false}"#;
        assert!(serde_json::from_str::<InteractionSpec>(doc).is_err());
        let doc = r#"{"variant":"fwfm","field_dims":[2,2],"params":[1.0],"trainable":true}"#;
        assert!(serde_json::from_str::<InteractionSpec>(doc).is_err());
    }
}
