//! Segmentized curves and least-squares checks of the spanning properties.
//!
//! For a sum-reduced basis-encoded field the segmentized score is an affine
//! combination of the field's basis functions; for two such fields it lies in
//! the span of the tensor-product family with constant functions prepended.

use nalgebra::{DMatrix, DVector};

use super::model::ModelParams;
use crate::error::{Error, Result};
use crate::schema::{FieldKind, RawRecord, RawValue};
use crate::spline_basis::SplineBasis;
use crate::transforms::{MonotoneTransform, Transform};

/// Grid points per basis function used by the span fits.
pub const SAMPLES_PER_FUNCTION: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct SpanFit {
    /// Coefficients of `B_1 .. B_l`.
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseSpanFit {
    /// `(l + 1) x (kappa + 1)` coefficients of `B_i(z_e) C_j(z_f)` with
    /// `B_0 = C_0 = 1`; row-major. The constant term lives in `beta`.
    pub alpha: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub beta: f64,
    pub max_residual: f64,
}

impl PairwiseSpanFit {
    pub fn coeff(&self, i: usize, j: usize) -> f64 {
        self.alpha[i * self.cols + j]
    }

    /// Largest `|alpha_{i,j}|` over genuine cross terms `i, j >= 1`.
    pub fn max_cross_coefficient(&self) -> f64 {
        (1..self.rows)
            .flat_map(|i| (1..self.cols).map(move |j| (i, j)))
            .map(|(i, j)| self.coeff(i, j).abs())
            .fold(0.0, f64::max)
    }
}

/// Minimum-norm least squares; returns coefficients and the max abs residual.
pub fn least_squares(design: &DMatrix<f64>, target: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-12 * design.nrows().max(design.ncols()) as f64;
    let coef = svd
        .solve(target, eps)
        .map_err(|e| Error::Numerical(format!("least squares failed: {e}")))?;
    let resid = design * &coef - target;
    Ok((coef, resid.amax()))
}

fn continuous_field(model: &ModelParams, field: usize) -> Result<(&Transform, &SplineBasis)> {
    let f = model
        .schema()
        .fields
        .get(field)
        .ok_or_else(|| Error::invalid(format!("no field {field}")))?;
    match &f.kind {
        FieldKind::ContinuousNumerical { transform, basis, .. } => Ok((transform, basis)),
        _ => Err(Error::field(&f.name, "span fits need a continuous numerical field")),
    }
}

/// Raw values whose transformed images are evenly spaced over `[0, 1]`.
fn raw_grid(transform: &Transform, n: usize) -> Result<Vec<f64>> {
    (0..n)
        .map(|j| transform.inverse(j as f64 / (n - 1) as f64))
        .collect()
}

impl ModelParams {
    /// Scores with `field` swept over `grid` and the other fields fixed to `segment`.
    pub fn segmentized_curve(&self, segment: &RawRecord, field: usize, grid: &[f64]) -> Result<Vec<f64>> {
        if field >= self.schema().fields.len() {
            return Err(Error::invalid(format!("no field {field}")));
        }
        let mut rec = segment.clone();
        grid.iter()
            .map(|&z| {
                rec.values[field] = RawValue::Number(z);
                let row = self.schema().encode_row(&rec)?;
                self.score(&row)
            })
            .collect()
    }

    /// Scores over the grid `grid_e x grid_f` (row-major, `grid_e` outer).
    pub fn segmentized_surface(
        &self,
        segment: &RawRecord,
        (fe, grid_e): (usize, &[f64]),
        (ff, grid_f): (usize, &[f64]),
    ) -> Result<Vec<f64>> {
        let mut rec = segment.clone();
        let mut out = Vec::with_capacity(grid_e.len() * grid_f.len());
        for &ze in grid_e {
            rec.values[fe] = RawValue::Number(ze);
            for &zf in grid_f {
                rec.values[ff] = RawValue::Number(zf);
                out.push(self.score(&self.schema().encode_row(&rec)?)?);
            }
        }
        Ok(out)
    }

    /// Fits the segmentized curve of a continuous field onto `{B_1..B_l, 1}`.
    ///
    /// The constant is in the span of the basis (partition of unity), so the
    /// split between `alpha` and `beta` is the minimum-norm one and only the
    /// residual is meaningful.
    pub fn fit_span(&self, segment: &RawRecord, field: usize) -> Result<SpanFit> {
        let (transform, basis) = continuous_field(self, field)?;
        let l = basis.num_functions();
        let n = SAMPLES_PER_FUNCTION * l + 1;
        let grid = raw_grid(transform, n)?;
        let curve = self.segmentized_curve(segment, field, &grid)?;
        let mut design = DMatrix::zeros(n, l + 1);
        for (r, &z) in grid.iter().enumerate() {
            for (i, b) in basis.eval_sparse(transform.apply(z)?)?.iter() {
                design[(r, i)] = b;
            }
            design[(r, l)] = 1.0;
        }
        let (coef, max_residual) = least_squares(&design, &DVector::from_vec(curve))?;
        Ok(SpanFit {
            alpha: coef.as_slice()[..l].to_vec(),
            beta: coef[l],
            max_residual,
        })
    }

    /// Fits the segmentized surface of two continuous fields onto the
    /// tensor-product family `B_i(z_e) C_j(z_f)`, `i = 0..l`, `j = 0..kappa`.
    ///
    /// The family is linearly dependent; the fit uses the identifiable subset
    /// that drops `B_l` and `C_kappa` (each equals 1 minus the others), so the
    /// reported cross coefficients are zero exactly when the surface is
    /// additive in `z_e` and `z_f`. Dropped coefficients are reported as 0.
    pub fn fit_pairwise_span(&self, segment: &RawRecord, fe: usize, ff: usize) -> Result<PairwiseSpanFit> {
        if fe == ff {
            return Err(Error::invalid("pairwise span needs two distinct fields"));
        }
        let (te, be) = continuous_field(self, fe)?;
        let (tf, bf) = continuous_field(self, ff)?;
        let (l, kappa) = (be.num_functions(), bf.num_functions());
        let ge = raw_grid(te, SAMPLES_PER_FUNCTION * l + 1)?;
        let gf = raw_grid(tf, SAMPLES_PER_FUNCTION * kappa + 1)?;
        let surface = self.segmentized_surface(segment, (fe, &ge), (ff, &gf))?;

        let ve: Vec<Vec<f64>> = ge.iter().map(|&z| be.eval(te.apply(z)?)).collect::<Result<_>>()?;
        let vf: Vec<Vec<f64>> = gf.iter().map(|&z| bf.eval(tf.apply(z)?)).collect::<Result<_>>()?;

        // columns: (i, j) for i in 0..l, j in 0..kappa with index 0 = constant
        let cols: Vec<(usize, usize)> = (0..l)
            .flat_map(|i| (0..kappa).map(move |j| (i, j)))
            .collect();
        let basis_value = |v: &[f64], i: usize| if i == 0 { 1.0 } else { v[i - 1] };
        let mut design = DMatrix::zeros(ge.len() * gf.len(), cols.len());
        for (a, e_vals) in ve.iter().enumerate() {
            for (b, f_vals) in vf.iter().enumerate() {
                let r = a * gf.len() + b;
                for (c, &(i, j)) in cols.iter().enumerate() {
                    design[(r, c)] = basis_value(e_vals, i) * basis_value(f_vals, j);
                }
            }
        }
        let (coef, max_residual) = least_squares(&design, &DVector::from_vec(surface))?;
        let (rows, ncols) = (l + 1, kappa + 1);
        let mut alpha = vec![0.0; rows * ncols];
        let mut beta = 0.0;
        for (c, &(i, j)) in cols.iter().enumerate() {
            if i == 0 && j == 0 {
                beta = coef[c];
            } else {
                alpha[i * ncols + j] = coef[c];
            }
        }
        Ok(PairwiseSpanFit {
            alpha,
            rows,
            cols: ncols,
            beta,
            max_residual,
        })
    }
}
