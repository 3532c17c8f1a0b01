//! Clamped uniform B-spline bases on the unit interval.
//!
//! A basis of `num_functions` functions of degree `d` has `num_functions - d`
//! equally wide sub-intervals. End knots are repeated `d + 1` times, so the
//! first function is 1 at `z = 0`, the last is 1 at `z = 1`, and the basis is a
//! partition of unity on all of `[0, 1]`.
//!
//! Only the knot layout parameters are serialized; the knot vector is rebuilt
//! on load.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DEGREE: usize = 3;

/// Largest supported degree. Evaluation uses stack buffers of this size + 1.
pub const MAX_DEGREE: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisParams", into = "BasisParams")]
pub struct SplineBasis {
    degree: usize,
    num_functions: usize,
    knots: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BasisParams {
    degree: usize,
    num_functions: usize,
}

impl TryFrom<BasisParams> for SplineBasis {
    type Error = Error;

    fn try_from(p: BasisParams) -> Result<Self> {
        SplineBasis::build_uniform(p.num_functions, p.degree)
    }
}

impl From<SplineBasis> for BasisParams {
    fn from(b: SplineBasis) -> Self {
        BasisParams {
            degree: b.degree,
            num_functions: b.num_functions,
        }
    }
}

/// Non-zero basis values at a point: `values[j]` is `B_{first_index + j}(z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseBasisValues {
    pub first_index: usize,
    len: usize,
    buf: [f64; MAX_DEGREE + 1],
}

impl SparseBasisValues {
    pub fn values(&self) -> &[f64] {
        &self.buf[..self.len]
    }

    /// `(basis index, value)` pairs in increasing index order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        let first = self.first_index;
        self.values().iter().enumerate().map(move |(j, &v)| (first + j, v))
    }

    pub fn scatter(&self, num_functions: usize) -> Vec<f64> {
        let mut dense = vec![0.0; num_functions];
        for (i, v) in self.iter() {
            dense[i] = v;
        }
        dense
    }
}

impl SplineBasis {
    /// Clamped basis with `num_functions - degree` uniform sub-intervals.
    pub fn build_uniform(num_functions: usize, degree: usize) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::invalid(format!(
                "spline degree {degree} exceeds the supported maximum {MAX_DEGREE}"
            )));
        }
        if num_functions < degree + 1 {
            return Err(Error::invalid(format!(
                "a degree-{degree} basis needs at least {} functions, got {num_functions}",
                degree + 1
            )));
        }
        let intervals = num_functions - degree;
        let mut knots = Vec::with_capacity(num_functions + degree + 1);
        knots.extend(std::iter::repeat_n(0.0, degree + 1));
        knots.extend((1..intervals).map(|j| j as f64 / intervals as f64));
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Ok(SplineBasis {
            degree,
            num_functions,
            knots,
        })
    }

    /// Cubic basis with the given number of functions.
    pub fn cubic(num_functions: usize) -> Result<Self> {
        Self::build_uniform(num_functions, DEFAULT_DEGREE)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn num_functions(&self) -> usize {
        self.num_functions
    }

    pub fn num_intervals(&self) -> usize {
        self.num_functions - self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Break-points `0 = a_0 < ... < a_m = 1` (the distinct knots).
    pub fn breakpoints(&self) -> &[f64] {
        &self.knots[self.degree..self.knots.len() - self.degree]
    }

    /// Knot span index `mu` with `knots[mu] <= z < knots[mu + 1]`, the last
    /// non-empty span for `z = 1`.
    fn span(&self, z: f64) -> usize {
        let d = self.degree;
        let last = self.num_functions - 1;
        let m = self.num_intervals();
        let mut mu = (d + (z * m as f64).floor() as usize).min(last);
        while mu < last && self.knots[mu + 1] <= z {
            mu += 1;
        }
        while mu > d && self.knots[mu] > z {
            mu -= 1;
        }
        mu
    }

    /// The `degree + 1` possibly non-zero values at `z`, via the triangular
    /// de Boor scheme. `z` is clamped into `[0, 1]`.
    pub fn eval_sparse(&self, z: f64) -> Result<SparseBasisValues> {
        if !z.is_finite() {
            return Err(Error::invalid(format!("cannot evaluate basis at {z}")));
        }
        let z = z.clamp(0.0, 1.0);
        let d = self.degree;
        let mu = self.span(z);
        let t = &self.knots;

        let mut n = [0.0; MAX_DEGREE + 1];
        let mut left = [0.0; MAX_DEGREE + 1];
        let mut right = [0.0; MAX_DEGREE + 1];
        n[0] = 1.0;
        for j in 1..=d {
            left[j] = z - t[mu + 1 - j];
            right[j] = t[mu + j] - z;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        Ok(SparseBasisValues {
            first_index: mu - d,
            len: d + 1,
            buf: n,
        })
    }

    /// Dense vector `(B_1(z), ..., B_l(z))`.
    pub fn eval(&self, z: f64) -> Result<Vec<f64>> {
        Ok(self.eval_sparse(z)?.scatter(self.num_functions))
    }
}
