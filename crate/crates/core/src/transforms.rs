//! Monotone maps from a raw numerical domain onto `[0, 1]`.
//!
//! The default is an empirical quantile transform, which roughly follows the
//! field's CDF so that no part of the unit interval is starved of data. Affine
//! min-max and identity maps cover fields that are already bounded.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RESOLUTION: usize = 1000;
pub const DEFAULT_MAX_FIT_SAMPLES: usize = 100_000;

/// A monotone non-decreasing map onto `[0, 1]` with a right inverse.
pub trait MonotoneTransform {
    /// Maps a finite raw value into `[0, 1]`, clamping outside the fitted range.
    fn apply(&self, z: f64) -> Result<f64>;

    /// Raw value for a level `u` in `[0, 1]`.
    fn inverse(&self, u: f64) -> Result<f64>;
}

fn check_finite(z: f64) -> Result<()> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("non-finite value {z}")))
    }
}

fn check_level(u: f64) -> Result<()> {
    if (0.0..=1.0).contains(&u) {
        Ok(())
    } else {
        Err(Error::invalid(format!("level {u} outside [0, 1]")))
    }
}

/// Piecewise-linear empirical CDF through `(reference_points[j], j / R)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QuantileDoc", into = "QuantileDoc")]
pub struct QuantileTransform {
    reference_points: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuantileDoc {
    reference_points: Vec<f64>,
}

impl TryFrom<QuantileDoc> for QuantileTransform {
    type Error = Error;

    fn try_from(doc: QuantileDoc) -> Result<Self> {
        QuantileTransform::from_reference_points(doc.reference_points)
    }
}

impl From<QuantileTransform> for QuantileDoc {
    fn from(t: QuantileTransform) -> Self {
        QuantileDoc {
            reference_points: t.reference_points,
        }
    }
}

/// Linear-interpolation quantile of sorted data at level `q`.
pub(crate) fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = (pos.floor() as usize).min(n - 2);
    let frac = pos - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Evenly strided deterministic sub-sample of at most `max` values.
pub(crate) fn strided_subsample(values: &[f64], max: usize) -> Vec<f64> {
    if values.len() <= max {
        return values.to_vec();
    }
    let n = values.len();
    (0..max).map(|i| values[i * n / max]).collect()
}

impl QuantileTransform {
    /// Fits quantiles at levels `0, 1/R, ..., 1`. Tied quantiles are merged,
    /// so the effective resolution can be smaller than requested.
    pub fn fit(values: &[f64], resolution: usize) -> Result<Self> {
        Self::fit_subsampled(values, resolution, DEFAULT_MAX_FIT_SAMPLES)
    }

    pub fn fit_subsampled(values: &[f64], resolution: usize, max_samples: usize) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::invalid("quantile resolution must be at least 1"));
        }
        if values.is_empty() {
            return Err(Error::invalid("cannot fit a transform on no values"));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value {bad} in fit data")));
        }
        let mut sample = strided_subsample(values, max_samples.max(2));
        sample.sort_by(f64::total_cmp);
        if sample[0] == sample[sample.len() - 1] {
            return Err(Error::invalid(
                "cannot fit a transform on a constant field",
            ));
        }
        let mut points: Vec<f64> = (0..=resolution)
            .map(|j| sorted_quantile(&sample, j as f64 / resolution as f64))
            .collect();
        points.dedup();
        Self::from_reference_points(points)
    }

    pub fn from_reference_points(reference_points: Vec<f64>) -> Result<Self> {
        if reference_points.len() < 2 {
            return Err(Error::invalid("a quantile transform needs at least 2 reference points"));
        }
        if reference_points.iter().any(|v| !v.is_finite())
            || reference_points.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::invalid(
                "reference points must be finite and strictly increasing",
            ));
        }
        Ok(QuantileTransform { reference_points })
    }

    pub fn reference_points(&self) -> &[f64] {
        &self.reference_points
    }

    /// Effective resolution `R` (number of linear pieces).
    pub fn resolution(&self) -> usize {
        self.reference_points.len() - 1
    }
}

impl MonotoneTransform for QuantileTransform {
    fn apply(&self, z: f64) -> Result<f64> {
        check_finite(z)?;
        let r = &self.reference_points;
        let last = r.len() - 1;
        if z <= r[0] {
            return Ok(0.0);
        }
        if z >= r[last] {
            return Ok(1.0);
        }
        // first index with r[idx] > z; z lies in [r[idx-1], r[idx])
        let idx = r.partition_point(|&p| p <= z);
        let j = idx - 1;
        let frac = (z - r[j]) / (r[j + 1] - r[j]);
        Ok(((j as f64 + frac) / last as f64).clamp(0.0, 1.0))
    }

    fn inverse(&self, u: f64) -> Result<f64> {
        check_level(u)?;
        let r = &self.reference_points;
        let last = r.len() - 1;
        let pos = u * last as f64;
        let j = (pos.floor() as usize).min(last - 1);
        let frac = pos - j as f64;
        if frac == 0.0 {
            return Ok(r[j]);
        }
        Ok(r[j] + frac * (r[j + 1] - r[j]))
    }
}

/// Transform applied to a continuous field before basis evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Transform {
    /// Values are assumed to already lie in `[0, 1]`; out-of-range values clamp.
    Identity,
    /// `(z - lo) / (hi - lo)` clamped to `[0, 1]`.
    MinMax { lo: f64, hi: f64 },
    Quantile(QuantileTransform),
}

impl Transform {
    pub fn min_max(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!("min-max range [{lo}, {hi}] is empty or non-finite")));
        }
        Ok(Transform::MinMax { lo, hi })
    }

    /// Fits a min-max transform to the observed range.
    pub fn fit_min_max(values: &[f64]) -> Result<Self> {
        let (lo, hi) = finite_range(values)?;
        Self::min_max(lo, hi)
    }

    pub fn fit_quantile(values: &[f64], resolution: usize) -> Result<Self> {
        Ok(Transform::Quantile(QuantileTransform::fit(values, resolution)?))
    }

    /// Raw values mapped to 0 and 1.
    pub fn range(&self) -> (f64, f64) {
        match self {
            Transform::Identity => (0.0, 1.0),
            Transform::MinMax { lo, hi } => (*lo, *hi),
            Transform::Quantile(q) => {
                let r = q.reference_points();
                (r[0], r[r.len() - 1])
            }
        }
    }
}

fn finite_range(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("cannot fit a transform on no values"));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        check_finite(v)?;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo == hi {
        return Err(Error::invalid("cannot fit a transform on a constant field"));
    }
    Ok((lo, hi))
}

impl MonotoneTransform for Transform {
    fn apply(&self, z: f64) -> Result<f64> {
        match self {
            Transform::Identity => {
                check_finite(z)?;
                Ok(z.clamp(0.0, 1.0))
            }
            Transform::MinMax { lo, hi } => {
                check_finite(z)?;
                Ok(((z - lo) / (hi - lo)).clamp(0.0, 1.0))
            }
            Transform::Quantile(q) => q.apply(z),
        }
    }

    fn inverse(&self, u: f64) -> Result<f64> {
        match self {
            Transform::Identity => {
                check_level(u)?;
                Ok(u)
            }
            Transform::MinMax { lo, hi } => {
                check_level(u)?;
                Ok(lo + u * (hi - lo))
            }
            Transform::Quantile(q) => q.inverse(u),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn ladder() -> QuantileTransform {
        QuantileTransform::fit(&[1.0, 2.0, 3.0, 4.0, 5.0], 4).unwrap()
    }

    #[test]
    fn ladder_fit_and_apply() {
        let t = ladder();
        assert_eq!(t.reference_points(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(t.apply(3.0).unwrap(), 0.5);
        assert_eq!(t.apply(1.0).unwrap(), 0.0);
        assert_eq!(t.apply(5.0).unwrap(), 1.0);
        assert_eq!(t.apply(2.5).unwrap(), 0.375);
        assert_eq!(t.apply(-100.0).unwrap(), 0.0);
        assert_eq!(t.apply(1e300).unwrap(), 1.0);
    }

    #[test]
    fn ladder_inverse() {
        let t = ladder();
        assert_eq!(t.inverse(0.0).unwrap(), 1.0);
        assert_eq!(t.inverse(0.5).unwrap(), 3.0);
        assert_eq!(t.inverse(1.0).unwrap(), 5.0);
        assert!(t.inverse(1.5).is_err());
        assert!(t.inverse(-0.1).is_err());
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(QuantileTransform::fit(&[7.0, 7.0, 7.0], 4).is_err());
        assert!(QuantileTransform::fit(&[], 4).is_err());
        assert!(QuantileTransform::fit(&[1.0, f64::NAN], 4).is_err());
        assert!(QuantileTransform::fit(&[1.0, 2.0], 0).is_err());
        assert!(ladder().apply(f64::NAN).is_err());
    }

    #[test]
    fn ties_collapse_to_strictly_increasing_points() {
        let values = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0];
        let t = QuantileTransform::fit(&values, 8).unwrap();
        assert!(t.resolution() < 8);
        assert!(t.reference_points().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(t.apply(0.0).unwrap(), 0.0);
        assert_eq!(t.apply(3.0).unwrap(), 1.0);
    }

    fn ks_uniform(mut u: Vec<f64>) -> f64 {
        u.sort_by(f64::total_cmp);
        let n = u.len() as f64;
        u.iter()
            .enumerate()
            .map(|(i, &x)| {
                let lo = x - i as f64 / n;
                let hi = (i + 1) as f64 / n - x;
                lo.max(hi)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn normal_data_maps_to_near_uniform() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let t = QuantileTransform::fit(&xs, 100).unwrap();
        let u: Vec<f64> = xs.iter().map(|&x| t.apply(x).unwrap()).collect();
        let ks = ks_uniform(u);
        assert!(ks < 0.03, "KS statistic {ks}");
    }

    #[test]
    fn grid_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..5_000)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g.exp()
            })
            .collect();
        let t = Transform::fit_quantile(&xs, 1000).unwrap();
        for i in 0..=1000 {
            let u = i as f64 / 1000.0;
            let back = t.apply(t.inverse(u).unwrap()).unwrap();
            assert!((back - u).abs() < 1e-12, "u={u} back={back}");
        }
    }

    #[test]
    fn subsample_bounds_fit_size() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let t = QuantileTransform::fit_subsampled(&xs, 10, 100).unwrap();
        assert_eq!(t.resolution(), 10);
        assert_eq!(t.reference_points()[0], 0.0);
    }

    #[test]
    fn affine_transforms() {
        let t = Transform::min_max(0.0, 40.0).unwrap();
        assert_eq!(t.apply(10.0).unwrap(), 0.25);
        assert_eq!(t.apply(50.0).unwrap(), 1.0);
        assert_eq!(t.inverse(0.5).unwrap(), 20.0);
        assert!(Transform::min_max(1.0, 1.0).is_err());
        assert_eq!(Transform::Identity.apply(-3.0).unwrap(), 0.0);
        assert_eq!(Transform::Identity.inverse(0.3).unwrap(), 0.3);
        assert_eq!(Transform::fit_min_max(&[3.0, -1.0, 2.0]).unwrap().range(), (-1.0, 3.0));
    }

    #[test]
    fn serialization_is_bit_exact() {
        let xs: Vec<f64> = (1..300).map(|i| (i as f64).sqrt() * std::f64::consts::PI).collect();
        let t = Transform::fit_quantile(&xs, 37).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        let back: Transform = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        let bad = r#"{"kind":"quantile","reference_points":[2.0,1.0]}"#;
        assert!(serde_json::from_str::<Transform>(bad).is_err());
    }

    proptest! {
        #[test]
        fn apply_is_monotone_and_bounded(
            mut xs in proptest::collection::vec(-1e6f64..1e6, 2..200),
            a in -2e6f64..2e6,
            b in -2e6f64..2e6,
            res in 1usize..64,
        ) {
            xs.push(xs[0] + 1.0);
            let t = QuantileTransform::fit(&xs, res).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let ua = t.apply(lo).unwrap();
            let ub = t.apply(hi).unwrap();
            prop_assert!((0.0..=1.0).contains(&ua) && (0.0..=1.0).contains(&ub));
            prop_assert!(ua <= ub);
        }

        #[test]
        fn inverse_is_monotone_and_round_trips(
            mut xs in proptest::collection::vec(-1e3f64..1e3, 2..200),
            u1 in 0.0f64..=1.0,
            u2 in 0.0f64..=1.0,
        ) {
            xs.push(xs[0] + 0.5);
            let t = QuantileTransform::fit(&xs, 50).unwrap();
            let (lo, hi) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
            prop_assert!(t.inverse(lo).unwrap() <= t.inverse(hi).unwrap());
            prop_assert!((t.apply(t.inverse(u1).unwrap()).unwrap() - u1).abs() < 1e-12);
        }
    }
}
