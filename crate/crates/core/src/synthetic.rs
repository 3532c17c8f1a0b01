//! Toy CTR data set and the bins-vs-splines comparison.
//!
//! Each row has a segment `s in 0..8`, spelled as three binary categorical
//! fields, an integer `z in 0..=40` drawn from a Beta-Binomial(40, 0.9, 1.2)
//! law, and a click label drawn with probability `p_s(z)`. The ground-truth
//! curves are smooth parametric families declared in [`CurveSet`].

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fm::{ModelParams, ModelSpec, Variant};
use crate::schema::{DatasetSchema, EncodedRow, FieldSchema, LabelKind, RawRecord, RawValue};
use crate::spline_basis::SplineBasis;
use crate::training::{evaluate, sigmoid, Loss, TrainConfig, Trainer};
use crate::transforms::Transform;

pub const NUM_SEGMENTS: usize = 8;
pub const Z_MAX: u32 = 40;
pub const BETA_ALPHA: f64 = 0.9;
pub const BETA_BETA: f64 = 1.2;

/// A smooth click-probability curve over `z in [0, 40]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Curve {
    /// `lo + (hi - lo) * sigmoid((z - center) / width)`; a negative width
    /// makes a falling ramp.
    Logistic { lo: f64, hi: f64, center: f64, width: f64 },
    /// `base + height * exp(-(z - center)^2 / (2 width^2))`.
    Bump { base: f64, height: f64, center: f64, width: f64 },
    /// Straight ramp from `lo` at 0 to `hi` at 40 plus a sinusoid.
    Wave { lo: f64, hi: f64, amplitude: f64, period: f64, phase: f64 },
}

impl Curve {
    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            Curve::Logistic { lo, hi, center, width } => lo + (hi - lo) * sigmoid((z - center) / width),
            Curve::Bump { base, height, center, width } => {
                base + height * (-(z - center).powi(2) / (2.0 * width * width)).exp()
            }
            Curve::Wave { lo, hi, amplitude, period, phase } => {
                lo + (hi - lo) * z / f64::from(Z_MAX) + amplitude * (2.0 * PI * z / period + phase).sin()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSet {
    pub curves: Vec<Curve>,
}

impl Default for CurveSet {
    /// Ramps, bumps and gentle oscillations, all inside `(0.05, 0.75)`.
    fn default() -> Self {
        use Curve::*;
        CurveSet {
            curves: vec![
                Logistic { lo: 0.08, hi: 0.55, center: 14.0, width: 3.0 },
                Logistic { lo: 0.10, hi: 0.65, center: 22.0, width: -4.0 },
                Bump { base: 0.10, height: 0.50, center: 9.0, width: 4.0 },
                Bump { base: 0.15, height: 0.40, center: 27.0, width: 5.0 },
                Wave { lo: 0.15, hi: 0.45, amplitude: 0.12, period: 16.0, phase: 0.0 },
                Logistic { lo: 0.06, hi: 0.45, center: 6.0, width: 1.5 },
                Bump { base: 0.40, height: -0.30, center: 18.0, width: 6.0 },
                Wave { lo: 0.30, hi: 0.30, amplitude: 0.15, period: 24.0, phase: 1.0 },
            ],
        }
    }
}

impl CurveSet {
    /// Checks there are 8 curves with values strictly inside `(0, 1)` on a
    /// fine grid over `[0, 40]`.
    pub fn validate(&self) -> Result<()> {
        if self.curves.len() != NUM_SEGMENTS {
            return Err(Error::Config(format!(
                "need {NUM_SEGMENTS} curves, got {}",
                self.curves.len()
            )));
        }
        for (s, c) in self.curves.iter().enumerate() {
            for j in 0..=4000 {
                let z = f64::from(Z_MAX) * j as f64 / 4000.0;
                let p = c.eval(z);
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::Config(format!("curve {s} leaves (0, 1) at z = {z}: {p}")));
                }
            }
        }
        Ok(())
    }

    pub fn prob(&self, segment: usize, z: f64) -> f64 {
        self.curves[segment].eval(z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRow {
    pub segment: u8,
    pub z: u32,
    pub label: f64,
}

impl SyntheticRow {
    pub fn record(&self) -> RawRecord {
        let bit = |b: u8| RawValue::text(((self.segment >> b) & 1).to_string());
        RawRecord {
            values: vec![bit(0), bit(1), bit(2), RawValue::Number(f64::from(self.z))],
            label: self.label,
        }
    }
}

/// SplitMix64 finalizer over a seed and a stream index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn generate(curves: &CurveSet, n: usize, seed: u64) -> Result<Vec<SyntheticRow>> {
    curves.validate()?;
    if n == 0 {
        return Err(Error::Config("row count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = Beta::new(BETA_ALPHA, BETA_BETA).map_err(|e| Error::invalid(e.to_string()))?;
    Ok((0..n)
        .map(|_| {
            let segment = rng.random_range(0..NUM_SEGMENTS) as u8;
            let q = beta.sample(&mut rng);
            let z = Binomial::new(u64::from(Z_MAX), q)
                .expect("beta draws lie in [0, 1]")
                .sample(&mut rng) as u32;
            let p = curves.prob(usize::from(segment), f64::from(z));
            let label = f64::from(rng.random_bool(p));
            SyntheticRow { segment, z, label }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Bins,
    Splines,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Bins => "bins",
            Strategy::Splines => "splines",
        }
    }
}

/// Schema of the toy data set with `z` binned uniformly or spline-encoded
/// after min-max scaling to `[0, 1]`. `intervals` counts bins or spline
/// sub-intervals.
pub fn synthetic_schema(strategy: Strategy, intervals: usize, degree: usize) -> Result<DatasetSchema> {
    if intervals == 0 {
        return Err(Error::Config("interval count must be at least 1".into()));
    }
    let zmax = f64::from(Z_MAX);
    let z = match strategy {
        Strategy::Bins => FieldSchema::binned(
            "z",
            (0..=intervals).map(|j| zmax * j as f64 / intervals as f64).collect(),
        ),
        Strategy::Splines => FieldSchema::continuous(
            "z",
            Transform::min_max(0.0, zmax)?,
            SplineBasis::build_uniform(intervals + degree, degree)?,
        ),
    };
    let bit = |name: &str| FieldSchema::categorical(name, &["0", "1"], false);
    DatasetSchema::from_fields(vec![bit("s0"), bit("s1"), bit("s2"), z], LabelKind::Binary, "y")
}

pub fn encode(schema: &DatasetSchema, rows: &[SyntheticRow]) -> Result<Vec<EncodedRow>> {
    rows.iter().map(|r| schema.encode_row(&r.record())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparisonConfig {
    pub curves: CurveSet,
    pub train_rows: usize,
    pub test_rows: usize,
    pub interval_counts: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
    pub degree: usize,
    pub model: ModelSpec,
    pub train: TrainConfig,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        ComparisonConfig {
            curves: CurveSet::default(),
            train_rows: 25_000,
            test_rows: 75_000,
            interval_counts: vec![5, 6, 12, 120],
            repeats: 15,
            seed: 0,
            degree: 3,
            model: ModelSpec::new(Variant::Ffm, 4),
            train: TrainConfig {
                epochs: 12,
                step_size: 0.05,
                batch_size: 64,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub strategy: Strategy,
    pub intervals: usize,
    pub repeat: usize,
    pub seed: u64,
    pub test_loss: f64,
    pub selected_epoch: usize,
}

/// Mean and standard error of the test loss per strategy and interval count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: Strategy,
    pub intervals: usize,
    pub mean: f64,
    pub std_err: f64,
    pub repeats: usize,
}

const TRAIN_STREAM: u64 = 0x74_7261_696e;
const TEST_STREAM: u64 = 0x7465_7374;
const REPEAT_STREAM: u64 = 0x7265_7065_6174;

/// Train and test sets for a comparison seed.
pub fn comparison_data(cfg: &ComparisonConfig) -> Result<(Vec<SyntheticRow>, Vec<SyntheticRow>)> {
    Ok((
        generate(&cfg.curves, cfg.train_rows, derive_seed(cfg.seed, TRAIN_STREAM))?,
        generate(&cfg.curves, cfg.test_rows, derive_seed(cfg.seed, TEST_STREAM))?,
    ))
}

/// Seed of training repeat `r`, shared by every strategy and interval count.
pub fn repeat_seed(seed: u64, r: usize) -> u64 {
    derive_seed(derive_seed(seed, REPEAT_STREAM), r as u64)
}

/// Trains one cell and returns the fitted model and its test loss.
pub fn run_cell(
    cfg: &ComparisonConfig,
    train_rows: &[SyntheticRow],
    test_rows: &[SyntheticRow],
    strategy: Strategy,
    intervals: usize,
    repeat: usize,
) -> Result<(ModelParams, ResultRow)> {
    let cell = format!("{} / {intervals} / repeat {repeat}", strategy.name());
    let annotate = |e: Error| match e {
        Error::Numerical(m) => Error::Numerical(format!("{cell}: {m}")),
        Error::Data(m) => Error::Data(format!("{cell}: {m}")),
        Error::Config(m) => Error::Config(format!("{cell}: {m}")),
        other => other,
    };
    let seed = repeat_seed(cfg.seed, repeat);
    let schema = synthetic_schema(strategy, intervals, cfg.degree).map_err(annotate)?;
    let train = encode(&schema, train_rows)?;
    let test = encode(&schema, test_rows)?;
    let tcfg = TrainConfig {
        loss: Loss::Logloss,
        seed,
        workers: 1,
        ..cfg.train.clone()
    };
    let (tr_idx, ho_idx) = crate::training::split_holdout(train.len(), tcfg.holdout_fraction, seed);
    let tr: Vec<EncodedRow> = tr_idx.iter().map(|&i| train[i].clone()).collect();
    let ho: Vec<EncodedRow> = ho_idx.iter().map(|&i| train[i].clone()).collect();
    let init = ModelParams::new(schema, &cfg.model, seed).map_err(annotate)?;
    let (model, report) = Trainer::new(&tcfg)
        .and_then(|mut t| t.fit(init, &tr, &ho))
        .map_err(annotate)?;
    let test_loss = evaluate(&model, &test, Loss::Logloss).map_err(annotate)?.loss;
    Ok((
        model,
        ResultRow {
            strategy,
            intervals,
            repeat,
            seed,
            test_loss,
            selected_epoch: report.selected_epoch,
        },
    ))
}

/// Every strategy x interval count x repeat, in parallel; rows come back in
/// that order regardless of scheduling.
pub fn run_comparison(cfg: &ComparisonConfig) -> Result<Vec<ResultRow>> {
    if cfg.repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    cfg.train.validate()?;
    let (train_rows, test_rows) = comparison_data(cfg)?;
    let cells: Vec<(Strategy, usize, usize)> = [Strategy::Bins, Strategy::Splines]
        .into_iter()
        .flat_map(|s| cfg.interval_counts.iter().map(move |&n| (s, n)))
        .flat_map(|(s, n)| (0..cfg.repeats).map(move |r| (s, n, r)))
        .collect();
    cells
        .par_iter()
        .map(|&(s, n, r)| run_cell(cfg, &train_rows, &test_rows, s, n, r).map(|(_, row)| row))
        .collect()
}

pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Strategy, usize)> = rows.iter().map(|r| (r.strategy, r.intervals)).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.into_iter()
        .map(|(strategy, intervals)| {
            let losses: Vec<f64> = rows
                .iter()
                .filter(|r| r.strategy == strategy && r.intervals == intervals)
                .map(|r| r.test_loss)
                .collect();
            let n = losses.len() as f64;
            let mean = losses.iter().sum::<f64>() / n;
            let var = if losses.len() > 1 {
                losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            SummaryRow {
                strategy,
                intervals,
                mean,
                std_err: (var / n).sqrt(),
                repeats: losses.len(),
            }
        })
        .collect()
}

pub fn mean_loss(summary: &[SummaryRow], strategy: Strategy, intervals: usize) -> Option<f64> {
    summary
        .iter()
        .find(|s| s.strategy == strategy && s.intervals == intervals)
        .map(|s| s.mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub segment: usize,
    pub z: f64,
    pub predicted: f64,
    pub truth: f64,
}

/// Learned click probability per segment over `grid`, next to the truth.
pub fn emit_curves(model: &ModelParams, curves: &CurveSet, grid: &[f64]) -> Result<Vec<CurvePoint>> {
    let names: Vec<&str> = model.schema().fields.iter().map(|f| f.name.as_str()).collect();
    if names != ["s0", "s1", "s2", "z"] {
        return Err(Error::Config(format!("model does not use the synthetic schema: {names:?}")));
    }
    let mut out = Vec::with_capacity(NUM_SEGMENTS * grid.len());
    for s in 0..NUM_SEGMENTS {
        let seg = SyntheticRow { segment: s as u8, z: 0, label: 0.0 }.record();
        let scores = model.segmentized_curve(&seg, 3, grid)?;
        for (&z, score) in grid.iter().zip(scores) {
            out.push(CurvePoint {
                segment: s,
                z,
                predicted: sigmoid(score),
                truth: curves.prob(s, z),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_curves_are_valid() {
        CurveSet::default().validate().unwrap();
        let mut bad = CurveSet::default();
        bad.curves[0] = Curve::Bump { base: 0.5, height: 0.6, center: 20.0, width: 3.0 };
        assert!(bad.validate().is_err());
        bad.curves.pop();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn segments_spell_three_bits() {
        let r = SyntheticRow { segment: 6, z: 7, label: 1.0 };
        let rec = r.record();
        assert_eq!(rec.values[0], RawValue::text("0"));
        assert_eq!(rec.values[1], RawValue::text("1"));
        assert_eq!(rec.values[2], RawValue::text("1"));
        assert_eq!(rec.values[3], RawValue::Number(7.0));
    }

    #[test]
    fn schemas_have_expected_widths() {
        let b = synthetic_schema(Strategy::Bins, 12, 3).unwrap();
        assert_eq!(b.total_features, 6 + 12);
        let s = synthetic_schema(Strategy::Splines, 6, 3).unwrap();
        assert_eq!(s.total_features, 6 + 9);
        assert!(synthetic_schema(Strategy::Bins, 0, 3).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let a: Vec<u64> = (0..100).map(|r| repeat_seed(1, r)).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(b.len(), 100);
        assert_ne!(derive_seed(0, 0), derive_seed(1, 0));
    }

    #[test]
    fn curve_families_evaluate() {
        let l = Curve::Logistic { lo: 0.1, hi: 0.5, center: 10.0, width: 2.0 };
        assert!((l.eval(10.0) - 0.3).abs() < 1e-15);
        let b = Curve::Bump { base: 0.1, height: 0.2, center: 5.0, width: 1.0 };
        assert!((b.eval(5.0) - 0.3).abs() < 1e-15);
        let w = Curve::Wave { lo: 0.2, hi: 0.6, amplitude: 0.1, period: 40.0, phase: 0.0 };
        assert!((w.eval(10.0) - 0.4).abs() < 1e-15);
    }
}
