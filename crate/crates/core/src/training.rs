//! Mini-batch stochastic training and evaluation.
//!
//! Gradients of a batch are accumulated into a dense buffer (split across
//! worker threads when `workers > 1`) and applied once per batch, touching
//! only the parameters that appear in the batch. Regression targets can be
//! standardized; the scale is stored in the model and all reported losses
//! for such models are on the standardized scale.

use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fm::{GradBuffer, ModelParams, ModelSpec, TargetScale};
use crate::schema::{DatasetSchema, EncodedRow, LabelKind};

/// Predicted probabilities are clamped to `[P_MIN, 1 - P_MIN]` before logs.
pub const P_MIN: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    Logloss,
    Squared,
}

impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logloss" => Ok(Loss::Logloss),
            "squared" => Ok(Loss::Squared),
            _ => Err(Error::Config(format!("unknown loss `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adagrad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: Loss,
    pub optimizer: Optimizer,
    pub step_size: f64,
    pub adagrad_epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    /// Fraction of the rows held out by [`train`] for model selection.
    pub holdout_fraction: f64,
    pub shuffle: bool,
    /// Return the parameters of the epoch with the lowest holdout loss
    /// instead of the last epoch's.
    pub keep_best: bool,
    /// Standardize real-valued targets before training.
    pub standardize_targets: bool,
    /// Threads computing batch gradients. Results are bit-reproducible for a
    /// fixed worker count but differ in rounding between counts.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: Loss::Logloss,
            optimizer: Optimizer::Adagrad,
            step_size: 0.05,
            adagrad_epsilon: 1e-8,
            batch_size: 64,
            epochs: 10,
            l2: 0.0,
            seed: 0,
            holdout_fraction: 0.2,
            shuffle: true,
            keep_best: true,
            standardize_targets: true,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be positive");
        }
        if !(self.adagrad_epsilon > 0.0) {
            return bad("adagrad_epsilon must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be non-negative");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must lie in [0, 1)");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        Ok(())
    }
}

/// One line of training progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub holdout_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean of the selected loss.
    pub loss: f64,
    /// Present for logloss evaluations.
    pub cross_entropy: Option<f64>,
    /// Root mean squared error of the linked prediction.
    pub rmse: f64,
    pub sample_count: usize,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Returned model on the training rows, with the epoch history.
    pub train: Metrics,
    pub holdout: Option<Metrics>,
    /// 1-based epoch whose parameters were returned.
    pub selected_epoch: usize,
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Label on the scale the model is trained on.
fn working_label(model: &ModelParams, y: f64) -> f64 {
    model.target().map_or(y, |t| t.standardize(y))
}

/// Prediction through the loss's link: probability for logloss, raw score
/// (standardized scale) for squared loss.
pub fn link(loss: Loss, score: f64) -> f64 {
    match loss {
        Loss::Logloss => sigmoid(score),
        Loss::Squared => score,
    }
}

/// Prediction on the original label scale.
pub fn predict(model: &ModelParams, row: &EncodedRow, loss: Loss) -> Result<f64> {
    let p = link(loss, model.score(row)?);
    Ok(match (loss, model.target()) {
        (Loss::Squared, Some(t)) => t.restore(p),
        _ => p,
    })
}

/// Loss value and its derivative with respect to the score.
fn loss_and_grad(loss: Loss, score: f64, y: f64) -> (f64, f64) {
    match loss {
        Loss::Logloss => {
            let p = sigmoid(score);
            let pc = p.clamp(P_MIN, 1.0 - P_MIN);
            (-(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln()), p - y)
        }
        Loss::Squared => {
            let r = score - y;
            (r * r, 2.0 * r)
        }
    }
}

pub fn evaluate(model: &ModelParams, rows: &[EncodedRow], loss: Loss) -> Result<Metrics> {
    if rows.is_empty() {
        return Err(Error::Data("cannot evaluate on zero rows".into()));
    }
    let (mut total, mut sq) = (0.0, 0.0);
    for row in rows {
        let s = model.score(row)?;
        let y = working_label(model, row.label);
        total += loss_and_grad(loss, s, y).0;
        sq += (link(loss, s) - y).powi(2);
    }
    let n = rows.len() as f64;
    let mean = total / n;
    Ok(Metrics {
        loss: mean,
        cross_entropy: (loss == Loss::Logloss).then_some(mean),
        rmse: (sq / n).sqrt(),
        sample_count: rows.len(),
        history: Vec::new(),
    })
}

/// Deterministic split into `(train, holdout)` row indices.
pub fn split_holdout(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    idx.shuffle(&mut rng);
    let h = ((n as f64) * fraction).round() as usize;
    let h = h.min(n.saturating_sub(1));
    let mut holdout = idx[..h].to_vec();
    let mut train = idx[h..].to_vec();
    holdout.sort_unstable();
    train.sort_unstable();
    (train, holdout)
}

/// Initializes a model from `spec` and trains it, holding out
/// `config.holdout_fraction` of the rows for model selection.
pub fn train(
    config: &TrainConfig,
    schema: DatasetSchema,
    spec: &ModelSpec,
    rows: &[EncodedRow],
) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    let model = ModelParams::new(schema, spec, config.seed)?;
    let (tr, ho) = split_holdout(rows.len(), config.holdout_fraction, config.seed);
    let train_rows: Vec<EncodedRow> = tr.iter().map(|&i| rows[i].clone()).collect();
    let holdout_rows: Vec<EncodedRow> = ho.iter().map(|&i| rows[i].clone()).collect();
    Trainer::new(config)?.fit(model, &train_rows, &holdout_rows)
}

/// Per-parameter optimizer state.
struct OptState {
    bias: f64,
    linear: Vec<f64>,
    embeddings: Vec<f64>,
    interaction: Vec<f64>,
}

pub struct Trainer<'a> {
    config: TrainConfig,
    progress: Option<&'a mut dyn Write>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            config: config.clone(),
            progress: None,
        })
    }

    /// Writes one JSON record per epoch to `out`.
    pub fn with_progress(mut self, out: &'a mut dyn Write) -> Self {
        self.progress = Some(out);
        self
    }

    /// Trains `model` in place on `train_rows`; `holdout` only feeds the
    /// reported losses and, with `keep_best`, the choice of epoch.
    pub fn fit(
        &mut self,
        mut model: ModelParams,
        train_rows: &[EncodedRow],
        holdout: &[EncodedRow],
    ) -> Result<(ModelParams, TrainReport)> {
        let cfg = self.config.clone();
        if train_rows.is_empty() {
            return Err(Error::Data("no training rows".into()));
        }
        check_labels(model.schema(), cfg.loss, train_rows.iter().chain(holdout))?;
        let standardize = cfg.standardize_targets && model.schema().label_kind == LabelKind::Real;
        model.set_target(if standardize {
            let labels: Vec<f64> = train_rows.iter().map(|r| r.label).collect();
            Some(TargetScale::fit(&labels))
        } else {
            None
        });

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        let mut state = OptState {
            bias: 0.0,
            linear: vec![0.0; model.linear().len()],
            embeddings: vec![0.0; model.embeddings().len()],
            interaction: vec![0.0; model.interaction().params().len()],
        };
        let mut order: Vec<usize> = (0..train_rows.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let mut buf = GradBuffer::for_model(&model);
        let mut history = Vec::with_capacity(cfg.epochs);
        let mut best: Option<(f64, usize, ModelParams)> = None;

        for epoch in 1..=cfg.epochs {
            if cfg.shuffle {
                order.shuffle(&mut rng);
            }
            for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
                buf.clear(&model);
                let batch_loss = if cfg.workers > 1 {
                    parallel_batch(&pool, &model, train_rows, chunk, cfg.loss, &mut buf)?
                } else {
                    accumulate(&model, train_rows, chunk, cfg.loss, &mut buf)?
                };
                if !batch_loss.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite loss in epoch {epoch}, batch {b} (rows {:?})",
                        &chunk[..chunk.len().min(8)]
                    )));
                }
                buf.scale(&model, 1.0 / chunk.len() as f64);
                apply(&cfg, &mut model, &buf, &mut state);
            }

            let train_loss = evaluate(&model, train_rows, cfg.loss)?.loss;
            if !train_loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite training loss after epoch {epoch}")));
            }
            let holdout_loss = if holdout.is_empty() {
                None
            } else {
                Some(evaluate(&model, holdout, cfg.loss)?.loss)
            };
            let rec = EpochRecord {
                epoch,
                train_loss,
                holdout_loss,
            };
            if let Some(out) = self.progress.as_mut() {
                let line = serde_json::to_string(&rec)?;
                writeln!(out, "{line}").map_err(|e| Error::io("progress output", e))?;
            }
            log::debug!("epoch {epoch}: train {train_loss:.6} holdout {holdout_loss:?}");
            history.push(rec);
            if cfg.keep_best {
                if let Some(h) = holdout_loss {
                    if best.as_ref().is_none_or(|(b, _, _)| h < *b) {
                        best = Some((h, epoch, model.clone()));
                    }
                }
            }
        }

        let (selected_epoch, model) = match best {
            Some((_, e, m)) => (e, m),
            None => (cfg.epochs, model),
        };
        let mut train_metrics = evaluate(&model, train_rows, cfg.loss)?;
        train_metrics.history = history;
        let holdout = if holdout.is_empty() {
            None
        } else {
            Some(evaluate(&model, holdout, cfg.loss)?)
        };
        Ok((
            model,
            TrainReport {
                train: train_metrics,
                holdout,
                selected_epoch,
            },
        ))
    }
}

fn check_labels<'r>(
    schema: &DatasetSchema,
    loss: Loss,
    rows: impl Iterator<Item = &'r EncodedRow>,
) -> Result<()> {
    for (i, r) in rows.enumerate() {
        if !r.label.is_finite() {
            return Err(Error::Data(format!("row {i}: non-finite label")));
        }
        let binary = r.label == 0.0 || r.label == 1.0;
        if schema.label_kind == LabelKind::Binary && !binary {
            return Err(Error::Data(format!("row {i}: label {} is not 0/1", r.label)));
        }
        if loss == Loss::Logloss && !(0.0..=1.0).contains(&r.label) {
            return Err(Error::Config(format!(
                "logloss needs labels in [0, 1]; row {i} has {}",
                r.label
            )));
        }
    }
    Ok(())
}

/// Sums per-row gradients of `chunk` into `buf`; returns the summed loss.
fn accumulate(
    model: &ModelParams,
    rows: &[EncodedRow],
    chunk: &[usize],
    loss: Loss,
    buf: &mut GradBuffer,
) -> Result<f64> {
    let mut total = 0.0;
    for &i in chunk {
        let row = &rows[i];
        let (s, trace) = model.forward(row)?;
        let (l, d) = loss_and_grad(loss, s, working_label(model, row.label));
        total += l;
        model.backward_into(row, &trace, d, buf)?;
    }
    Ok(total)
}

fn parallel_batch(
    pool: &rayon::ThreadPool,
    model: &ModelParams,
    rows: &[EncodedRow],
    chunk: &[usize],
    loss: Loss,
    buf: &mut GradBuffer,
) -> Result<f64> {
    use rayon::prelude::*;
    let per = chunk.len().div_ceil(pool.current_num_threads());
    let parts: Vec<Result<(f64, GradBuffer)>> = pool.install(|| {
        chunk
            .par_chunks(per.max(1))
            .map(|c| {
                let mut b = GradBuffer::for_model(model);
                let l = accumulate(model, rows, c, loss, &mut b)?;
                Ok((l, b))
            })
            .collect()
    });
    // merged in chunk order so a fixed worker count is reproducible
    let mut total = 0.0;
    for part in parts {
        let (l, b) = part?;
        total += l;
        buf.absorb(model, &b);
    }
    Ok(total)
}

fn step(cfg: &TrainConfig, p: &mut f64, acc: &mut f64, g: f64) {
    match cfg.optimizer {
        Optimizer::Sgd => *p -= cfg.step_size * g,
        Optimizer::Adagrad => {
            *acc += g * g;
            *p -= cfg.step_size * g / (acc.sqrt() + cfg.adagrad_epsilon);
        }
    }
}

/// Applies the mean batch gradient in `buf` to the touched parameters. L2 is
/// applied lazily, to touched rows only, and never to the bias.
fn apply(cfg: &TrainConfig, model: &mut ModelParams, buf: &GradBuffer, st: &mut OptState) {
    let rows: Vec<(usize, usize, usize)> = buf
        .touched
        .iter()
        .map(|&i| {
            let field = model.schema().field_of(i).expect("feature in range").field_id;
            (i, model.row_offset(field, i), model.interaction().dim(field))
        })
        .collect();

    let mut bias = model.bias();
    step(cfg, &mut bias, &mut st.bias, buf.bias);
    model.set_bias(bias);

    let linear = model.linear_mut();
    for &(i, _, _) in &rows {
        let g = buf.linear[i] + cfg.l2 * linear[i];
        step(cfg, &mut linear[i], &mut st.linear[i], g);
    }
    let emb = model.embeddings_mut();
    for &(_, off, k) in &rows {
        for j in off..off + k {
            let g = buf.embeddings[j] + cfg.l2 * emb[j];
            step(cfg, &mut emb[j], &mut st.embeddings[j], g);
        }
    }
    if buf.interaction_touched {
        let params = model.interaction_mut().params_mut();
        for (j, p) in params.iter_mut().enumerate() {
            let g = buf.interaction[j] + cfg.l2 * *p;
            step(cfg, p, &mut st.interaction[j], g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fm::{InteractionSpec, Variant};
    use crate::schema::{Entry, FieldSchema};

    fn one_field_schema(kind: LabelKind) -> DatasetSchema {
        DatasetSchema::from_fields(vec![FieldSchema::categorical("c", &["a"], false)], kind, "y").unwrap()
    }

    fn row(label: f64) -> EncodedRow {
        EncodedRow {
            entries: vec![Entry { index: 0, value: 1.0, field: 0 }],
            label,
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for c in [
            TrainConfig { step_size: 0.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { l2: -1.0, ..Default::default() },
            TrainConfig { holdout_fraction: 1.0, ..Default::default() },
        ] {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
        let parsed: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "optimizer": "sgd"}"#).unwrap();
        assert_eq!(parsed.epochs, 3);
        assert_eq!(parsed.optimizer, Optimizer::Sgd);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
    }

    #[test]
    fn half_probability_gives_ln2() {
        let m = ModelParams::zeros(one_field_schema(LabelKind::Binary), InteractionSpec::fm(1, 2)).unwrap();
        let rows = vec![row(0.0), row(1.0), row(1.0)];
        let met = evaluate(&m, &rows, Loss::Logloss).unwrap();
        assert!((met.cross_entropy.unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(met.sample_count, 3);
    }

    #[test]
    fn perfect_squared_predictions() {
        let mut m = ModelParams::zeros(one_field_schema(LabelKind::Real), InteractionSpec::fm(1, 2)).unwrap();
        m.linear_mut()[0] = 2.5;
        let met = evaluate(&m, &[row(2.5), row(2.5)], Loss::Squared).unwrap();
        assert_eq!(met.rmse, 0.0);
        assert_eq!(met.loss, 0.0);
        assert!(met.cross_entropy.is_none());
    }

    #[test]
    fn clamping_keeps_loss_finite() {
        let mut m = ModelParams::zeros(one_field_schema(LabelKind::Binary), InteractionSpec::fm(1, 2)).unwrap();
        m.set_bias(1e4);
        let met = evaluate(&m, &[row(0.0)], Loss::Logloss).unwrap();
        assert!((met.loss + (P_MIN).ln()).abs() < 1e-9);
    }

    #[test]
    fn empty_evaluation_rejected() {
        let m = ModelParams::zeros(one_field_schema(LabelKind::Binary), InteractionSpec::fm(1, 2)).unwrap();
        assert!(matches!(evaluate(&m, &[], Loss::Logloss), Err(Error::Data(_))));
    }

    #[test]
    fn holdout_split_is_deterministic_partition() {
        let (a, b) = split_holdout(100, 0.2, 9);
        assert_eq!((a.len(), b.len()), (80, 20));
        assert_eq!(split_holdout(100, 0.2, 9), (a.clone(), b.clone()));
        let mut all: Vec<usize> = a.into_iter().chain(b).collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(split_holdout(1, 0.5, 0).1.is_empty());
    }

    #[test]
    fn non_binary_labels_rejected() {
        let schema = one_field_schema(LabelKind::Binary);
        let spec = ModelSpec::new(Variant::Fm, 2);
        let err = train(&TrainConfig::default(), schema, &spec, &[row(0.0), row(2.0)]);
        assert!(matches!(err, Err(Error::Data(_))));
    }

    #[test]
    fn diverging_training_names_the_batch() {
        let schema = one_field_schema(LabelKind::Real);
        let cfg = TrainConfig {
            loss: Loss::Squared,
            optimizer: Optimizer::Sgd,
            step_size: 1e3,
            standardize_targets: false,
            holdout_fraction: 0.0,
            epochs: 50,
            batch_size: 1,
            ..Default::default()
        };
        let spec = ModelSpec::new(Variant::Fm, 1);
        let rows = vec![row(1.0), row(-1.0)];
        match train(&cfg, schema, &spec, &rows) {
            Err(Error::Numerical(msg)) => assert!(msg.contains("batch"), "{msg}"),
            other => panic!("expected a numerical failure, got {other:?}"),
        }
    }
}
