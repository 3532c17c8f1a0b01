//! Command-line verbs. Every run writes `manifest.json` into its output
//! directory; `rerun` replays a manifest from its embedded config snapshot.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bin_export::{export_binned, make_boundaries};
use crate::config::RunConfig;
use crate::data::{write_table, RawTable};
use crate::error::{Error, Result};
use crate::fm::{ModelParams, ModelSpec, Variant};
use crate::plot::{Chart, Series};
use crate::schema::{infer_schema, DatasetSchema, EncodedRow, FieldKind, LabelKind, RawRecord, RawValue};
use crate::synthetic::{self, ComparisonConfig, Strategy, SyntheticRow};
use crate::training::{evaluate, sigmoid, split_holdout, Loss, Metrics, TrainConfig, TrainReport, Trainer};

#[derive(Debug, Parser)]
#[command(name = "splinefm", version, about = "Factorization machines with spline-encoded numerical fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Fit a schema and train a model from a config document.
    Train {
        config: PathBuf,
        /// Output directory (default: `[output] dir` of the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a saved model on a data file.
    Eval {
        model: PathBuf,
        data: PathBuf,
        #[arg(long, default_value_t = ',')]
        delimiter: char,
        /// `logloss` or `squared`; defaults from the label kind.
        #[arg(long)]
        loss: Option<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Convert continuous fields of a saved model into bins.
    ExportBins {
        model: PathBuf,
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the synthetic bins-vs-splines comparison.
    Synth {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip writing the generated data sets.
        #[arg(long)]
        no_data: bool,
    },
    /// Segmentized curve of one field with the others fixed.
    Curves {
        model: PathBuf,
        #[arg(long)]
        field: String,
        /// Fixed values as `name=value,...`; unlisted fields are missing.
        #[arg(long, default_value = "")]
        segment: String,
        /// `lo:hi:count`.
        #[arg(long)]
        grid: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Train over a hyperparameter grid and tabulate holdout losses.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat the run recorded in a manifest.
    Rerun {
        manifest: PathBuf,
        /// Write into this directory instead of the recorded one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub bytes: u64,
    /// FNV-1a 64 of the contents, hex.
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    /// Verbatim config document, when the verb takes one.
    pub config: Option<String>,
    /// Directory relative config paths resolve against.
    pub config_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub wall_time_secs: f64,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Where a verb's config came from.
struct Loaded {
    cfg: RunConfig,
    text: String,
    dir: PathBuf,
}

fn load_config(path: &Path) -> Result<Loaded> {
    let (cfg, text) = RunConfig::load(path)?;
    let dir = absolute(path.parent().unwrap_or(Path::new(".")))?;
    Ok(Loaded { cfg, text, dir })
}

fn absolute(p: &Path) -> Result<PathBuf> {
    let p = if p.as_os_str().is_empty() { Path::new(".") } else { p };
    std::path::absolute(p).map_err(|e| Error::io(p, e))
}

struct Run {
    out: PathBuf,
    outputs: Vec<String>,
    inputs: Vec<InputFile>,
    seed: Option<u64>,
}

impl Run {
    fn new(out: PathBuf) -> Result<Self> {
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Run {
            out,
            outputs: Vec::new(),
            inputs: Vec::new(),
            seed: None,
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| Error::io(&p, e))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v)?;
        s.push('\n');
        self.write(name, &s)
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.record(path, &bytes)
    }

    fn record(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in bytes {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self.inputs.push(InputFile {
            path: absolute(path)?,
            bytes: bytes.len() as u64,
            fingerprint: format!("{h:016x}"),
        });
        Ok(())
    }
}

pub fn run(command: Command) -> Result<()> {
    execute(command, None)
}

/// Runs `command`, taking the config from `snapshot` instead of disk when given.
fn execute(command: Command, snapshot: Option<Loaded>) -> Result<()> {
    let started = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let command = absolutize(command)?;
    if let Command::Rerun { manifest, out } = command {
        return rerun(&manifest, out);
    }
    let loaded = match (&snapshot, config_path(&command)) {
        (Some(_), _) => snapshot,
        (None, Some(p)) => Some(load_config(p)?),
        (None, None) => None,
    };
    let out_dir = output_dir(&command, loaded.as_ref())?;
    let mut run = Run::new(out_dir)?;
    // fingerprint the config text actually used, which for a rerun is the snapshot
    if let (Some(p), Some(l)) = (config_path(&command), &loaded) {
        run.record(p, l.text.as_bytes())?;
    }

    match &command {
        Command::Train { .. } => train_verb(loaded.as_ref().expect("config"), &mut run)?,
        Command::Eval {
            model,
            data,
            delimiter,
            loss,
            ..
        } => eval_verb(model, data, *delimiter, loss.as_deref(), &mut run)?,
        Command::ExportBins { model, .. } => export_verb(model, loaded.as_ref().expect("config"), &mut run)?,
        Command::Synth { no_data, .. } => synth_verb(loaded.as_ref().expect("config"), *no_data, &mut run)?,
        Command::Curves {
            model,
            field,
            segment,
            grid,
            ..
        } => curves_verb(model, field, segment, grid, &mut run)?,
        Command::Sweep { .. } => sweep_verb(loaded.as_ref().expect("config"), &mut run)?,
        Command::Rerun { .. } => unreachable!("handled above"),
    }

    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command,
        config: loaded.as_ref().map(|l| l.text.clone()),
        config_dir: loaded.as_ref().map(|l| l.dir.clone()),
        seed: run.seed,
        inputs: run.inputs.clone(),
        outputs: run.outputs.clone(),
        started_unix,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    let mut s = serde_json::to_string_pretty(&manifest)?;
    s.push('\n');
    let p = run.out.join(MANIFEST_FILE);
    fs::write(&p, s).map_err(|e| Error::io(&p, e))
}

fn config_path(c: &Command) -> Option<&Path> {
    match c {
        Command::Train { config, .. }
        | Command::ExportBins { config, .. }
        | Command::Synth { config, .. }
        | Command::Sweep { config, .. } => Some(config),
        _ => None,
    }
}

fn absolutize(c: Command) -> Result<Command> {
    let abs = |p: PathBuf| absolute(&p);
    let opt = |p: Option<PathBuf>| p.map(|p| absolute(&p)).transpose();
    Ok(match c {
        Command::Train { config, out } => Command::Train { config: abs(config)?, out: opt(out)? },
        Command::Eval { model, data, delimiter, loss, out } => Command::Eval {
            model: abs(model)?,
            data: abs(data)?,
            delimiter,
            loss,
            out: abs(out)?,
        },
        Command::ExportBins { model, config, out } => Command::ExportBins {
            model: abs(model)?,
            config: abs(config)?,
            out: opt(out)?,
        },
        Command::Synth { config, out, no_data } => Command::Synth { config: abs(config)?, out: opt(out)?, no_data },
        Command::Curves { model, field, segment, grid, out } => Command::Curves {
            model: abs(model)?,
            field,
            segment,
            grid,
            out: abs(out)?,
        },
        Command::Sweep { config, out } => Command::Sweep { config: abs(config)?, out: opt(out)? },
        Command::Rerun { manifest, out } => Command::Rerun { manifest: abs(manifest)?, out: opt(out)? },
    })
}

fn output_dir(c: &Command, loaded: Option<&Loaded>) -> Result<PathBuf> {
    let from_cfg = || -> PathBuf { loaded.map_or_else(|| PathBuf::from("out"), |l| l.cfg.output.dir.clone()) };
    Ok(match c {
        Command::Train { out, .. }
        | Command::ExportBins { out, .. }
        | Command::Synth { out, .. }
        | Command::Sweep { out, .. } => out.clone().unwrap_or_else(from_cfg),
        Command::Eval { out, .. } | Command::Curves { out, .. } => out.clone(),
        Command::Rerun { .. } => unreachable!("a rerun writes through the recorded command"),
    })
}

fn rerun(manifest_path: &Path, out: Option<PathBuf>) -> Result<()> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    let snapshot = match (&m.config, &m.config_dir) {
        (Some(t), Some(dir)) => {
            let mut cfg = RunConfig::parse(t)?;
            cfg.resolve_paths(dir);
            Some(Loaded {
                cfg,
                text: t.clone(),
                dir: dir.clone(),
            })
        }
        _ => None,
    };
    let command = match (m.command, out) {
        (c, None) => c,
        (Command::Train { config, .. }, Some(o)) => Command::Train { config, out: Some(o) },
        (Command::ExportBins { model, config, .. }, Some(o)) => Command::ExportBins { model, config, out: Some(o) },
        (Command::Synth { config, no_data, .. }, Some(o)) => Command::Synth { config, out: Some(o), no_data },
        (Command::Sweep { config, .. }, Some(o)) => Command::Sweep { config, out: Some(o) },
        (Command::Eval { model, data, delimiter, loss, .. }, Some(o)) => Command::Eval { model, data, delimiter, loss, out: o },
        (Command::Curves { model, field, segment, grid, .. }, Some(o)) => Command::Curves { model, field, segment, grid, out: o },
        (Command::Rerun { .. }, _) => return Err(Error::Config("a manifest cannot record a rerun".into())),
    };
    execute(command, snapshot)
}

/// Encodes records, naming the offending row on failure.
pub fn encode_rows(schema: &DatasetSchema, records: &[RawRecord]) -> Result<Vec<EncodedRow>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            schema.encode_row(r).map_err(|e| match e {
                Error::Field { field, message } => Error::Field {
                    field,
                    message: format!("row {}: {message}", i + 1),
                },
                other => other,
            })
        })
        .collect()
}

fn default_loss(kind: LabelKind) -> Loss {
    match kind {
        LabelKind::Binary => Loss::Logloss,
        LabelKind::Real => Loss::Squared,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutput {
    pub report: TrainReport,
    pub test: Option<Metrics>,
}

fn train_verb(l: &Loaded, run: &mut Run) -> Result<()> {
    let data = RunConfig::require(&l.cfg.data, "data")?;
    let scfg = RunConfig::require(&l.cfg.schema, "schema")?;
    let spec = l.cfg.model.clone().unwrap_or_else(|| ModelSpec::new(Variant::Fm, 4));
    let tcfg = l.cfg.train.clone().unwrap_or_default();
    let delim = data.delimiter_byte()?;

    run.input(&data.train)?;
    let table = RawTable::read(&data.train, delim)?;
    let schema = infer_schema(&table, scfg)?;
    let rows = encode_rows(&schema, &schema.bind(&table, &scfg.missing_tokens)?)?;
    if rows.is_empty() {
        return Err(Error::Data(format!("{} has no data rows", data.train.display())));
    }
    run.seed = Some(tcfg.seed);

    let model = ModelParams::new(schema, &spec, tcfg.seed)?;
    let (tr, ho) = split_holdout(rows.len(), tcfg.holdout_fraction, tcfg.seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>();
    let progress_path = run.path("progress.jsonl");
    let file = fs::File::create(&progress_path).map_err(|e| Error::io(&progress_path, e))?;
    let mut progress = BufWriter::new(file);
    let (model, report) = Trainer::new(&tcfg)?
        .with_progress(&mut progress)
        .fit(model, &pick(&tr), &pick(&ho))?;
    drop(progress);

    let test = match &data.test {
        Some(path) => {
            run.input(path)?;
            let t = RawTable::read(path, delim)?;
            let rows = encode_rows(model.schema(), &model.schema().bind(&t, &scfg.missing_tokens)?)?;
            Some(evaluate(&model, &rows, tcfg.loss)?)
        }
        None => None,
    };
    let mp = run.path("model.json");
    model.save(&mp)?;
    log::info!("trained model written to {}", mp.display());
    run.write_json("metrics.json", &TrainOutput { report, test })
}

fn eval_verb(model_path: &Path, data: &Path, delimiter: char, loss: Option<&str>, run: &mut Run) -> Result<()> {
    let delim = u8::try_from(delimiter).map_err(|_| Error::Config("delimiter must be one byte".into()))?;
    run.input(model_path)?;
    run.input(data)?;
    let model = ModelParams::load(model_path)?;
    let loss = match loss {
        Some(s) => s.parse()?,
        None => default_loss(model.schema().label_kind),
    };
    let table = RawTable::read(data, delim)?;
    let tokens = crate::schema::SchemaConfig::new("", LabelKind::Binary, vec![]).missing_tokens;
    let rows = encode_rows(model.schema(), &model.schema().bind(&table, &tokens)?)?;
    let metrics = evaluate(&model, &rows, loss)?;
    println!("{}", serde_json::to_string(&metrics)?);
    run.write_json("metrics.json", &metrics)
}

fn export_verb(model_path: &Path, l: &Loaded, run: &mut Run) -> Result<()> {
    let ecfg = RunConfig::require(&l.cfg.export, "export")?;
    let mode = ecfg.boundary_mode()?;
    run.input(model_path)?;
    let mut model = ModelParams::load(model_path)?;
    for name in &ecfg.fields {
        let field = model.schema().field_by_name(name)?;
        let FieldKind::ContinuousNumerical { transform, .. } = &field.kind else {
            return Err(Error::field(name, "only continuous fields can be exported"));
        };
        let (id, transform) = (field.field_id, transform.clone());
        let boundaries = make_boundaries(&transform, ecfg.bins, &mode)?;
        let (exported, report) = export_binned(&model, id, &boundaries, ecfg.midpoint)?;
        let p = run.path(&format!("bins_{name}.csv"));
        report.write_table(&p)?;
        model = exported;
    }
    let p = run.path("model_binned.json");
    model.save(p)
}

fn synth_verb(l: &Loaded, no_data: bool, run: &mut Run) -> Result<()> {
    let cfg: ComparisonConfig = l.cfg.synth.clone().unwrap_or_default();
    run.seed = Some(cfg.seed);
    let (train, test) = synthetic::comparison_data(&cfg)?;
    if !no_data {
        for (name, rows) in [("synth_train.csv", &train), ("synth_test.csv", &test)] {
            let p = run.path(name);
            write_table(&p, &["s0", "s1", "s2", "z", "y"], &synthetic_table(rows))?;
        }
    }
    let results = synthetic::run_comparison(&cfg)?;
    let p = run.path("results.csv");
    write_table(
        &p,
        &["strategy", "intervals", "repeat", "seed", "test_loss", "selected_epoch"],
        &results
            .iter()
            .map(|r| {
                vec![
                    r.strategy.name().into(),
                    r.intervals.to_string(),
                    r.repeat.to_string(),
                    r.seed.to_string(),
                    r.test_loss.to_string(),
                    r.selected_epoch.to_string(),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    let summary = synthetic::summarize(&results);
    let p = run.path("summary.csv");
    write_table(
        &p,
        &["strategy", "intervals", "mean_test_loss", "std_err", "repeats"],
        &summary
            .iter()
            .map(|s| {
                vec![
                    s.strategy.name().into(),
                    s.intervals.to_string(),
                    s.mean.to_string(),
                    s.std_err.to_string(),
                    s.repeats.to_string(),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    for s in &summary {
        log::info!("{:8} {:4} {:.5} +- {:.5}", s.strategy.name(), s.intervals, s.mean, s.std_err);
    }

    // curves of the first repeat of every configuration
    let grid: Vec<f64> = (0..=400).map(|j| j as f64 * 0.1).collect();
    let cells: Vec<(Strategy, usize)> = [Strategy::Bins, Strategy::Splines]
        .into_iter()
        .flat_map(|s| cfg.interval_counts.iter().map(move |&n| (s, n)))
        .collect();
    let curves: Vec<(Strategy, usize, Vec<synthetic::CurvePoint>)> = cells
        .par_iter()
        .map(|&(s, n)| {
            let (model, _) = synthetic::run_cell(&cfg, &train, &test, s, n, 0)?;
            Ok((s, n, synthetic::emit_curves(&model, &cfg.curves, &grid)?))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (s, n, pts) in &curves {
        for p in pts {
            rows.push(vec![
                s.name().into(),
                n.to_string(),
                p.segment.to_string(),
                p.z.to_string(),
                p.predicted.to_string(),
                p.truth.to_string(),
            ]);
        }
    }
    let p = run.path("curves.csv");
    write_table(&p, &["strategy", "intervals", "segment", "z", "predicted", "truth"], &rows)?;

    if l.cfg.output.svg {
        let series = [Strategy::Bins, Strategy::Splines]
            .into_iter()
            .map(|st| Series {
                name: st.name().into(),
                points: summary
                    .iter()
                    .filter(|s| s.strategy == st)
                    .map(|s| (s.intervals as f64, s.mean))
                    .collect(),
                dashed: false,
            })
            .collect();
        let chart = Chart {
            title: "test cross-entropy".into(),
            x_label: "intervals".into(),
            y_label: "mean test loss".into(),
            log_x: true,
            series,
        };
        run.write("losses.svg", &chart.render())?;
        for (s, n, pts) in &curves {
            let mut series = Vec::new();
            for seg in 0..synthetic::NUM_SEGMENTS {
                let of = |f: fn(&synthetic::CurvePoint) -> f64| {
                    pts.iter().filter(|p| p.segment == seg).map(|p| (p.z, f(p))).collect()
                };
                series.push(Series { name: format!("s{seg}"), points: of(|p| p.predicted), dashed: false });
                series.push(Series { name: String::new(), points: of(|p| p.truth), dashed: true });
            }
            let chart = Chart {
                title: format!("{} with {n} intervals", s.name()),
                x_label: "z".into(),
                y_label: "click probability".into(),
                log_x: false,
                series,
            };
            run.write(&format!("curves_{}_{n}.svg", s.name()), &chart.render())?;
        }
    }
    Ok(())
}

fn synthetic_table(rows: &[SyntheticRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            let mut v: Vec<String> = (0..3).map(|b| ((r.segment >> b) & 1).to_string()).collect();
            v.push(r.z.to_string());
            v.push(r.label.to_string());
            v
        })
        .collect()
}

/// Parses `lo:hi:count` into an evenly spaced grid.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::Config(format!("grid `{spec}` is not lo:hi:count"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n < 2 || !(lo < hi) {
        return Err(bad());
    }
    Ok((0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect())
}

/// Parses `name=value,...` into a record over the schema's fields.
pub fn parse_segment(schema: &DatasetSchema, spec: &str) -> Result<RawRecord> {
    let mut values = vec![RawValue::Missing; schema.fields.len()];
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, value) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("segment entry `{part}` is not name=value")))?;
        let f = schema.field_by_name(name.trim())?;
        values[f.field_id] = RawValue::text(value.trim());
    }
    Ok(RawRecord { values, label: 0.0 })
}

fn curves_verb(model_path: &Path, field: &str, segment: &str, grid: &str, run: &mut Run) -> Result<()> {
    run.input(model_path)?;
    let model = ModelParams::load(model_path)?;
    let f = model.schema().field_by_name(field)?.field_id;
    let seg = parse_segment(model.schema(), segment)?;
    let grid = parse_grid(grid)?;
    let scores = model.segmentized_curve(&seg, f, &grid)?;
    let binary = model.schema().label_kind == LabelKind::Binary;
    let rows: Vec<Vec<String>> = grid
        .iter()
        .zip(&scores)
        .map(|(z, s)| {
            let pred = if binary { sigmoid(*s) } else { model.target().map_or(*s, |t| t.restore(*s)) };
            vec![z.to_string(), s.to_string(), pred.to_string()]
        })
        .collect();
    let p = run.path("curve.csv");
    write_table(&p, &[field, "score", "prediction"], &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub step_size: f64,
    pub embedding_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
    pub train_loss: f64,
    pub holdout_loss: Option<f64>,
    pub selected_epoch: usize,
}

fn sweep_verb(l: &Loaded, run: &mut Run) -> Result<()> {
    let data = RunConfig::require(&l.cfg.data, "data")?;
    let scfg = RunConfig::require(&l.cfg.schema, "schema")?;
    let grid = l.cfg.sweep.clone().unwrap_or_default();
    let base_spec = l.cfg.model.clone().unwrap_or_else(|| ModelSpec::new(Variant::Fm, 4));
    let base = l.cfg.train.clone().unwrap_or_default();
    run.input(&data.train)?;
    let table = RawTable::read(&data.train, data.delimiter_byte()?)?;
    let schema = infer_schema(&table, scfg)?;
    let rows = encode_rows(&schema, &schema.bind(&table, &scfg.missing_tokens)?)?;

    let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
    let oru = |v: &Vec<usize>, d: usize| if v.is_empty() { vec![d] } else { v.clone() };
    let seeds = if grid.seeds.is_empty() { vec![base.seed] } else { grid.seeds.clone() };
    let mut combos = Vec::new();
    for &step_size in &or(&grid.step_size, base.step_size) {
        for &dim in &oru(&grid.embedding_dim, base_spec.embedding_dim) {
            for &epochs in &oru(&grid.epochs, base.epochs) {
                for &batch_size in &oru(&grid.batch_size, base.batch_size) {
                    for &l2 in &or(&grid.l2, base.l2) {
                        for &seed in &seeds {
                            let cfg = TrainConfig { step_size, epochs, batch_size, l2, seed, workers: 1, ..base.clone() };
                            let spec = ModelSpec { embedding_dim: dim, ..base_spec.clone() };
                            combos.push((cfg, spec));
                        }
                    }
                }
            }
        }
    }
    run.seed = Some(base.seed);
    let results: Vec<SweepRow> = combos
        .par_iter()
        .map(|(cfg, spec)| {
            cfg.validate()?;
            let (tr, ho) = split_holdout(rows.len(), cfg.holdout_fraction, cfg.seed);
            let pick = |idx: &[usize]| idx.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>();
            let model = ModelParams::new(schema.clone(), spec, cfg.seed)?;
            let (_, rep) = Trainer::new(cfg)?.fit(model, &pick(&tr), &pick(&ho))?;
            Ok(SweepRow {
                step_size: cfg.step_size,
                embedding_dim: spec.embedding_dim,
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
                l2: cfg.l2,
                seed: cfg.seed,
                train_loss: rep.train.loss,
                holdout_loss: rep.holdout.map(|h| h.loss),
                selected_epoch: rep.selected_epoch,
            })
        })
        .collect::<Result<_>>()?;
    let table: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                r.step_size.to_string(),
                r.embedding_dim.to_string(),
                r.epochs.to_string(),
                r.batch_size.to_string(),
                r.l2.to_string(),
                r.seed.to_string(),
                r.train_loss.to_string(),
                r.holdout_loss.map_or(String::new(), |h| h.to_string()),
                r.selected_epoch.to_string(),
            ]
        })
        .collect();
    let p = run.path("sweep.csv");
    write_table(
        &p,
        &["step_size", "embedding_dim", "epochs", "batch_size", "l2", "seed", "train_loss", "holdout_loss", "selected_epoch"],
        &table,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_specs() {
        assert_eq!(parse_grid("0:1:5").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        for bad in ["0:1", "1:0:5", "0:1:1", "a:1:3"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn manifest_command_round_trips() {
        let c = Command::Curves {
            model: "/m.json".into(),
            field: "z".into(),
            segment: "a=1".into(),
            grid: "0:1:3".into(),
            out: "/o".into(),
        };
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<Command>(&s).unwrap(), c);
    }
}
