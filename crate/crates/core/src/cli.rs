//! The `spml` command-line tool.
//!
//! Exit codes: 0 success, 1 runtime failure or missing input file, 2 usage
//! or configuration error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{
    expand_sweep, generate_splits, load_data, regime_for, with_context_prior, DataConfig, ExperimentConfig, Splits,
};
use crate::error::Error;
use crate::eval::{evaluate, EvalReport};
use crate::labelspace::{load_manifest, manifest_to_string, Dataset};
use crate::losses::{LossKind, LossSpec};
use crate::model::ModelParams;
use crate::regimes::{regime_stats, stats_csv_row, PriorSimConfig, RegimeKind, STATS_CSV_HEADER};
use crate::trainer::{gradcheck, sweep, train, RunRecord, TrainOutcome};

const GEN_KEYS: &str = "\
CONFIG KEYS (JSON object; a full experiment file is also accepted, its `data` section is used):
  generator            asset-structured generator; unspecified keys scale with `m`
    m, assets, clips_per_asset [lo, hi], d, p_bg, background_species,
    confusable_pairs, confusable_offset, regions, species_per_region,
    checklist_extra, vagrant_prob, noise_sigma, seed
  flat                 flat multi-label generator (instead of `generator`)
    m, examples, d, scenes, classes_per_scene, positives [lo, hi], noise_sigma, seed
  split                [train, val, test] asset fractions (default [0.6, 0.2, 0.2])
OUTPUT: <out>/train.json, val.json, test.json (fully labeled manifests)
--seed overrides the generator seed.";

const APPLY_KEYS: &str = "\
CONFIG KEYS:
  inputs               list of fully labeled manifest paths
  regime               full | target-only | geo | checklist
  flat                 true to sample the single positive uniformly (flat data)
  context_prior        optional; adds context-derived negatives to target-only data
    target_known_negative_fraction, fit_fraction, context_dim, ridge_lambda,
    tolerance, seed
OUTPUT: <out>/<input file name> for each input
--seed overrides the sampling and context-prior seeds.";

const STATS_KEYS: &str = "\
CONFIG KEYS:
  inputs               list of manifest paths
  regimes              optional list of regimes to derive from each (fully labeled) input;
                       when absent each manifest is summarized as stored
  flat                 true for uniform single-positive sampling in target-only
OUTPUT: CSV `split,regime,mean_pos,mean_neg,mean_unk,min,max` to --out or stdout
(min/max count known labels per example).";

const EXPERIMENT_KEYS: &str = "\
CONFIG KEYS (JSON object with sections; every key is optional):
  name                 run label
  data                 one of `generator`, `flat` or manifests `train`/`val`/`test`
    generator, flat, split   as for `regime gen`
    train, val, test         manifest paths (val required with manifests)
    regime                   regime applied to the training split
                             (default target-only for generated data)
    context_prior            as for `regime apply`
  model
    dims                 full widths [D, hidden..., M] (must match the data)
    hidden               hidden widths (default [128])
    seed                 initialization seed
    last_layer_lr_mult   default 10 for ll-* losses, else 1
  loss
    preset               <l48|coco>-<targetonly|geo|checklist>-<kind>; other keys override it
    kind                 bce-full | an | wan | ls | role | em | ll-r | ll-ct | ll-cp
    gamma, eps_ls, alpha_em, lambda_role, delta_rel (percent per epoch),
    expected_positives_k, a (0 or 1, unknown-term switch), b (known-negative weight)
  reg
    preset               \"rp\" for the tuned R_P weights of the chosen loss
    kind                 none | rp | re
    alpha, eps_ema, eps_ema_embed, freeze_targets
  train
    epochs, batch_size, base_lr, role_lr, eval_every, seed
--seed overrides data, model and train seeds.";

const TRAIN_OUTPUT: &str = "\
OUTPUT (run directory, default runs/<name or config file stem>):
  config.json, metrics.csv (epoch,train_loss,val_map), checkpoint.json (best
  epoch), train_state.json (final parameters, flip store, ROLE table, EMA
  targets), run.json, eval_report.json and pr_curves.csv (test split).";

const SWEEP_KEYS: &str = "\
The config is an experiment file (see `spml train --help`) plus
  sweep                object mapping dotted keys (e.g. \"loss.b\", \"train.base_lr\")
                       to lists of values; the grid is their cartesian product.
                       data.* keys cannot be swept.
OUTPUT: <out>/sweep.csv (index, swept keys, val_map) and <out>/best/ (run
directory of the configuration with the highest validation mAP; ties keep the
earlier one).";

const GRADCHECK_KEYS: &str = "\
With --config, only the `loss` section of the experiment file is read.
OUTPUT: CSV `kind,trials,max_rel_err,failures` to stdout (and --out when given).
Exit status 1 when any trial exceeds the 1e-4 tolerance.";

const EVAL_KEYS: &str = "\
Reads <run>/config.json and <run>/checkpoint.json and evaluates the test split
on fully labeled examples.
OUTPUT: eval_report.json and pr_curves.csv in --out (default: the run directory).";

const REPORT_KEYS: &str = "\
Each --run is a run directory, or a directory whose subdirectories are runs.
Reads run.json and eval_report.json; malformed runs are skipped with a warning.
OUTPUT: CSV `loss,regime,reg,n,mean_map,std_map` (sample std, empty for a
single run) to --out or stdout.";

#[derive(Debug, Parser)]
#[command(name = "spml", version, about = "Single-positive multi-label learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate, relabel and summarize datasets.
    #[command(subcommand)]
    Regime(RegimeCommand),
    /// Train a model and write a run directory.
    #[command(after_help = format!("{EXPERIMENT_KEYS}\n{TRAIN_OUTPUT}"))]
    Train(TrainArgs),
    /// Evaluate a trained run on its test split.
    #[command(after_help = EVAL_KEYS)]
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences.
    #[command(after_help = GRADCHECK_KEYS)]
    Gradcheck(GradcheckArgs),
    /// Grid search selected by validation mAP.
    #[command(after_help = SWEEP_KEYS)]
    Sweep(SweepArgs),
    /// Aggregate test mAP over runs (mean and sample std per method).
    #[command(after_help = REPORT_KEYS)]
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
enum RegimeCommand {
    /// Generate fully labeled synthetic train/val/test manifests.
    #[command(after_help = GEN_KEYS)]
    Gen(ConfigOutArgs),
    /// Derive a supervision regime from fully labeled manifests.
    #[command(after_help = APPLY_KEYS)]
    Apply(ConfigOutArgs),
    /// Per-example positive/negative/unknown statistics.
    #[command(after_help = STATS_KEYS)]
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
struct ConfigOutArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    config: PathBuf,
    /// CSV path (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Check every loss kind.
    #[arg(long)]
    all: bool,
    #[arg(long, required_unless_present = "all")]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Run directory (repeatable).
    #[arg(long, required = true)]
    run: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> i32 {
    match e.downcast_ref::<Error>() {
        Some(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => 1,
        Some(err) if err.is_validation() || matches!(err, Error::Json { .. }) => 2,
        _ => 1,
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<i32> {
    match cmd {
        Command::Regime(RegimeCommand::Gen(a)) => cmd_gen(&a),
        Command::Regime(RegimeCommand::Apply(a)) => cmd_apply(&a),
        Command::Regime(RegimeCommand::Stats(a)) => cmd_stats(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Report(a) => cmd_report(&a),
    }
    .map(|code| code.unwrap_or(0))
}

fn read_json(path: &Path) -> Result<Value, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_section<T: for<'de> Deserialize<'de>>(v: Value, path: &Path) -> Result<T, Error> {
    serde_json::from_value(v).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn cmd_gen(a: &ConfigOutArgs) -> anyhow::Result<Option<i32>> {
    let mut v = read_json(&a.config)?;
    if let Some(data) = v.get("data") {
        v = data.clone();
    }
    let mut data: DataConfig = parse_section(v, &a.config)?;
    if data.generator.is_none() && data.flat.is_none() {
        return Err(Error::Config("regime gen needs a `generator` or `flat` section".into()).into());
    }
    if let Some(seed) = a.seed {
        if let Some(g) = &mut data.generator {
            g.seed = seed;
        }
        if let Some(f) = &mut data.flat {
            f.seed = seed;
        }
    }
    let (tr, va, te) = generate_splits(&data)?.expect("generator present");
    for (name, ds) in [("train", &tr), ("val", &va), ("test", &te)] {
        write_file(&a.out.join(format!("{name}.json")), &manifest_to_string(ds))?;
        println!("{name}: {} assets, {} clips", ds.assets.len(), ds.clips.len());
    }
    Ok(None)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ApplyFile {
    inputs: Vec<PathBuf>,
    regime: RegimeKind,
    #[serde(default)]
    flat: bool,
    #[serde(default)]
    context_prior: Option<PriorSimConfig>,
}

fn cmd_apply(a: &ConfigOutArgs) -> anyhow::Result<Option<i32>> {
    let mut cfg: ApplyFile = parse_section(read_json(&a.config)?, &a.config)?;
    if cfg.context_prior.is_some() && cfg.regime != RegimeKind::TargetOnly {
        return Err(Error::Config("context_prior needs regime target-only".into()).into());
    }
    if let (Some(seed), Some(cp)) = (a.seed, cfg.context_prior.as_mut()) {
        cp.seed = seed;
    }
    if let Some(cp) = &cfg.context_prior {
        cp.validate()?;
    }
    let mut outputs = Vec::with_capacity(cfg.inputs.len());
    for input in &cfg.inputs {
        let name = input
            .file_name()
            .ok_or_else(|| Error::Config(format!("input {} has no file name", input.display())))?;
        let target = a.out.join(name);
        if fs::canonicalize(&target).ok().is_some_and(|t| fs::canonicalize(input).ok() == Some(t)) {
            return Err(Error::Config(format!("output {} would overwrite its input", target.display())).into());
        }
        let full = load_manifest(input)?;
        let mut ds = regime_for(&full, cfg.regime, cfg.flat, a.seed.unwrap_or(0))?;
        if let Some(cp) = &cfg.context_prior {
            ds = with_context_prior(&ds, &full, cp)?;
        }
        outputs.push((target, ds));
    }
    for (target, ds) in outputs {
        write_file(&target, &manifest_to_string(&ds))?;
        println!("wrote {}", target.display());
    }
    Ok(None)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatsFile {
    inputs: Vec<PathBuf>,
    #[serde(default)]
    regimes: Option<Vec<RegimeKind>>,
    #[serde(default)]
    flat: bool,
}

fn split_label(ds: &Dataset, path: &Path) -> String {
    match ds.meta.split {
        Some(s) => s.to_string(),
        None => path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    }
}

fn cmd_stats(a: &StatsArgs) -> anyhow::Result<Option<i32>> {
    let cfg: StatsFile = parse_section(read_json(&a.config)?, &a.config)?;
    let mut out = format!("{STATS_CSV_HEADER}\n");
    for input in &cfg.inputs {
        let ds = load_manifest(input)?;
        let split = split_label(&ds, input);
        match &cfg.regimes {
            None => {
                let regime = ds.meta.regime.clone().unwrap_or_else(|| "unknown".into());
                out += &stats_csv_row(&split, &regime, &regime_stats(&ds));
                out.push('\n');
            }
            Some(regimes) => {
                for &k in regimes {
                    let derived = regime_for(&ds, k, cfg.flat, 0)?;
                    out += &stats_csv_row(&split, k.name(), &regime_stats(&derived));
                    out.push('\n');
                }
            }
        }
    }
    match &a.out {
        Some(p) => write_file(p, &out)?,
        None => print!("{out}"),
    }
    Ok(None)
}

#[derive(Debug, Serialize, Deserialize)]
struct RunSummary {
    loss: LossKind,
    regime: String,
    reg: String,
    #[serde(flatten)]
    record: RunRecord,
}

#[derive(Debug, Serialize)]
struct TrainState<'a> {
    last: &'a ModelParams,
    loss_state: &'a crate::losses::LossState,
    pseudo_targets: &'a Option<crate::regularizers::PseudoTargetStore>,
}

fn metrics_csv(record: &RunRecord) -> String {
    let mut s = String::from("epoch,train_loss,val_map\n");
    for (i, loss) in record.train_loss.iter().enumerate() {
        let val = record.val_map[i].map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{loss},{val}", i + 1);
    }
    s
}

fn write_eval(dir: &Path, report: &EvalReport) -> anyhow::Result<()> {
    write_file(&dir.join("eval_report.json"), &to_json(report))?;
    write_file(&dir.join("pr_curves.csv"), &report.pr_curves_csv())
}

fn write_run(dir: &Path, cfg: &ExperimentConfig, data: &Splits, out: &TrainOutcome) -> anyhow::Result<Option<f64>> {
    write_file(&dir.join("config.json"), &cfg.to_json_pretty())?;
    write_file(&dir.join("metrics.csv"), &metrics_csv(&out.record))?;
    write_file(&dir.join("checkpoint.json"), &to_json(&out.best))?;
    let state = TrainState {
        last: &out.last,
        loss_state: &out.loss_state,
        pseudo_targets: &out.pseudo_targets,
    };
    write_file(&dir.join("train_state.json"), &to_json(&state))?;
    let mut record = out.record.clone();
    let map = match &data.test {
        Some(test) => {
            let report = evaluate(&out.best, test, true)?;
            write_eval(dir, &report)?;
            let map = report.map;
            record.test_report = Some(report);
            Some(map)
        }
        None => None,
    };
    let summary = RunSummary {
        loss: cfg.loss.kind,
        regime: cfg.regime_name(data),
        reg: cfg.reg_name().to_string(),
        record,
    };
    write_file(&dir.join("run.json"), &to_json(&summary))?;
    Ok(map)
}

fn default_run_dir(cfg: &ExperimentConfig, config_path: &Path) -> PathBuf {
    let stem = cfg
        .name
        .clone()
        .or_else(|| config_path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "run".into());
    Path::new("runs").join(stem)
}

fn cmd_train(a: &TrainArgs) -> anyhow::Result<Option<i32>> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.apply_seed(seed);
    }
    let data = load_data(&cfg)?;
    let outcome = train(&cfg.to_train_config(), &data.train, Some(&data.val))?;
    let dir = a.out.clone().unwrap_or_else(|| default_run_dir(&cfg, &a.config));
    let map = write_run(&dir, &cfg, &data, &outcome)?;
    let last_loss = outcome.record.train_loss.last().copied().unwrap_or(f64::NAN);
    match map {
        Some(m) => println!("{}: final train loss {last_loss:.6}, test mAP {m:.4}", dir.display()),
        None => println!("{}: final train loss {last_loss:.6}", dir.display()),
    }
    Ok(None)
}

fn cmd_eval(a: &EvalArgs) -> anyhow::Result<Option<i32>> {
    let cfg = ExperimentConfig::load(&a.run.join("config.json"))?;
    let ckpt = a.run.join("checkpoint.json");
    let params: ModelParams = parse_section(read_json(&ckpt)?, &ckpt)?;
    let data = load_data(&cfg)?;
    let test = data
        .test
        .as_ref()
        .ok_or_else(|| Error::Config("the run's data section has no test split".into()))?;
    if params.input_dim() != test.meta.d || params.output_dim() != test.meta.m {
        return Err(Error::Dimension(format!(
            "checkpoint dims {:?} do not match test data (D={}, M={})",
            params.dims, test.meta.d, test.meta.m
        ))
        .into());
    }
    let report = evaluate(&params, test, true)?;
    let dir = a.out.clone().unwrap_or_else(|| a.run.clone());
    write_eval(&dir, &report)?;
    println!(
        "test mAP {:.4} over {} fully labeled examples ({} classes undefined)",
        report.map,
        report.n_examples_used,
        report.undefined_classes.len()
    );
    Ok(None)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> anyhow::Result<Option<i32>> {
    let specs: Vec<LossSpec> = if a.all {
        LossKind::ALL.into_iter().map(LossSpec::new).collect()
    } else {
        let path = a.config.as_ref().expect("clap enforces --config without --all");
        vec![ExperimentConfig::load(path)?.loss]
    };
    let mut out = String::from("kind,trials,max_rel_err,failures\n");
    let mut failed = false;
    for spec in &specs {
        let r = gradcheck(spec, a.trials, a.seed)?;
        failed |= r.failures > 0;
        let _ = writeln!(out, "{},{},{:.3e},{}", r.kind, r.trials, r.max_rel_err, r.failures);
    }
    print!("{out}");
    if let Some(p) = &a.out {
        write_file(p, &out)?;
    }
    Ok(failed.then_some(1))
}

fn csv_field(v: &Value) -> String {
    let s = match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s
    }
}

fn cmd_sweep(a: &SweepArgs) -> anyhow::Result<Option<i32>> {
    let raw = read_json(&a.config)?;
    if let Some(keys) = raw.get("sweep").and_then(Value::as_object) {
        if let Some(k) = keys.keys().find(|k| k.starts_with("data.") || *k == "data") {
            return Err(Error::Config(format!("sweep key {k:?}: data settings cannot be swept")).into());
        }
    }
    let mut points = expand_sweep(&raw)?;
    if let Some(seed) = a.seed {
        points.iter_mut().for_each(|p| p.config.apply_seed(seed));
    }
    let first = &points.first().ok_or_else(|| anyhow!("empty sweep"))?.config;
    let data = load_data(first)?;
    let configs: Vec<_> = points.iter().map(|p| p.config.to_train_config()).collect();
    let result = sweep(&configs, &data.train, &data.val)?;

    let keys: Vec<&String> = points[0].values.keys().collect();
    let mut csv = String::from("index");
    for k in &keys {
        csv.push(',');
        csv += k;
    }
    csv += ",val_map\n";
    for (i, (p, score)) in points.iter().zip(&result.scores).enumerate() {
        csv += &i.to_string();
        for k in &keys {
            csv.push(',');
            csv += &csv_field(&p.values[*k]);
        }
        let _ = writeln!(csv, ",{score}");
    }
    write_file(&a.out.join("sweep.csv"), &csv)?;
    let best = result.best_index;
    let map = write_run(&a.out.join("best"), &points[best].config, &data, &result.outcomes[best])?;
    print!("{csv}");
    println!(
        "best: index {best} (val mAP {:.4}{})",
        result.scores[best],
        map.map(|m| format!(", test mAP {m:.4}")).unwrap_or_default()
    );
    Ok(None)
}

/// One row of the aggregate report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub loss: String,
    pub regime: String,
    pub reg: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (`n − 1` denominator); `None` for one run.
    pub std: Option<f64>,
}

/// Groups `(loss, regime, reg, map)` entries and computes mean and sample std.
pub fn aggregate(entries: &[(String, String, String, f64)]) -> Vec<ReportRow> {
    let mut groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for (l, r, g, m) in entries {
        groups.entry((l.clone(), r.clone(), g.clone())).or_default().push(*m);
    }
    groups
        .into_iter()
        .map(|((loss, regime, reg), maps)| {
            let n = maps.len();
            let mean = maps.iter().sum::<f64>() / n as f64;
            let std = (n > 1).then(|| (maps.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
            ReportRow {
                loss,
                regime,
                reg,
                n,
                mean,
                std,
            }
        })
        .collect()
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from("loss,regime,reg,n,mean_map,std_map\n");
    for r in rows {
        let std = r.std.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{},{:.6},{std}", r.loss, r.regime, r.reg, r.n, r.mean);
    }
    s
}

fn read_run(dir: &Path) -> anyhow::Result<(String, String, String, f64)> {
    let summary: RunSummary = parse_section(read_json(&dir.join("run.json"))?, &dir.join("run.json"))?;
    let report: EvalReport = parse_section(read_json(&dir.join("eval_report.json"))?, &dir.join("eval_report.json"))?;
    if !(0.0..=1.0).contains(&report.map) {
        bail!("mAP {} out of range", report.map);
    }
    Ok((summary.loss.to_string(), summary.regime, summary.reg, report.map))
}

fn expand_runs(dirs: &[PathBuf]) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for d in dirs {
        if d.join("run.json").exists() || !d.is_dir() {
            out.push(d.clone());
            continue;
        }
        let mut subs: Vec<PathBuf> = fs::read_dir(d)
            .map(|it| it.flatten().map(|e| e.path()).filter(|p| p.is_dir()).collect())
            .unwrap_or_default();
        if subs.is_empty() {
            out.push(d.clone());
        }
        subs.sort();
        out.extend(subs);
    }
    out
}

fn cmd_report(a: &ReportArgs) -> anyhow::Result<Option<i32>> {
    let mut entries = Vec::new();
    for dir in expand_runs(&a.run) {
        match read_run(&dir) {
            Ok(e) => entries.push(e),
            Err(e) => eprintln!("warning: skipping {}: {e}", dir.display()),
        }
    }
    if entries.is_empty() {
        bail!("no readable runs among the given directories");
    }
    let csv = report_csv(&aggregate(&entries));
    match &a.out {
        Some(p) => write_file(p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(None)
}
