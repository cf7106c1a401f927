//! The `wardwatch` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use wardwatch_core::ada;
use wardwatch_core::dataset::{build_cohort_with, split_train_test, AgeBins, MatchPolicy, WINDOW_HOURS};
use wardwatch_core::ensemble::{EnsembleModel, DEFAULT_THRESHOLD};
use wardwatch_core::gbt::{self, GbtParams, SearchSpace};
use wardwatch_core::metrics::{cross_validate, evaluate, CvResult};
use wardwatch_core::pews::{PewsBaseline, PewsTable};
use wardwatch_core::synth::{generate, SynthConfig};
use wardwatch_core::{Label, Snapshot};

use crate::error::{Error, Result};
use crate::formats::{
    format_time, parse_time, read_encounters, read_snapshots, read_text, write_encounters,
    write_events, write_roc, write_snapshots, write_text,
};
use crate::model::{default_pews_table, load_pews_table, Model, ModelKind, SearchRecord};
use crate::timeline::{default_window_end, timeline};

/// Early-deterioration modelling for pediatric ward patients.
#[derive(Debug, Parser)]
#[command(name = "wardwatch", version, about)]
pub struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic encounters (events.csv, encounters.csv).
    Synth(SynthArgs),
    /// Build the balanced snapshot cohort (snapshots.csv, optionally
    /// train.csv and test.csv).
    Prep(PrepArgs),
    /// Fit a model on a snapshot file (model.json).
    Train(TrainArgs),
    /// Score a snapshot file with a saved model (report.json, roc.csv).
    Eval(EvalArgs),
    /// Score encounters at every measurement in a window (timeline.csv).
    Timeline(TimelineArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of encounters.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Fraction of encounters that end in a transfer.
    #[arg(long, default_value_t = 0.026)]
    pub prevalence: f64,
    /// JSON generator configuration; --n, --prevalence and --seed override
    /// its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Remove all deterioration effects.
    #[arg(long)]
    pub no_signal: bool,
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    /// Events CSV (encounter_id,patient_id,time,vital,value).
    #[arg(long)]
    pub events: PathBuf,
    /// Encounters CSV (encounter_id,patient_id,age_years,transferred,transfer_time).
    #[arg(long)]
    pub encounters: PathBuf,
    /// Also write a patient-disjoint stratified train/test split with this
    /// test fraction.
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Draw each matched non-transfer encounter from the transfer's age bin.
    #[arg(long)]
    pub age_matched: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Snapshot CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelKind::Ensemble)]
    pub model: ModelKind,
    /// AdaBoost rounds.
    #[arg(long, default_value_t = 100)]
    pub rounds: usize,
    /// JSON gradient boosting parameters; individual flags below override.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Number of boosted trees.
    #[arg(long)]
    pub trees: Option<usize>,
    /// Maximum tree depth.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Shrinkage applied to each tree.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// L2 penalty on leaf weights.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Minimum gain for a split.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Minimum hessian sum per child.
    #[arg(long)]
    pub min_child_weight: Option<f64>,
    /// Fraction of feature columns sampled per tree.
    #[arg(long)]
    pub colsample: Option<f64>,
    /// Random hyperparameter search for gradient boosting, e.g. `trials=50`.
    #[arg(long, value_parser = parse_search)]
    pub search: Option<usize>,
    /// JSON search ranges for --search.
    #[arg(long)]
    pub search_space: Option<PathBuf>,
    /// Folds for --cv and --search.
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Report the k-fold cross-validated mean AUROC.
    #[arg(long)]
    pub cv: bool,
    /// PEWS sub-score table (JSON); defaults to the bundled Bedside table.
    #[arg(long)]
    pub pews_table: Option<PathBuf>,
    /// Ensemble decision threshold.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Output file name inside --out.
    #[arg(long, default_value = "model.json")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model JSON written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Snapshot CSV to evaluate on.
    #[arg(long)]
    pub data: PathBuf,
    /// Probability threshold for ada and gbt models (ensemble and PEWS use
    /// the value stored in the model).
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TimelineArgs {
    /// Model JSON written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Events CSV.
    #[arg(long)]
    pub events: PathBuf,
    /// Encounters CSV.
    #[arg(long)]
    pub encounters: PathBuf,
    /// Encounter to score; repeatable. Defaults to every encounter.
    #[arg(long = "encounter")]
    pub encounter_ids: Vec<String>,
    /// Window end (ISO-8601). Defaults to two hours before transfer, or the
    /// last measurement.
    #[arg(long)]
    pub end: Option<String>,
    /// Window length in hours.
    #[arg(long, default_value_t = WINDOW_HOURS)]
    pub window_hours: f64,
}

fn parse_search(s: &str) -> std::result::Result<usize, String> {
    let n = s.strip_prefix("trials=").unwrap_or(s);
    match n.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("expected trials=N with N > 0, found `{s}`")),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Messages go to `out` and `err`.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match run(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    match &cli.command {
        Command::Synth(a) => synth(cli, a, out),
        Command::Prep(a) => prep(cli, a, out),
        Command::Train(a) => train(cli, a, out),
        Command::Eval(a) => eval(cli, a, out),
        Command::Timeline(a) => run_timeline(cli, a, out),
    }
}

fn say(out: &mut dyn Write, line: impl AsRef<str>) -> Result<()> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| Error::io("<stdout>", e))
}

fn json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| Error::Json { path: path.to_path_buf(), message: e.to_string() })
}

fn synth(cli: &Cli, a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let base = match &a.config {
        Some(path) => json_file::<SynthConfig>(path).map_err(|e| match e {
            Error::Json { path, message } => Error::Usage(format!("{}: {message}", path.display())),
            other => other,
        })?,
        None => SynthConfig::default(),
    };
    let mut config = SynthConfig {
        n_encounters: a.n,
        transfer_prevalence: a.prevalence,
        seed: cli.seed,
        ..base
    };
    if a.no_signal {
        config = config.null_signal();
    }
    let encounters = generate(&config)?;
    let events_path = cli.out.join("events.csv");
    let encounters_path = cli.out.join("encounters.csv");
    write_events(&events_path, &encounters)?;
    write_encounters(&encounters_path, &encounters)?;
    let transfers = encounters.iter().filter(|e| e.transferred()).count();
    let events: usize = encounters.iter().map(|e| e.events().len()).sum();
    say(out, format!(
        "{} encounters ({transfers} transferred), {events} events -> {}, {}",
        encounters.len(),
        events_path.display(),
        encounters_path.display()
    ))
}

fn class_counts(set: &[Snapshot]) -> (usize, usize) {
    let pos = set.iter().filter(|s| s.label.is_positive()).count();
    (pos, set.len() - pos)
}

fn prep(cli: &Cli, a: &PrepArgs, out: &mut dyn Write) -> Result<()> {
    let encounters = read_encounters(&a.encounters, &a.events)?;
    let policy = if a.age_matched { MatchPolicy::AgeMatched } else { MatchPolicy::Uniform };
    let cohort = build_cohort_with(&encounters, cli.seed, policy)?;
    let path = cli.out.join("snapshots.csv");
    write_snapshots(&path, &cohort)?;
    let (pos, neg) = class_counts(&cohort);
    say(out, format!("snapshots: {} ({pos} transfer, {neg} no transfer) -> {}", cohort.len(), path.display()))?;
    if let Some(f) = a.test_fraction {
        let (train, test) = split_train_test(&cohort, f, cli.seed)?;
        for (name, set) in [("train", &train), ("test", &test)] {
            let path = cli.out.join(format!("{name}.csv"));
            write_snapshots(&path, set)?;
            let (pos, neg) = class_counts(set);
            say(out, format!("{name}: {} ({pos} transfer, {neg} no transfer) -> {}", set.len(), path.display()))?;
        }
    }
    Ok(())
}

fn gbt_params(cli: &Cli, a: &TrainArgs) -> Result<GbtParams> {
    let mut p = match &a.params {
        Some(path) => json_file::<GbtParams>(path)?,
        None => GbtParams { seed: cli.seed, ..GbtParams::default() },
    };
    if let Some(v) = a.trees {
        p.num_trees = v;
    }
    if let Some(v) = a.depth {
        p.max_depth = v;
    }
    if let Some(v) = a.learning_rate {
        p.learning_rate = v;
    }
    if let Some(v) = a.lambda {
        p.lambda = v;
    }
    if let Some(v) = a.gamma {
        p.gamma = v;
    }
    if let Some(v) = a.min_child_weight {
        p.min_child_weight = v;
    }
    if let Some(v) = a.colsample {
        p.colsample = v;
    }
    p.validate()?;
    Ok(p)
}

/// Fits gradient boosting, running the random search first when asked.
fn fit_gbt(
    cli: &Cli,
    a: &TrainArgs,
    data: &[Snapshot],
    out: &mut dyn Write,
) -> Result<(gbt::GbtModel, Option<SearchRecord>)> {
    let base = gbt_params(cli, a)?;
    let Some(trials) = a.search else {
        return Ok((gbt::fit(data, &base)?, None));
    };
    let space = match &a.search_space {
        Some(path) => json_file::<SearchSpace>(path)?,
        None => SearchSpace::default(),
    };
    let outcome = gbt::random_search(data, &base, &space, a.folds, trials, cli.seed)?;
    say(out, format!(
        "search: {trials} trials, best mean CV AUROC {:.4} (learning_rate {:.4}, lambda {:.4}, gamma {:.4}, min_child_weight {:.4}, colsample {:.4}, max_depth {})",
        outcome.best_mean_auroc,
        outcome.best.learning_rate,
        outcome.best.lambda,
        outcome.best.gamma,
        outcome.best.min_child_weight,
        outcome.best.colsample,
        outcome.best.max_depth,
    ))?;
    let record = SearchRecord { trials, folds: a.folds, best_mean_auroc: outcome.best_mean_auroc };
    Ok((gbt::fit(data, &outcome.best)?, Some(record)))
}

fn pews_table(a: &TrainArgs) -> Result<PewsTable> {
    match &a.pews_table {
        Some(path) => load_pews_table(path),
        None => Ok(default_pews_table()),
    }
}

fn train(cli: &Cli, a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let data = read_snapshots(&a.data)?;
    let (pos, neg) = class_counts(&data);
    if pos == 0 || neg == 0 {
        return Err(wardwatch_core::Error::Data(format!(
            "training data needs both classes ({pos} transfer, {neg} no transfer)"
        ))
        .into());
    }
    let bins = AgeBins::default();
    let model = match a.model {
        ModelKind::Ada => Model::Ada(ada::fit(&data, a.rounds, &bins)?),
        ModelKind::Gbt => {
            let (model, search) = fit_gbt(cli, a, &data, out)?;
            Model::Gbt { model, search }
        }
        ModelKind::Ensemble => {
            let (g, _) = fit_gbt(cli, a, &data, out)?;
            Model::Ensemble(EnsembleModel::new(ada::fit(&data, a.rounds, &bins)?, g, a.threshold)?)
        }
        ModelKind::Pews => Model::Pews(PewsBaseline::fit(pews_table(a)?, &data)?),
    };
    if a.cv {
        let cv = cross_validate_kind(cli, a, &model, &data)?;
        let folds: Vec<String> = cv.fold_auroc.iter().map(|v| format!("{v:.4}")).collect();
        say(out, format!("{}-fold CV mean AUROC {:.4} [{}]", a.folds, cv.mean_auroc, folds.join(", ")))?;
    }
    let path = cli.out.join(&a.name);
    model.save(&path)?;
    say(out, format!("{} model trained on {} snapshots -> {}", a.model.name(), data.len(), path.display()))
}

/// Cross-validates the fitted model's configuration (hyperparameters as
/// chosen, PEWS cutoff re-selected per fold).
fn cross_validate_kind(cli: &Cli, a: &TrainArgs, model: &Model, data: &[Snapshot]) -> Result<CvResult> {
    let bins = AgeBins::default();
    let cv = match model {
        Model::Ada(_) => cross_validate(|d| ada::fit(d, a.rounds, &bins), data, a.folds, cli.seed)?,
        Model::Gbt { model, .. } => {
            cross_validate(|d| gbt::fit(d, &model.params), data, a.folds, cli.seed)?
        }
        Model::Ensemble(m) => cross_validate(
            |d| EnsembleModel::new(ada::fit(d, a.rounds, &bins)?, gbt::fit(d, &m.gbt.params)?, m.threshold),
            data,
            a.folds,
            cli.seed,
        )?,
        Model::Pews(m) => cross_validate(|d| PewsBaseline::fit(m.table.clone(), d), data, a.folds, cli.seed)?,
    };
    Ok(cv)
}

fn eval(cli: &Cli, a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let model = Model::load(&a.model)?;
    let data = read_snapshots(&a.data)?;
    let threshold = match (model.kind(), a.threshold) {
        (ModelKind::Ada | ModelKind::Gbt, Some(t)) => t,
        _ => model.threshold(),
    };
    let scores: Vec<f64> = data.iter().map(|s| model.score(&s.features)).collect();
    let labels: Vec<Label> = data.iter().map(|s| s.label).collect();
    let report = evaluate(&scores, &labels, threshold)?;
    let report_path = cli.out.join("report.json");
    let roc_path = cli.out.join("roc.csv");
    let mut json = serde_json::to_string_pretty(&report).expect("reports serialize");
    json.push('\n');
    write_text(&report_path, &json)?;
    write_roc(&roc_path, &report.roc)?;
    say(out, format!(
        "{} on {} snapshots: accuracy {:.4}, sensitivity {:.4}, specificity {:.4}, AUROC {:.4} (threshold {}) -> {}, {}",
        model.kind().name(),
        data.len(),
        report.accuracy,
        report.sensitivity,
        report.specificity,
        report.auroc,
        threshold,
        report_path.display(),
        roc_path.display()
    ))
}

fn run_timeline(cli: &Cli, a: &TimelineArgs, out: &mut dyn Write) -> Result<()> {
    let model = Model::load(&a.model)?;
    let encounters = read_encounters(&a.encounters, &a.events)?;
    if !(a.window_hours >= 0.0 && a.window_hours.is_finite()) {
        return Err(Error::Usage(format!("--window-hours {} must be >= 0", a.window_hours)));
    }
    let end = match &a.end {
        Some(s) => Some(parse_time(s).ok_or_else(|| Error::Usage(format!("--end `{s}` is not an ISO-8601 timestamp")))?),
        None => None,
    };
    let selected: Vec<_> = if a.encounter_ids.is_empty() {
        encounters.iter().collect()
    } else {
        a.encounter_ids
            .iter()
            .map(|id| {
                encounters
                    .iter()
                    .find(|e| &e.encounter_id == id)
                    .ok_or_else(|| Error::Usage(format!("unknown encounter `{id}`")))
            })
            .collect::<Result<_>>()?
    };

    let path = cli.out.join("timeline.csv");
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| Error::Usage(format!("{}: {e}", path.display()));
    w.write_record(["encounter_id", "time", "probability"]).map_err(csv_err)?;
    let mut rows = 0;
    for enc in selected {
        let end = end.unwrap_or_else(|| default_window_end(enc));
        for row in timeline(&model, enc, end, a.window_hours)? {
            w.write_record([row.encounter_id, format_time(row.time), row.score.to_string()])
                .map_err(csv_err)?;
            rows += 1;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    say(out, format!("{rows} timeline rows -> {}", path.display()))
}
