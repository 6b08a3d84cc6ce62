//! Command-line interface: argument parsing, config-file merging and the
//! per-command output writers.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use latrec_core::datagen::{generate_distributional, generate_structural, generate_univariate, Domain, Splits, Variant};
use serde::Serialize;

use crate::config::{entries_to_args, parse_config, FlagSpec};
use crate::csvio::{format_float, save_dataset, write_panel_csv};
use crate::error::{Error, Result};
use crate::experiments::{
    check_conditions, refine, simulate_geen, simulate_rae, ConditionInput, Design, GeenOverrides, RaeOverrides,
    RefineOptions, Scale, SimulateGeenOptions, SimulateRaeOptions, SupportMode,
};
use crate::files::{format_family, format_support, parse_family, parse_support, read_text};
use crate::panelgen::{synthetic_panel, PanelSpec};
use crate::report::{OutputDir, Table, RESULTS, SUMMARY};
use crate::{model, svg};

#[derive(Parser, Debug)]
#[command(name = "latrec", version, about = "Latent variable recovery from noisy measurements")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train the density-based extractor on simulated univariate data.
    SimulateGeen(SimulateGeenArgs),
    /// Train the autoencoder on simulated multivariate data and score MCC.
    SimulateRae(SimulateRaeArgs),
    /// Extract a refined series from a panel CSV.
    Refine(RefineArgs),
    /// Check identification conditions of a support or a Gaussian family.
    CheckConditions(CheckConditionsArgs),
    /// Write a simulated dataset.
    GenData(GenDataArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ScaleArg::Desk)]
    pub scale: ScaleArg,
    /// File of `key = value` lines; later flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ScaleArg {
    Desk,
    Paper,
}

impl From<ScaleArg> for Scale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Paper => Scale::Paper,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct GeenArgs {
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Bandwidth multiplier.
    #[arg(long)]
    pub window: Option<f64>,
    /// Weight of the normalization penalty.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Batches per epoch (and training rows for simulated data).
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Feed the network z-scored columns instead of raw ones.
    #[arg(long)]
    pub standardize_input: bool,
}

impl GeenArgs {
    fn overrides(&self) -> GeenOverrides {
        GeenOverrides {
            restarts: self.restarts,
            window: self.window,
            lambda: self.lambda,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            n_train: self.n_train,
            epochs: self.epochs,
            standardize_input: self.standardize_input,
        }
    }
}

#[derive(Args, Debug)]
pub struct SimulateGeenArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "baseline")]
    pub variant: Variant,
    #[arg(long, default_value = "continuous")]
    pub domain: Domain,
    /// Grid-search window and penalty weight by validation loss first.
    #[arg(long)]
    pub tune: bool,
    #[command(flatten)]
    pub geen: GeenArgs,
}

#[derive(Args, Debug)]
pub struct SimulateRaeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "structural")]
    pub design: Design,
    /// Number of latents.
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    /// Measurement noise levels, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub sigma: Vec<f64>,
    /// Datasets per noise level.
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    #[arg(long, default_value = "known")]
    pub support: SupportMode,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Weight of the independence penalty.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Weight of the Jacobian sparsity penalty.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub train_rows: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "entity")]
    pub entity: String,
    #[arg(long, default_value = "period")]
    pub time: String,
    /// Measurement columns, official series first.
    #[arg(long, value_delimiter = ',', required = true)]
    pub columns: Vec<String>,
    /// Column with the true series, used only for evaluation.
    #[arg(long)]
    pub truth: Option<String>,
    /// Columns to remove time effects from (default: the official column).
    #[arg(long, value_delimiter = ',')]
    pub detrend: Vec<String>,
    /// Share of entities used for training.
    #[arg(long, default_value_t = 0.8)]
    pub fraction: f64,
    #[command(flatten)]
    pub geen: GeenArgs,
}

#[derive(Args, Debug)]
pub struct CheckConditionsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Support matrix file (rows of 0/1).
    #[arg(long, conflicts_with_all = ["family", "random_family"])]
    pub support: Option<PathBuf>,
    /// Gaussian family file (per regime: n means then n stds).
    #[arg(long, conflicts_with = "random_family")]
    pub family: Option<PathBuf>,
    /// Draw a random family with this many latents from `--seed`.
    #[arg(long)]
    pub random_family: Option<usize>,
    /// Evaluation points for family checks.
    #[arg(long, default_value_t = 16)]
    pub points: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Univariate,
    Structural,
    Distributional,
    Panel,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = DataKind::Univariate)]
    pub kind: DataKind,
    #[arg(long, default_value = "baseline")]
    pub variant: Variant,
    #[arg(long, default_value = "continuous")]
    pub domain: Domain,
    /// Latents (structural and distributional).
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Rows (structural and distributional).
    #[arg(long, default_value_t = 1000)]
    pub rows: usize,
    #[arg(long, default_value_t = 8000)]
    pub train: usize,
    #[arg(long, default_value_t = 1000)]
    pub validation: usize,
    #[arg(long, default_value_t = 1000)]
    pub test: usize,
    #[arg(long, default_value_t = 40)]
    pub entities: usize,
    #[arg(long, default_value_t = 50)]
    pub periods: usize,
    #[arg(long, default_value_t = 1.0)]
    pub shock_std: f64,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::SimulateGeen(a) => &a.common,
            Command::SimulateRae(a) => &a.common,
            Command::Refine(a) => &a.common,
            Command::CheckConditions(a) => &a.common,
            Command::GenData(a) => &a.common,
        }
    }
}

/// The parser; a repeated flag keeps its last value, which lets the command
/// line override config-file entries.
pub fn command() -> clap::Command {
    let mut cmd = Cli::command();
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for n in names {
        cmd = cmd.mut_subcommand(n, |s| s.args_override_self(true));
    }
    cmd
}

/// Parses arguments with config files merged in.
pub fn parse<I, T>(args: I) -> Result<std::result::Result<Cli, clap::Error>>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = merge_config(args.into_iter().map(Into::into).collect())?;
    Ok(command()
        .try_get_matches_from(args)
        .and_then(|m| Cli::from_arg_matches(&m)))
}

/// Finds `--config FILE` after the subcommand and splices the file's
/// entries in directly after the subcommand name.
fn merge_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(sub_pos) = args.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')).map(|p| p + 1)
    else {
        return Ok(args);
    };
    let mut path = None;
    let mut i = sub_pos + 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if a == "--config" {
            path = args.get(i + 1).map(PathBuf::from);
            i += 1;
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
        i += 1;
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let sub = args[sub_pos].to_string_lossy().into_owned();
    let cmd = Cli::command();
    let Some(sc) = cmd.find_subcommand(&sub) else {
        return Ok(args);
    };
    let flags: Vec<FlagSpec> = sc
        .get_arguments()
        .filter_map(|a| {
            let name = a.get_long()?;
            (name != "config" && name != "help").then(|| FlagSpec {
                name: name.to_string(),
                takes_value: a.get_action().takes_values(),
            })
        })
        .collect();
    let context = path.display().to_string();
    let entries = parse_config(&read_text(&path)?, &context)?;
    let extra = entries_to_args(&entries, &flags, &context)?;
    let mut out: Vec<OsString> = args[..=sub_pos].to_vec();
    out.extend(extra.into_iter().map(OsString::from));
    out.extend(args[sub_pos + 1..].iter().cloned());
    Ok(out)
}

/// What a run printed, for tests and the binary.
#[derive(Debug)]
pub struct Outcome {
    pub message: String,
    pub files: Vec<String>,
}

/// Parses and runs; returns the process exit code. Help and version go to
/// stdout with code 0.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match parse(args) {
        Ok(Ok(c)) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
        Ok(Err(e)) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli.command) {
        Ok(o) => {
            println!("{}", o.message);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: &Command) -> Result<Outcome> {
    let start = Instant::now();
    let common = command.common();
    let mut out = OutputDir::create(&common.out)?;
    let (name, config, message) = match command {
        Command::SimulateGeen(a) => run_simulate_geen(a, &mut out)?,
        Command::SimulateRae(a) => run_simulate_rae(a, &mut out)?,
        Command::Refine(a) => run_refine(a, &mut out)?,
        Command::CheckConditions(a) => run_check_conditions(a, &mut out)?,
        Command::GenData(a) => run_gen_data(a, &mut out)?,
    };
    let files = out.finish(name, &config, start.elapsed().as_secs_f64())?;
    Ok(Outcome { message, files })
}

type Ran = (&'static str, serde_json::Value, String);

fn run_simulate_geen(a: &SimulateGeenArgs, out: &mut OutputDir) -> Result<Ran> {
    let options = SimulateGeenOptions {
        variant: a.variant,
        domain: a.domain,
        scale: a.common.scale.into(),
        seed: a.common.seed,
        overrides: a.geen.overrides(),
        tune: a.tune,
    };
    let run = simulate_geen(&options)?;
    let mut t = Table::new(vec![
        "restart",
        "seed",
        "steps",
        "train_loss",
        "validation_loss",
        "test_corr",
        "selected",
    ]);
    for r in &run.rows {
        t.push(vec![
            r.restart.into(),
            r.seed.into(),
            r.steps.into(),
            r.train_loss.into(),
            r.validation_loss.into(),
            r.test_corr.into(),
            r.selected.into(),
        ]);
    }
    out.table(RESULTS, &t)?;
    out.json(SUMMARY, &run.summary)?;
    out.text("model.json", &model::to_json("geen", &run.model)?)?;
    let corrs: Vec<f64> = run.rows.iter().filter_map(|r| r.test_corr).collect();
    let title = format!("{} / {}: test correlation", options.variant.name(), options.domain.name());
    out.text(
        "test_corr.svg",
        &svg::box_plot(&title, "corr", &[("restarts".to_string(), corrs)]),
    )?;
    let s = &run.summary;
    let message = format!(
        "{} {}: median corr {:.4} (min {:.4}, max {:.4}), selected restart {} corr {:.4}, corr(Z, X1) {:.4}{}",
        options.variant.name(),
        options.domain.name(),
        s.test_corr.median,
        s.test_corr.min,
        s.test_corr.max,
        s.selected_restart,
        s.selected_test_corr,
        s.corr_x1,
        s.kmeans_corr.map(|k| format!(", k-means {k:.4}")).unwrap_or_default()
    );
    let config = serde_json::json!({ "options": options, "resolved": s.config });
    Ok(("simulate-geen", config, message))
}

fn run_simulate_rae(a: &SimulateRaeArgs, out: &mut OutputDir) -> Result<Ran> {
    let options = SimulateRaeOptions {
        design: a.design,
        n: a.n,
        sigmas: a.sigma.clone(),
        seeds: a.seeds,
        scale: a.common.scale.into(),
        seed: a.common.seed,
        support: a.support,
        overrides: RaeOverrides {
            epochs: a.epochs,
            restarts: a.restarts,
            batch_size: a.batch_size,
            learning_rate: a.learning_rate,
            beta: a.beta,
            gamma: a.gamma,
            train_rows: a.train_rows,
        },
    };
    let run = simulate_rae(&options)?;
    let mut t = Table::new(vec![
        "sigma",
        "run",
        "seed",
        "mcc",
        "validation_loss",
        "validation_loglik",
        "clamped",
    ]);
    for r in &run.rows {
        t.push(vec![
            r.sigma.into(),
            r.run.into(),
            r.seed.into(),
            r.mcc.into(),
            r.validation_loss.into(),
            r.validation_loglik.into(),
            r.clamped.into(),
        ]);
    }
    out.table(RESULTS, &t)?;
    out.json(SUMMARY, &run.summary)?;
    let groups: Vec<(String, Vec<f64>)> = run
        .summary
        .groups
        .iter()
        .map(|g| {
            let v = run.rows.iter().filter(|r| r.sigma == g.sigma).map(|r| r.mcc).collect();
            (format!("sigma={}", g.sigma), v)
        })
        .collect();
    out.text("mcc.svg", &svg::box_plot(&format!("MCC, n = {}", options.n), "MCC", &groups))?;
    let message = run
        .summary
        .groups
        .iter()
        .map(|g| {
            format!(
                "n={} sigma={}: median MCC {:.4} (min {:.4}, max {:.4})",
                options.n, g.sigma, g.mcc.median, g.mcc.min, g.mcc.max
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    let config = serde_json::json!({ "options": options, "resolved": run.summary.config, "splits": run.summary.splits });
    Ok(("simulate-rae", config, message))
}

fn run_refine(a: &RefineArgs, out: &mut OutputDir) -> Result<Ran> {
    let options = RefineOptions {
        input: a.input.clone(),
        entity: a.entity.clone(),
        time: a.time.clone(),
        columns: a.columns.clone(),
        truth: a.truth.clone(),
        detrend: a.detrend.clone(),
        fraction: a.fraction,
        scale: a.common.scale.into(),
        seed: a.common.seed,
        overrides: a.geen.overrides(),
    };
    let run = refine(&options)?;
    if run.summary.rows_dropped > 0 {
        eprintln!("dropped {} rows with missing measurements", run.summary.rows_dropped);
    }
    let mut refined = Table::new(vec![
        "entity",
        "time",
        "official",
        "refined",
        "official_minus_refined",
        "truth",
    ]);
    for r in &run.refined {
        refined.push(vec![
            r.entity.clone().into(),
            r.time.into(),
            r.official.into(),
            r.refined.into(),
            r.difference.into(),
            r.truth.into(),
        ]);
    }
    out.table("refined.csv", &refined)?;
    let mut effects = Table::new(vec!["time", "column", "effect"]);
    for (time, values) in &run.effects.effects {
        for (c, v) in run.effects.columns.iter().zip(values) {
            effects.push(vec![(*time).into(), c.clone().into(), (*v).into()]);
        }
    }
    out.table("time_effects.csv", &effects)?;
    let mut t = Table::new(vec!["restart", "seed", "steps", "train_loss", "validation_loss", "selected"]);
    for r in &run.restarts {
        t.push(vec![
            r.restart.into(),
            r.seed.into(),
            r.steps.into(),
            r.train_loss.into(),
            r.validation_loss.into(),
            r.selected.into(),
        ]);
    }
    out.table(RESULTS, &t)?;
    out.json(SUMMARY, &run.summary)?;
    out.text("model.json", &model::to_json("geen", &run.model)?)?;
    out.text("series.svg", &series_plot(&run))?;
    let s = &run.summary;
    let mut message = format!(
        "refined {} rows ({} dropped), selected restart {}",
        s.rows_used, s.rows_dropped, s.selected_restart
    );
    if let (Some(r), Some(o)) = (s.corr_refined_truth, s.corr_official_truth) {
        message.push_str(&format!(", corr with truth: refined {r:.4}, official {o:.4}"));
    }
    let config = serde_json::json!({ "options": options, "resolved": s.config });
    Ok(("refine", config, message))
}

/// Per-period means of the official and refined series.
fn series_plot(run: &crate::experiments::RefineRun) -> String {
    use std::collections::BTreeMap;
    let mut by_time: BTreeMap<i64, (f64, f64, f64, usize)> = BTreeMap::new();
    for r in &run.refined {
        let e = by_time.entry(r.time).or_insert((0.0, 0.0, 0.0, 0));
        e.0 += r.official;
        e.1 += r.refined;
        e.2 += r.difference;
        e.3 += 1;
    }
    let x: Vec<f64> = by_time.keys().map(|&t| t as f64).collect();
    let mean = |k: usize| -> Vec<f64> {
        by_time
            .values()
            .map(|v| [v.0, v.1, v.2][k] / v.3 as f64)
            .collect()
    };
    svg::line_plot(
        "Per-period means",
        "period",
        &x,
        &[
            ("official".to_string(), mean(0)),
            ("refined".to_string(), mean(1)),
            ("official - refined".to_string(), mean(2)),
        ],
    )
}

fn run_check_conditions(a: &CheckConditionsArgs, out: &mut OutputDir) -> Result<Ran> {
    let (input, source) = match (&a.support, &a.family, a.random_family) {
        (Some(p), _, _) => {
            let ctx = p.display().to_string();
            (ConditionInput::Support(parse_support(&read_text(p)?, &ctx)?), ctx)
        }
        (_, Some(p), _) => {
            let ctx = p.display().to_string();
            (ConditionInput::Family(parse_family(&read_text(p)?, &ctx)?), ctx)
        }
        (_, _, Some(n)) => {
            let (_, fam) = generate_distributional(n, 1, a.common.seed)?;
            (ConditionInput::Family(fam), format!("random family, n = {n}"))
        }
        _ => {
            return Err(Error::usage(
                "check-conditions needs one of --support, --family or --random-family",
            ))
        }
    };
    let summary = check_conditions(&input, a.points, a.common.seed)?;
    let mut t;
    match &input {
        ConditionInput::Support(_) => {
            t = Table::new(vec!["latent", "identified"]);
            for (k, ok) in summary.report.per_latent.iter().enumerate() {
                t.push(vec![format!("Z{}", k + 1).into(), (*ok).into()]);
            }
        }
        ConditionInput::Family(_) => {
            t = Table::new(vec!["point", "coordinates", "rank", "smallest_singular_value"]);
            for (i, p) in summary.points.iter().enumerate() {
                let coords = p.point.iter().map(|v| format_float(*v)).collect::<Vec<_>>().join(" ");
                t.push(vec![i.into(), coords.into(), p.rank.into(), p.smallest_singular_value.into()]);
            }
        }
    }
    out.table(RESULTS, &t)?;
    out.json(SUMMARY, &summary)?;
    out.json("report.json", &summary.report)?;
    let message = format!("{source}: {}", summary.verdict);
    let config = serde_json::json!({ "input": input, "source": source, "points": a.points, "seed": a.common.seed });
    Ok(("check-conditions", config, message))
}

#[derive(Serialize)]
struct GenSummary {
    kind: DataKind,
    rows: usize,
    columns: usize,
    latents: usize,
    files: Vec<String>,
}

fn run_gen_data(a: &GenDataArgs, out: &mut OutputDir) -> Result<Ran> {
    let data = out.path("data.csv");
    let seed = a.common.seed;
    let (rows, columns, latents, mut files) = match a.kind {
        DataKind::Univariate => {
            let splits = Splits {
                train: a.train,
                validation: a.validation,
                test: a.test,
            };
            let ds = generate_univariate(a.variant, a.domain, splits, seed)?;
            save_dataset(&data, &ds)?;
            (ds.rows(), ds.x.cols(), 1, vec![])
        }
        DataKind::Structural => {
            let (ds, support) = generate_structural(a.n, a.sigma, a.rows, seed)?;
            save_dataset(&data, &ds)?;
            out.text("support.txt", &format_support(&support))?;
            (ds.rows(), ds.x.cols(), a.n, vec!["support.txt".to_string()])
        }
        DataKind::Distributional => {
            let (ds, fam) = generate_distributional(a.n, a.rows, seed)?;
            save_dataset(&data, &ds)?;
            out.text("family.txt", &format_family(&fam))?;
            (ds.rows(), ds.x.cols(), a.n, vec!["family.txt".to_string()])
        }
        DataKind::Panel => {
            let spec = PanelSpec {
                entities: a.entities,
                periods: a.periods,
                variant: a.variant,
                shock_std: a.shock_std,
                seed,
            };
            let panel = synthetic_panel(&spec)?;
            write_panel_csv(&data, &panel)?;
            (panel.len(), panel.columns.len() - 1, 1, vec![])
        }
    };
    files.insert(0, "data.csv".to_string());
    out.record("data.csv");
    let summary = GenSummary {
        kind: a.kind,
        rows,
        columns,
        latents,
        files,
    };
    out.json(SUMMARY, &summary)?;
    let message = format!("wrote {rows} rows x {columns} measurements to {}", data.display());
    let config = serde_json::json!({
        "kind": a.kind, "seed": seed, "variant": a.variant, "domain": a.domain, "n": a.n, "sigma": a.sigma,
        "rows": a.rows, "train": a.train, "validation": a.validation, "test": a.test,
        "entities": a.entities, "periods": a.periods, "shock_std": a.shock_std,
    });
    Ok(("gen-data", config, message))
}
