//! The runs behind each CLI command. Every function returns its report and
//! writes nothing; [`crate::output`] turns reports into files.

use std::path::PathBuf;

use latrec_core::conditions::{check_distributional, check_distributional_at, check_structural, ConditionReport};
use latrec_core::datagen::{
    generate_distributional, generate_structural, generate_univariate, Dataset, Domain, GaussianFamily, Splits,
    SupportMatrix, Variant,
};
use latrec_core::geen::{
    extract, select_restart, tune_hyperparameters, GeenConfig, TrainedGeen, TuningTrial, DEFAULT_LAMBDAS,
    DEFAULT_WINDOWS,
};
use latrec_core::metrics::{
    cluster_modes, init_one_per_class, kmeans_baseline, mcc, pearson, summarize_runs, CorrelationMethod, RunSummary,
};
use latrec_core::panel::{detrend_time_effects, retrend, split_train_validation, PanelDataset, TimeEffects};
use latrec_core::rae::{encode, RaeConfig, TrainedRae};
use latrec_core::rng::{derive_seed, normal, Stream};
use latrec_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::csvio::{read_panel_csv, PanelSchema};
use crate::error::{Error, Result};
use crate::parallel;

/// Run-size presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Paper,
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(Error::usage(format!("unknown scale `{other}` (expected desk or paper)"))),
        }
    }
}

impl Scale {
    /// Extractor settings for `m` observed columns.
    pub fn geen(self, m: usize) -> GeenConfig {
        let mut c = GeenConfig::new(m);
        match self {
            Scale::Desk => {
                c.n_train = 2000;
                c.batch_size = 200;
                c.restarts = 5;
            }
            Scale::Paper => {
                c.n_train = 8000;
                c.batch_size = 500;
                c.restarts = 25;
            }
        }
        c
    }

    /// Autoencoder settings plus `(train, validation, test)` row counts.
    pub fn rae(self, n: usize, m: usize) -> (RaeConfig, Splits) {
        let mut c = RaeConfig::new(n, m);
        match self {
            Scale::Desk => {
                c.epochs = 20;
                c.restarts = 1;
                let splits = Splits {
                    train: 5000,
                    validation: 1000,
                    test: 2000,
                };
                (c, splits)
            }
            Scale::Paper => {
                c.epochs = 50;
                c.restarts = 3;
                let splits = Splits {
                    train: 10_000,
                    validation: 2000,
                    test: 2000,
                };
                (c, splits)
            }
        }
    }
}

/// Optional overrides of the extractor preset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeenOverrides {
    pub restarts: Option<usize>,
    pub window: Option<f64>,
    pub lambda: Option<f64>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub n_train: Option<usize>,
    pub epochs: Option<usize>,
    pub standardize_input: bool,
}

impl GeenOverrides {
    pub fn apply(&self, c: &mut GeenConfig) {
        if let Some(v) = self.restarts {
            c.restarts = v;
        }
        if let Some(v) = self.window {
            c.window = v;
        }
        if let Some(v) = self.lambda {
            c.lambda = v;
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.n_train {
            c.n_train = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if self.standardize_input {
            c.standardize_input = true;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateGeenOptions {
    pub variant: Variant,
    pub domain: Domain,
    pub scale: Scale,
    pub seed: u64,
    pub overrides: GeenOverrides,
    /// Grid-search window and penalty weight before the final run.
    pub tune: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeenRestartRow {
    pub restart: usize,
    pub seed: u64,
    pub steps: usize,
    pub train_loss: Option<f64>,
    pub validation_loss: Option<f64>,
    /// Test-set correlation between the truth and this restart's latent.
    pub test_corr: Option<f64>,
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeenSummary {
    pub variant: Variant,
    pub domain: Domain,
    pub scale: Scale,
    pub seed: u64,
    pub config: GeenConfig,
    /// Min, median and max test correlation over restarts.
    pub test_corr: RunSummary,
    pub selected_restart: usize,
    pub selected_test_corr: f64,
    pub selected_validation_loss: f64,
    /// Test-set correlation between the truth and the first measurement.
    pub corr_x1: f64,
    /// Cluster-mode baseline (discrete latents only).
    pub kmeans_corr: Option<f64>,
    pub tuning: Option<Vec<TuningTrial>>,
}

#[derive(Clone, Debug)]
pub struct GeenRun {
    pub rows: Vec<GeenRestartRow>,
    pub summary: GeenSummary,
    pub model: TrainedGeen,
}

pub fn geen_config(options: &SimulateGeenOptions) -> GeenConfig {
    let mut c = options.scale.geen(4);
    options.overrides.apply(&mut c);
    c.seed = options.seed;
    c
}

pub fn simulate_geen(options: &SimulateGeenOptions) -> Result<GeenRun> {
    let mut config = geen_config(options);
    config.validate()?;
    let splits = Splits {
        train: config.n_train,
        validation: config.n_validation,
        test: config.n_test,
    };
    let ds = generate_univariate(options.variant, options.domain, splits, options.seed)?;
    let (train, valid, test) = ds.split()?;
    let tuning = if options.tune {
        let (tuned, trials) = tune_hyperparameters(&train.x, &valid.x, &DEFAULT_WINDOWS, &DEFAULT_LAMBDAS, &config)?;
        config = tuned;
        Some(trials)
    } else {
        None
    };
    let outcomes = parallel::geen_restarts(&train.x, &valid.x, &config)?;
    let model = select_restart(&train.x, &valid.x, &config, outcomes.clone())?;
    let truth = test.latent(0).expect("generated data carry the latent");
    let mut rows = Vec::with_capacity(outcomes.len());
    for o in &outcomes {
        let corr = match parallel::geen_restart_model(&train.x, &valid.x, &config, o)? {
            Some(m) => Some(signed_corr(&truth, &extract(&m, &test.x)?)),
            None => None,
        };
        rows.push(GeenRestartRow {
            restart: o.record.index,
            seed: o.record.seed,
            steps: o.record.steps,
            train_loss: o.record.train_loss,
            validation_loss: o.record.validation_loss,
            test_corr: corr,
            selected: o.record.index == model.selected_restart,
        });
    }
    let corrs: Vec<f64> = rows.iter().filter_map(|r| r.test_corr).collect();
    let selected_test_corr = signed_corr(&truth, &extract(&model, &test.x)?);
    let kmeans_corr = match options.domain {
        Domain::Discrete => Some(kmeans_corr(&test, options.seed)?),
        Domain::Continuous => None,
    };
    let summary = GeenSummary {
        variant: options.variant,
        domain: options.domain,
        scale: options.scale,
        seed: options.seed,
        config: config.clone(),
        test_corr: summarize_runs(&corrs)?,
        selected_restart: model.selected_restart,
        selected_test_corr,
        selected_validation_loss: model.validation_loss,
        corr_x1: signed_corr(&truth, &test.x.col(0)),
        kmeans_corr,
        tuning,
    };
    Ok(GeenRun { rows, summary, model })
}

/// Pearson correlation, or 0 when either side is constant.
fn signed_corr(a: &[f64], b: &[f64]) -> f64 {
    pearson(a, b).unwrap_or(0.0)
}

/// Clusters the raw test rows into one cluster per distinct latent value,
/// starting from one row of each value, and maps every cluster to its most
/// frequent latent value.
pub fn kmeans_corr(test: &Dataset, seed: u64) -> Result<f64> {
    let truth = test.latent(0).ok_or_else(|| Error::usage("k-means baseline needs the true latent"))?;
    let init = init_one_per_class(&truth, &mut Stream::new(seed, 70_000));
    let res = kmeans_baseline(&test.x, init.len(), &init, 300)?;
    let modes = cluster_modes(&res.labels, &truth, init.len());
    let predicted: Vec<f64> = res.labels.iter().map(|&l| modes[l]).collect();
    Ok(signed_corr(&truth, &predicted))
}

/// Which latents each decoder may read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportMode {
    /// The generator's support.
    Known,
    /// Every latent feeds every decoder; sparsity comes from the penalty.
    Learned,
}

impl std::str::FromStr for SupportMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "known" => Ok(SupportMode::Known),
            "learned" => Ok(SupportMode::Learned),
            other => Err(Error::usage(format!("unknown support mode `{other}` (expected known or learned)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Structural,
    Distributional,
}

impl std::str::FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structural" => Ok(Design::Structural),
            "distributional" => Ok(Design::Distributional),
            other => Err(Error::usage(format!(
                "unknown design `{other}` (expected structural or distributional)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RaeOverrides {
    pub epochs: Option<usize>,
    pub restarts: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub train_rows: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateRaeOptions {
    pub design: Design,
    pub n: usize,
    /// Measurement noise levels (structural design); one group of runs each.
    pub sigmas: Vec<f64>,
    /// Independent datasets per noise level.
    pub seeds: usize,
    pub scale: Scale,
    pub seed: u64,
    pub support: SupportMode,
    pub overrides: RaeOverrides,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaeRunRow {
    pub sigma: f64,
    pub run: usize,
    pub seed: u64,
    pub mcc: f64,
    pub validation_loss: f64,
    pub validation_loglik: f64,
    pub clamped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaeGroupSummary {
    pub sigma: f64,
    pub mcc: RunSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaeSummary {
    pub design: Design,
    pub n: usize,
    pub scale: Scale,
    pub seed: u64,
    pub support: SupportMode,
    pub config: RaeConfig,
    pub splits: Splits,
    pub groups: Vec<RaeGroupSummary>,
}

#[derive(Clone, Debug)]
pub struct RaeRun {
    pub rows: Vec<RaeRunRow>,
    pub summary: RaeSummary,
}

pub fn rae_setup(options: &SimulateRaeOptions) -> Result<(RaeConfig, Splits)> {
    if options.n == 0 {
        return Err(Error::usage("need at least one latent"));
    }
    let (mut c, mut splits) = options.scale.rae(options.n, 3 * options.n);
    let o = &options.overrides;
    if let Some(v) = o.epochs {
        c.epochs = v;
    }
    if let Some(v) = o.restarts {
        c.restarts = v;
    }
    if let Some(v) = o.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = o.learning_rate {
        c.learning_rate = v;
    }
    if let Some(v) = o.beta {
        c.beta = v;
    }
    if let Some(v) = o.gamma {
        c.gamma = v;
    }
    if let Some(v) = o.train_rows {
        splits.train = v;
    }
    c.validate()?;
    Ok((c, splits))
}

/// Support used by both designs: three measurements per latent.
fn design_data(options: &SimulateRaeOptions, sigma: f64, seed: u64, rows: usize) -> Result<(Dataset, SupportMatrix)> {
    match options.design {
        Design::Structural => Ok(generate_structural(options.n, sigma, rows, seed)?),
        Design::Distributional => {
            let (ds, _) = generate_distributional(options.n, rows, seed)?;
            let (_, support) = generate_structural(options.n, 1.0, 1, seed)?;
            Ok((ds, support))
        }
    }
}

pub fn simulate_rae(options: &SimulateRaeOptions) -> Result<RaeRun> {
    let (base, splits) = rae_setup(options)?;
    if options.sigmas.is_empty() || options.seeds == 0 {
        return Err(Error::usage("need at least one noise level and one seed"));
    }
    let sigmas = match options.design {
        Design::Structural => options.sigmas.clone(),
        // Distributional data use unit noise.
        Design::Distributional => vec![1.0],
    };
    let jobs: Vec<(f64, usize)> = sigmas
        .iter()
        .flat_map(|&s| (0..options.seeds).map(move |r| (s, r)))
        .collect();
    use rayon::prelude::*;
    let rows: Vec<RaeRunRow> = jobs
        .par_iter()
        .enumerate()
        .map(|(j, &(sigma, run))| -> Result<RaeRunRow> {
            let group = j / options.seeds;
            let seed = derive_seed(derive_seed(options.seed, group as u64), run as u64);
            let (ds, support) = design_data(options, sigma, seed, splits.total())?;
            let train = ds.slice(0, splits.train);
            let valid = ds.slice(splits.train, splits.validation);
            let test = ds.slice(splits.train + splits.validation, splits.test);
            let mut config = base.clone();
            config.seed = seed;
            if options.support == SupportMode::Known {
                config.support = Some(support);
            }
            let model = parallel::train_rae(&train.x, &valid.x, &config)?;
            let score = rae_mcc(&model, &test)?;
            Ok(RaeRunRow {
                sigma,
                run,
                seed,
                mcc: score,
                validation_loss: model.validation_loss,
                validation_loglik: model.validation_loglik,
                clamped: model.clamped,
            })
        })
        .collect::<Result<_>>()?;
    let groups = sigmas
        .iter()
        .map(|&s| {
            let v: Vec<f64> = rows.iter().filter(|r| r.sigma == s).map(|r| r.mcc).collect();
            Ok(RaeGroupSummary {
                sigma: s,
                mcc: summarize_runs(&v)?,
            })
        })
        .collect::<Result<_>>()?;
    let summary = RaeSummary {
        design: options.design,
        n: options.n,
        scale: options.scale,
        seed: options.seed,
        support: options.support,
        config: base,
        splits,
        groups,
    };
    Ok(RaeRun { rows, summary })
}

/// MCC between the true latents and the encoder's latents on `test`.
pub fn rae_mcc(model: &TrainedRae, test: &Dataset) -> Result<f64> {
    let z = test.z.as_ref().ok_or_else(|| Error::usage("test data carry no latents"))?;
    let (z_hat, _) = encode(model, &test.x)?;
    Ok(mcc(z, &z_hat, CorrelationMethod::Pearson)?.score)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineOptions {
    pub input: PathBuf,
    pub entity: String,
    pub time: String,
    /// Measurement columns; the first is the official series.
    pub columns: Vec<String>,
    /// Optional column holding the true series, for evaluation only.
    pub truth: Option<String>,
    /// Columns whose time effects are removed; defaults to the official column.
    pub detrend: Vec<String>,
    pub fraction: f64,
    pub scale: Scale,
    pub seed: u64,
    pub overrides: GeenOverrides,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinedRow {
    pub entity: String,
    pub time: i64,
    pub official: f64,
    pub refined: f64,
    /// Official minus refined.
    pub difference: f64,
    pub truth: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineSummary {
    pub columns: Vec<String>,
    pub detrended: Vec<String>,
    pub rows_used: usize,
    pub rows_dropped: usize,
    pub train_entities: usize,
    pub validation_entities: usize,
    pub config: GeenConfig,
    pub selected_restart: usize,
    pub validation_loss: f64,
    pub corr_refined_truth: Option<f64>,
    pub corr_official_truth: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RefineRun {
    pub refined: Vec<RefinedRow>,
    pub restarts: Vec<GeenRestartRow>,
    pub effects: TimeEffects,
    pub summary: RefineSummary,
    pub model: TrainedGeen,
}

fn panel_matrix(panel: &PanelDataset, columns: &[String]) -> Result<Matrix> {
    let idx: Vec<usize> = columns.iter().map(|c| panel.column_index(c)).collect::<latrec_core::Result<_>>()?;
    let mut data = Vec::with_capacity(panel.len() * idx.len());
    for r in panel.rows() {
        for &j in &idx {
            data.push(r.values[j].expect("rows with missing inputs were dropped"));
        }
    }
    Ok(Matrix::from_vec(panel.len(), idx.len(), data)?)
}

pub fn refine(options: &RefineOptions) -> Result<RefineRun> {
    if options.columns.len() < 3 {
        return Err(Error::usage(format!(
            "refine needs at least three measurement columns (the measurements must split into three \
             conditionally independent parts), got {}",
            options.columns.len()
        )));
    }
    let mut wanted = options.columns.clone();
    if let Some(t) = &options.truth {
        if !wanted.contains(t) {
            wanted.push(t.clone());
        }
    }
    let schema = PanelSchema {
        entity: options.entity.clone(),
        time: options.time.clone(),
        measurements: wanted,
    };
    let raw = read_panel_csv(&options.input, &schema)?;
    let m = options.columns.len();
    let kept: Vec<_> = raw
        .rows()
        .iter()
        .filter(|r| r.values[..m].iter().all(Option::is_some))
        .cloned()
        .collect();
    let rows_dropped = raw.len() - kept.len();
    let panel = PanelDataset::new(raw.entity_column.clone(), raw.time_column.clone(), raw.columns.clone(), kept)?;
    if panel.len() < 2 {
        return Err(Error::usage("fewer than two complete rows after dropping missing measurements"));
    }
    let detrend: Vec<String> = if options.detrend.is_empty() {
        vec![options.columns[0].clone()]
    } else {
        options.detrend.clone()
    };
    if let Some(bad) = detrend.iter().find(|d| !options.columns.contains(d)) {
        return Err(Error::usage(format!("detrend column `{bad}` is not a measurement column")));
    }
    let names: Vec<&str> = detrend.iter().map(String::as_str).collect();
    let (flat, effects) = detrend_time_effects(&panel, &names)?;

    // A single entity cannot be split; it then serves as its own validation set.
    let (train_p, valid_p) = if flat.entities().len() >= 2 {
        split_train_validation(&flat, options.fraction, options.seed)?
    } else {
        (flat.clone(), flat.clone())
    };
    let train = panel_matrix(&train_p, &options.columns)?;
    let valid = panel_matrix(&valid_p, &options.columns)?;
    let mut config = options.scale.geen(m);
    options.overrides.apply(&mut config);
    config.seed = options.seed;
    config.batch_size = config.batch_size.min(train.rows());
    config.validate()?;
    let (model, outcomes) = parallel::train_geen(&train, &valid, &config)?;

    let all = panel_matrix(&flat, &options.columns)?;
    let z = extract(&model, &all)?;
    let times: Vec<i64> = flat.rows().iter().map(|r| r.time).collect();
    let official_name = &options.columns[0];
    let refined = if detrend.contains(official_name) {
        retrend(&times, &z, &effects, official_name)?
    } else {
        z
    };
    let official = panel.column(official_name)?;
    let truth: Option<Vec<Option<f64>>> = options.truth.as_ref().map(|t| panel.column(t)).transpose()?;
    let mut out = Vec::with_capacity(panel.len());
    for (i, r) in panel.rows().iter().enumerate() {
        let o = official[i].expect("complete row");
        out.push(RefinedRow {
            entity: r.entity.clone(),
            time: r.time,
            official: o,
            refined: refined[i],
            difference: o - refined[i],
            truth: truth.as_ref().and_then(|t| t[i]),
        });
    }
    let (corr_refined_truth, corr_official_truth) = match &truth {
        Some(_) => {
            let pairs: Vec<&RefinedRow> = out.iter().filter(|r| r.truth.is_some()).collect();
            let t: Vec<f64> = pairs.iter().map(|r| r.truth.unwrap()).collect();
            let rf: Vec<f64> = pairs.iter().map(|r| r.refined).collect();
            let of: Vec<f64> = pairs.iter().map(|r| r.official).collect();
            (Some(signed_corr(&t, &rf)), Some(signed_corr(&t, &of)))
        }
        None => (None, None),
    };
    let restarts = outcomes
        .iter()
        .map(|o| GeenRestartRow {
            restart: o.record.index,
            seed: o.record.seed,
            steps: o.record.steps,
            train_loss: o.record.train_loss,
            validation_loss: o.record.validation_loss,
            test_corr: None,
            selected: o.record.index == model.selected_restart,
        })
        .collect();
    let summary = RefineSummary {
        columns: options.columns.clone(),
        detrended: detrend,
        rows_used: panel.len(),
        rows_dropped,
        train_entities: train_p.entities().len(),
        validation_entities: valid_p.entities().len(),
        config,
        selected_restart: model.selected_restart,
        validation_loss: model.validation_loss,
        corr_refined_truth,
        corr_official_truth,
    };
    Ok(RefineRun {
        refined: out,
        restarts,
        effects,
        summary,
        model,
    })
}

/// What to check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConditionInput {
    Support(SupportMatrix),
    Family(GaussianFamily),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionPointRow {
    pub point: Vec<f64>,
    pub rank: usize,
    pub smallest_singular_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub verdict: String,
    pub satisfied: bool,
    pub report: ConditionReport,
    /// Per-point results (distributional checks only).
    pub points: Vec<ConditionPointRow>,
}

/// Structural supports are checked exactly; families at `points` random
/// evaluation points (N(0, 4) per coordinate), reporting the worst one.
pub fn check_conditions(input: &ConditionInput, points: usize, seed: u64) -> Result<ConditionSummary> {
    match input {
        ConditionInput::Support(f) => {
            let report = check_structural(f);
            let failed: Vec<String> = report
                .per_latent
                .iter()
                .enumerate()
                .filter(|(_, ok)| !**ok)
                .map(|(k, _)| format!("Z{}", k + 1))
                .collect();
            let verdict = if failed.is_empty() {
                "satisfied".to_string()
            } else if failed.len() == report.per_latent.len() {
                "violated for every latent".to_string()
            } else {
                format!("violated for {}", failed.join(", "))
            };
            Ok(ConditionSummary {
                verdict,
                satisfied: report.satisfied,
                report,
                points: Vec::new(),
            })
        }
        ConditionInput::Family(fam) => {
            if points == 0 {
                return Err(Error::usage("need at least one evaluation point"));
            }
            let n = fam.latents();
            let mut rng = Stream::new(seed, 0);
            let pts: Vec<Vec<f64>> = (0..points)
                .map(|_| (0..n).map(|_| normal(&mut rng, 0.0, 2.0)).collect())
                .collect();
            let mut rows = Vec::with_capacity(points);
            for p in &pts {
                let rep = check_distributional(fam, p)?;
                let smallest = match &rep.witness {
                    latrec_core::conditions::Witness::Distributional { singular_values, .. } => {
                        singular_values.last().copied().unwrap_or(0.0)
                    }
                    _ => unreachable!("distributional check"),
                };
                rows.push(ConditionPointRow {
                    point: p.clone(),
                    rank: rep.rank().unwrap_or(0),
                    smallest_singular_value: smallest,
                });
            }
            let report = check_distributional_at(fam, &pts)?;
            let rank = report.rank().unwrap_or(0);
            let verdict = if report.satisfied {
                format!("satisfied (rank {rank} of {})", 2 * n)
            } else {
                format!("violated (rank {rank} of {})", 2 * n)
            };
            Ok(ConditionSummary {
                verdict,
                satisfied: report.satisfied,
                report,
                points: rows,
            })
        }
    }
}
