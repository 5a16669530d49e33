//! Experiment protocol: collect training interactions on a stream of
//! mechanisms, fine-tune the network, and evaluate on held-out mechanisms by
//! counting interactions until the best-estimate regret drops below the
//! threshold.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{best_estimate, select_ucb_action, AcquisitionConfig, PriorSurface};
use crate::error::{Error, Result};
use crate::gp::{GpState, KernelParams};
use crate::mechanism::{Action, Mechanism, MechanismKind};
use crate::prior_net::{fit, Dataset, NetworkWeights, TrainSchedule};
use crate::seed::{self, Stream};

pub const RESULTS_VERSION: &str = "mechprior-results/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    CppGpUcb,
    CppRandom,
    GpUcbBaseline,
    RandomBaseline,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::CppGpUcb,
        Strategy::CppRandom,
        Strategy::GpUcbBaseline,
        Strategy::RandomBaseline,
    ];

    pub fn is_cpp(self) -> bool {
        matches!(self, Strategy::CppGpUcb | Strategy::CppRandom)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::CppGpUcb => "CppGpUcb",
            Strategy::CppRandom => "CppRandom",
            Strategy::GpUcbBaseline => "GpUcbBaseline",
            Strategy::RandomBaseline => "RandomBaseline",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::parse("strategy", format!("unknown strategy {s:?}")))
    }
}

/// When the network is refit during training collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitPolicy {
    /// After every training mechanism.
    EveryMechanism,
    /// Only when a checkpoint is reached.
    Checkpoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: MechanismKind,
    /// Training mechanism count.
    #[serde(rename = "L")]
    pub train_mechanisms: usize,
    /// Interactions per training mechanism.
    #[serde(rename = "M")]
    pub interactions: usize,
    /// Evaluation mechanism count.
    #[serde(rename = "N")]
    pub eval_mechanisms: usize,
    pub max_attempts: usize,
    pub regret_threshold: f64,
    pub model_seeds: Vec<u64>,
    #[serde(default)]
    pub eval_seed: u64,
    pub checkpoints: Vec<usize>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    pub kernel: KernelParams,
    pub acquisition: AcquisitionConfig,
    pub training: TrainSchedule,
    pub beta: f64,
    #[serde(default = "default_fit_policy")]
    pub fit_policy: FitPolicy,
    /// Count best-estimate probes as interactions (and feed them to the GP).
    #[serde(default)]
    pub charge_probe: bool,
    /// Use the partially trained network as the prior during GP-UCB collection.
    #[serde(default = "default_true")]
    pub collect_with_prior: bool,
    /// Interaction cap of the CPP run paired with the network-only policy.
    #[serde(default = "default_nn_only_cap")]
    pub nn_only_cap: usize,
}

fn default_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}

fn default_fit_policy() -> FitPolicy {
    FitPolicy::EveryMechanism
}

fn default_true() -> bool {
    true
}

fn default_nn_only_cap() -> usize {
    10
}

pub fn default_kernel(kind: MechanismKind) -> KernelParams {
    let lengthscales = match kind {
        MechanismKind::Slider => vec![0.55, 0.12],
        MechanismKind::Door => vec![0.05, 0.55, 0.25],
    };
    KernelParams {
        lengthscales,
        signal_variance: 0.04,
        noise_variance: 1e-6,
    }
}

pub const DEFAULT_CHECKPOINTS: [usize; 8] = [1, 2, 5, 10, 20, 40, 70, 100];

/// Exploration weight. Doors explore less: their rewarding region is small
/// and a wide confidence bonus spends most of the budget on empty space.
pub fn default_beta(kind: MechanismKind) -> f64 {
    match kind {
        MechanismKind::Slider => 4.0,
        MechanismKind::Door => 1.0,
    }
}

/// Optimizer steps per fit in the full-size preset. Forty epochs over the
/// whole accumulated dataset after every mechanism is out of reach on a
/// desktop CPU; the cap bounds each fit to a fixed amount of work.
pub const DEFAULT_STEPS_PER_FIT: usize = 100;

impl ExperimentConfig {
    /// Full-size protocol: L = 100, M = 100, N = 50, five model seeds.
    pub fn full(kind: MechanismKind) -> Self {
        ExperimentConfig {
            kind,
            train_mechanisms: 100,
            interactions: 100,
            eval_mechanisms: 50,
            max_attempts: 100,
            regret_threshold: 0.05,
            model_seeds: (0..5).collect(),
            eval_seed: 0,
            checkpoints: DEFAULT_CHECKPOINTS.to_vec(),
            strategies: default_strategies(),
            kernel: default_kernel(kind),
            acquisition: AcquisitionConfig::for_kind(kind),
            training: TrainSchedule {
                max_steps: Some(DEFAULT_STEPS_PER_FIT),
                ..TrainSchedule::default()
            },
            beta: default_beta(kind),
            fit_policy: FitPolicy::EveryMechanism,
            charge_probe: false,
            collect_with_prior: true,
            nn_only_cap: 10,
        }
    }

    /// Two training mechanisms, five evaluation mechanisms, one seed.
    pub fn smoke(kind: MechanismKind) -> Self {
        ExperimentConfig {
            train_mechanisms: 2,
            interactions: 20,
            eval_mechanisms: 5,
            model_seeds: vec![0],
            checkpoints: vec![0, 1, 2],
            ..Self::full(kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.interactions < 1 {
            return bad("M must be at least 1".into());
        }
        if self.max_attempts < 1 {
            return bad("max_attempts must be at least 1".into());
        }
        if !(self.regret_threshold > 0.0 && self.regret_threshold < 1.0) {
            return bad(format!("regret_threshold {} not in (0, 1)", self.regret_threshold));
        }
        if self.model_seeds.is_empty() {
            return bad("model_seeds is empty".into());
        }
        if let Some(c) = self.checkpoints.iter().find(|&&c| c > self.train_mechanisms) {
            return bad(format!("checkpoint {c} exceeds L = {}", self.train_mechanisms));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return bad("checkpoints must be strictly increasing".into());
        }
        if self.strategies.is_empty() {
            return bad("no strategies".into());
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta {} must be nonnegative", self.beta));
        }
        if self.nn_only_cap < 1 {
            return bad("nn_only_cap must be at least 1".into());
        }
        self.kernel.validate()?;
        if self.kernel.dim() != self.kind.action_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.kind.action_dim(),
                got: self.kernel.dim(),
            });
        }
        self.acquisition.validate()?;
        self.training.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::parse("config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn eval_mechanism(&self, index: usize) -> Mechanism {
        Mechanism::generate(self.kind, seed::eval_mechanism_seed(self.eval_seed, index as u64))
    }

    pub fn eval_set(&self) -> Vec<Mechanism> {
        (0..self.eval_mechanisms).map(|i| self.eval_mechanism(i)).collect()
    }
}

/// Normalized simple regret `(r* − r) / r*`, clamped to [0, 1].
pub fn regret(r_star: f64, r: f64) -> f64 {
    ((r_star - r) / r_star).clamp(0.0, 1.0)
}

/// Prior mean used by the acquisition.
#[derive(Clone, Copy)]
pub enum Prior<'a> {
    Zero,
    Network(&'a NetworkWeights),
    /// The true reward surface. Test and diagnostic use only.
    Oracle,
}

impl<'a> Prior<'a> {
    pub fn surface(&self, m: &'a Mechanism, acq: &AcquisitionConfig) -> PriorSurface<'a> {
        let bounds = m.bounds();
        match *self {
            Prior::Zero => PriorSurface::zero(&bounds, acq),
            Prior::Network(w) => {
                let features = w.image_features(&m.render());
                PriorSurface::new(move |a: &[f64]| w.predict_with_features(&features, a), &bounds, acq)
            }
            Prior::Oracle => PriorSurface::new(move |a: &[f64]| m.reward_unchecked(a), &bounds, acq),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub action: Action,
    pub reward: f64,
    /// Best-estimate regret after this attempt.
    pub regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub mech_seed: u64,
    /// Regret of the best estimate before any interaction.
    pub initial_regret: f64,
    pub attempts: Vec<Attempt>,
    /// `None` when the threshold was not reached within the cap.
    pub attempts_to_success: Option<usize>,
}

impl EvalRecord {
    pub fn final_regret(&self) -> f64 {
        self.attempts.last().map_or(self.initial_regret, |a| a.regret)
    }

    /// Attempts with failures counted as the cap.
    pub fn attempts_or(&self, cap: usize) -> usize {
        self.attempts_to_success.unwrap_or(cap)
    }
}

/// Evaluates one strategy on one mechanism. `weights` must be present exactly
/// for the CPP strategies. `rng_seed` drives the random baseline.
pub fn evaluate_one(strategy: Strategy, weights: Option<&NetworkWeights>, m: &Mechanism, cfg: &ExperimentConfig, rng_seed: u64) -> Result<EvalRecord> {
    evaluate_capped(strategy, weights, m, cfg, cfg.max_attempts, rng_seed)
}

fn evaluate_capped(strategy: Strategy, weights: Option<&NetworkWeights>, m: &Mechanism, cfg: &ExperimentConfig, cap: usize, rng_seed: u64) -> Result<EvalRecord> {
    match (strategy.is_cpp(), weights) {
        (true, Some(w)) => run_episode(Prior::Network(w), m, cfg, cap),
        (false, None) if strategy == Strategy::GpUcbBaseline => run_episode(Prior::Zero, m, cfg, cap),
        (false, None) => Ok(random_episode(m, cfg, cap, rng_seed)),
        (true, None) => Err(Error::InvalidArgument(format!("{strategy} needs network weights"))),
        (false, Some(_)) => Err(Error::InvalidArgument(format!("{strategy} takes no network weights"))),
    }
}

/// GP-UCB on one mechanism with the given prior until the best-estimate
/// regret falls below the threshold or `cap` interactions are spent.
pub fn run_episode(prior: Prior<'_>, m: &Mechanism, cfg: &ExperimentConfig, cap: usize) -> Result<EvalRecord> {
    let bounds = m.bounds();
    let acq = &cfg.acquisition;
    let surface = prior.surface(m, acq);
    let (_, r_star) = m.optimal();
    let mut gp = GpState::new(cfg.kernel.clone())?;
    let mut attempts = Vec::new();

    let observe = |gp: &GpState, a: &Action| -> Result<(f64, GpState)> {
        let r = m.execute(a)?;
        let next = gp.add_observation(a, r - surface.value(a))?;
        Ok((r, next))
    };

    if cfg.charge_probe {
        // Probes are real interactions: executed, counted and observed.
        let mut success = None;
        let mut current_regret = 1.0;
        while attempts.len() < cap {
            let probe_turn = attempts.len() % 2 == 0;
            let a = if probe_turn {
                best_estimate(&surface, &gp, &bounds, acq)?
            } else {
                select_ucb_action(&surface, &gp, &bounds, cfg.beta, acq)?
            };
            let (r, next) = observe(&gp, &a)?;
            gp = next;
            if probe_turn {
                current_regret = regret(r_star, r);
            }
            attempts.push(Attempt { action: a, reward: r, regret: current_regret });
            if probe_turn && current_regret < cfg.regret_threshold {
                success = Some(attempts.len());
                break;
            }
        }
        return Ok(EvalRecord {
            mech_seed: m.seed,
            initial_regret: 1.0,
            attempts,
            attempts_to_success: success,
        });
    }

    let probe = |gp: &GpState| -> Result<f64> {
        let a = best_estimate(&surface, gp, &bounds, acq)?;
        Ok(regret(r_star, m.execute(&a)?))
    };
    let initial_regret = probe(&gp)?;
    if initial_regret < cfg.regret_threshold {
        return Ok(EvalRecord {
            mech_seed: m.seed,
            initial_regret,
            attempts,
            attempts_to_success: Some(0),
        });
    }
    let mut success = None;
    for t in 1..=cap {
        let a = select_ucb_action(&surface, &gp, &bounds, cfg.beta, acq)?;
        let (r, next) = observe(&gp, &a)?;
        gp = next;
        let e = probe(&gp)?;
        attempts.push(Attempt { action: a, reward: r, regret: e });
        if e < cfg.regret_threshold {
            success = Some(t);
            break;
        }
    }
    Ok(EvalRecord {
        mech_seed: m.seed,
        initial_regret,
        attempts,
        attempts_to_success: success,
    })
}

/// Uniform random search; the best estimate is the best action seen so far.
fn random_episode(m: &Mechanism, cfg: &ExperimentConfig, cap: usize, rng_seed: u64) -> EvalRecord {
    let bounds = m.bounds();
    let (_, r_star) = m.optimal();
    let mut rng = seed::rng(rng_seed);
    let mut best = 0.0f64;
    let mut attempts = Vec::new();
    let mut success = None;
    for t in 1..=cap {
        let a = bounds.sample_uniform(&mut rng);
        let r = m.reward_unchecked(&a);
        best = best.max(r);
        let e = regret(r_star, best);
        attempts.push(Attempt { action: a, reward: r, regret: e });
        if e < cfg.regret_threshold {
            success = Some(t);
            break;
        }
    }
    EvalRecord {
        mech_seed: m.seed,
        initial_regret: 1.0,
        attempts,
        attempts_to_success: success,
    }
}

/// Output of one training-collection run.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub strategy: Strategy,
    pub model_seed: u64,
    pub dataset: Dataset,
    /// Weights at each checkpoint, in checkpoint order.
    pub snapshots: Vec<(usize, NetworkWeights)>,
    pub weights: NetworkWeights,
}

/// Interacts `M` times with each of `L` training mechanisms, growing the
/// dataset and refitting the network per the fit policy. Snapshots are taken
/// at `cfg.checkpoints` (checkpoint 0 is the untrained network).
pub fn collect_training(strategy: Strategy, model_seed: u64, cfg: &ExperimentConfig) -> Result<TrainingRun> {
    collect_training_from(strategy, model_seed, cfg, NetworkWeights::init(model_seed))
}

pub fn collect_training_from(strategy: Strategy, model_seed: u64, cfg: &ExperimentConfig, initial: NetworkWeights) -> Result<TrainingRun> {
    if !strategy.is_cpp() {
        return Err(Error::InvalidArgument(format!("{strategy} does not collect training data")));
    }
    let mut weights = initial;
    let mut fitted = false;
    let mut dataset = Dataset::new();
    let mut snapshots = Vec::new();
    let mut action_rng = seed::rng(seed::derive(model_seed, Stream::RandomAction, 0));
    if cfg.checkpoints.first() == Some(&0) {
        snapshots.push((0, weights.clone()));
    }
    for index in 0..cfg.train_mechanisms {
        let l = index + 1;
        let m = Mechanism::generate(cfg.kind, seed::train_mechanism_seed(model_seed, index as u64));
        let context = dataset.add_context(m.seed, m.kind, m.render());
        let bounds = m.bounds();
        match strategy {
            Strategy::CppRandom => {
                for _ in 0..cfg.interactions {
                    let a = bounds.sample_uniform(&mut action_rng);
                    let r = m.execute(&a)?;
                    dataset.push(context, a.0, r)?;
                }
            }
            _ => {
                let prior = if cfg.collect_with_prior && fitted {
                    Prior::Network(&weights)
                } else {
                    Prior::Zero
                };
                let surface = prior.surface(&m, &cfg.acquisition);
                let mut gp = GpState::new(cfg.kernel.clone())?;
                for _ in 0..cfg.interactions {
                    let a = select_ucb_action(&surface, &gp, &bounds, cfg.beta, &cfg.acquisition)?;
                    let r = m.execute(&a)?;
                    gp = gp.add_observation(&a, r - surface.value(&a))?;
                    dataset.push(context, a.0, r)?;
                }
            }
        }
        let checkpoint = cfg.checkpoints.contains(&l);
        if checkpoint || cfg.fit_policy == FitPolicy::EveryMechanism {
            weights = fit(&weights, &dataset, &cfg.training, seed::derive(model_seed, Stream::Shuffle, l as u64))?;
            fitted = true;
        }
        if checkpoint {
            snapshots.push((l, weights.clone()));
        }
    }
    Ok(TrainingRun {
        strategy,
        model_seed,
        dataset,
        snapshots,
        weights,
    })
}

/// Result of one (strategy, checkpoint, model seed, evaluation mechanism) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub strategy: Strategy,
    #[serde(rename = "L")]
    pub checkpoint: usize,
    pub seed: u64,
    pub mech_seed: u64,
    pub attempts: Option<usize>,
    pub final_regret: f64,
    pub regrets: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    #[serde(rename = "L")]
    pub checkpoint: usize,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub strategy: Strategy,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub version: String,
    pub config: ExperimentConfig,
    pub cells: Vec<Cell>,
    pub curves: Vec<Curve>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub results: ExperimentResults,
    pub training: Vec<TrainingRun>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn cell_from(strategy: Strategy, checkpoint: usize, seed: u64, rec: &EvalRecord) -> Cell {
    Cell {
        strategy,
        checkpoint,
        seed,
        mech_seed: rec.mech_seed,
        attempts: rec.attempts_to_success,
        final_regret: rec.final_regret(),
        regrets: std::iter::once(rec.initial_regret)
            .chain(rec.attempts.iter().map(|a| a.regret))
            .collect(),
    }
}

/// Aggregates cells into one curve per strategy. Failures count as `cap`.
pub fn aggregate(cells: &[Cell], strategies: &[Strategy], checkpoints: &[usize], cap: usize) -> Vec<Curve> {
    strategies
        .iter()
        .map(|&strategy| {
            let points = checkpoints
                .iter()
                .filter_map(|&checkpoint| {
                    let mut values: Vec<f64> = cells
                        .iter()
                        .filter(|c| c.strategy == strategy && c.checkpoint == checkpoint)
                        .map(|c| c.attempts.unwrap_or(cap) as f64)
                        .collect();
                    if values.is_empty() {
                        return None;
                    }
                    values.sort_by(f64::total_cmp);
                    Some(CurvePoint {
                        checkpoint,
                        q25: quantile(&values, 0.25),
                        median: quantile(&values, 0.5),
                        q75: quantile(&values, 0.75),
                    })
                })
                .collect();
            Curve { strategy, points }
        })
        .collect()
}

/// Runs the whole protocol for every configured strategy and model seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let eval_set = cfg.eval_set();
    let cpp: Vec<Strategy> = cfg.strategies.iter().copied().filter(|s| s.is_cpp()).collect();

    let jobs: Vec<(Strategy, u64)> = cpp
        .iter()
        .flat_map(|&s| cfg.model_seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let training: Vec<TrainingRun> = jobs
        .par_iter()
        .map(|&(strategy, model_seed)| {
            collect_training(strategy, model_seed, cfg).map_err(|e| Error::Seed {
                seed: model_seed,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for run in &training {
        for (checkpoint, weights) in &run.snapshots {
            let recs: Vec<EvalRecord> = eval_set
                .par_iter()
                .map(|m| evaluate_one(run.strategy, Some(weights), m, cfg, 0))
                .collect::<Result<_>>()
                .map_err(|e| Error::Seed {
                    seed: run.model_seed,
                    source: Box::new(e),
                })?;
            cells.extend(recs.iter().map(|r| cell_from(run.strategy, *checkpoint, run.model_seed, r)));
        }
    }

    // Baselines do not learn across mechanisms: evaluate once per model seed
    // and replicate across checkpoints.
    if cfg.strategies.contains(&Strategy::GpUcbBaseline) {
        // Fully deterministic, so one pass serves every model seed.
        let recs: Vec<EvalRecord> = eval_set
            .par_iter()
            .map(|m| evaluate_one(Strategy::GpUcbBaseline, None, m, cfg, 0))
            .collect::<Result<_>>()?;
        for &seed in &cfg.model_seeds {
            for &checkpoint in &cfg.checkpoints {
                cells.extend(recs.iter().map(|r| cell_from(Strategy::GpUcbBaseline, checkpoint, seed, r)));
            }
        }
    }
    if cfg.strategies.contains(&Strategy::RandomBaseline) {
        for &seed in &cfg.model_seeds {
            let recs: Vec<EvalRecord> = eval_set
                .par_iter()
                .map(|m| {
                    let rng_seed = seed::derive(seed, Stream::BaselineRandom, m.seed);
                    evaluate_one(Strategy::RandomBaseline, None, m, cfg, rng_seed)
                })
                .collect::<Result<_>>()?;
            for &checkpoint in &cfg.checkpoints {
                cells.extend(recs.iter().map(|r| cell_from(Strategy::RandomBaseline, checkpoint, seed, r)));
            }
        }
    }

    cells.sort_by_key(|c| {
        (
            cfg.strategies.iter().position(|&s| s == c.strategy),
            c.checkpoint,
            cfg.model_seeds.iter().position(|&s| s == c.seed),
        )
    });
    let curves = aggregate(&cells, &cfg.strategies, &cfg.checkpoints, cfg.max_attempts);
    Ok(ExperimentOutput {
        results: ExperimentResults {
            version: RESULTS_VERSION.to_string(),
            config: cfg.clone(),
            cells,
            curves,
        },
        training,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnOnlyRecord {
    pub mech_seed: u64,
    /// Regret of the network's argmax action.
    pub nn_regret: f64,
    /// Final regret of CPP capped at `nn_only_cap` interactions.
    pub cpp_regret: f64,
}

/// Compares acting greedily on the network against CPP with a small budget.
pub fn nn_only_eval(weights: &NetworkWeights, mechanisms: &[Mechanism], cfg: &ExperimentConfig) -> Result<Vec<NnOnlyRecord>> {
    nn_only_eval_with(Prior::Network(weights), mechanisms, cfg)
}

pub fn nn_only_eval_with(prior: Prior<'_>, mechanisms: &[Mechanism], cfg: &ExperimentConfig) -> Result<Vec<NnOnlyRecord>> {
    mechanisms
        .par_iter()
        .map(|m| {
            let surface = prior.surface(m, &cfg.acquisition);
            let bounds = m.bounds();
            let gp = GpState::new(cfg.kernel.clone())?;
            let a = best_estimate(&surface, &gp, &bounds, &cfg.acquisition)?;
            let (_, r_star) = m.optimal();
            let nn_regret = regret(r_star, m.execute(&a)?);
            let cpp = run_episode(prior, m, cfg, cfg.nn_only_cap)?;
            Ok(NnOnlyRecord {
                mech_seed: m.seed,
                nn_regret,
                cpp_regret: cpp.final_regret(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges spanning [0, max reward].
    pub edges: Vec<f64>,
    /// Rewards exactly zero.
    pub zero_count: usize,
    /// Positive rewards per bin.
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.zero_count + self.counts.iter().sum::<usize>()
    }

    pub fn zero_fraction(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.zero_count as f64 / self.total() as f64
        }
    }
}

pub fn motion_histogram(rewards: &[f64], bins: usize) -> Result<Histogram> {
    if bins < 1 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let max = rewards.iter().cloned().fold(0.0, f64::max);
    let edges = (0..=bins).map(|i| max * i as f64 / bins as f64).collect();
    let mut counts = vec![0; bins];
    let mut zero_count = 0;
    for &r in rewards {
        if r == 0.0 {
            zero_count += 1;
        } else {
            let b = ((r / max) * bins as f64).floor() as usize;
            counts[b.min(bins - 1)] += 1;
        }
    }
    Ok(Histogram {
        edges,
        zero_count,
        counts,
    })
}

pub fn dataset_histogram(data: &Dataset, bins: usize) -> Result<Histogram> {
    let rewards: Vec<f64> = data.rewards().collect();
    motion_histogram(&rewards, bins)
}

pub fn save_results(results: &ExperimentResults, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(results)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_results(path: &Path) -> Result<ExperimentResults> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results(&text)
}

pub fn parse_results(text: &str) -> Result<ExperimentResults> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::parse("results", e))?;
    let version = value.get("version").and_then(|v| v.as_str()).unwrap_or_default();
    if version != RESULTS_VERSION {
        return Err(Error::Version {
            found: version.to_string(),
            expected: RESULTS_VERSION.to_string(),
        });
    }
    serde_json::from_value(value).map_err(|e| Error::parse("results", e))
}

/// Per-cell CSV: `strategy,L,seed,mech_seed,attempts,final_regret`. Failed
/// cells have `attempts` = `fail`.
pub fn write_cells_csv(cells: &[Cell], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["strategy", "L", "seed", "mech_seed", "attempts", "final_regret"])?;
    for c in cells {
        w.write_record([
            c.strategy.to_string(),
            c.checkpoint.to_string(),
            c.seed.to_string(),
            c.mech_seed.to_string(),
            c.attempts.map_or_else(|| "fail".to_string(), |a| a.to_string()),
            c.final_regret.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Aggregated CSV: `strategy,L,q25,median,q75`.
pub fn write_curves_csv(curves: &[Curve], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["strategy", "L", "q25", "median", "q75"])?;
    for c in curves {
        for p in &c.points {
            w.write_record([
                c.strategy.to_string(),
                p.checkpoint.to_string(),
                p.q25.to_string(),
                p.median.to_string(),
                p.q75.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_curves_csv(path: &Path) -> Result<Vec<Curve>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["strategy", "L", "q25", "median", "q75"] {
        return Err(Error::parse("curve csv", format!("unexpected header {header:?}")));
    }
    let mut by_strategy: BTreeMap<usize, Curve> = BTreeMap::new();
    let mut order = Vec::new();
    for row in r.records() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            row[i]
                .parse::<f64>()
                .map_err(|e| Error::parse("curve csv", format!("column {i}: {e}")))
        };
        let strategy: Strategy = row[0].parse()?;
        let point = CurvePoint {
            checkpoint: row[1]
                .parse()
                .map_err(|e| Error::parse("curve csv", format!("L: {e}")))?,
            q25: num(2)?,
            median: num(3)?,
            q75: num(4)?,
        };
        let key = match order.iter().position(|&s| s == strategy) {
            Some(k) => k,
            None => {
                order.push(strategy);
                order.len() - 1
            }
        };
        by_strategy
            .entry(key)
            .or_insert_with(|| Curve { strategy, points: Vec::new() })
            .points
            .push(point);
    }
    Ok(by_strategy.into_values().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetLine {
    mech_seed: u64,
    kind: MechanismKind,
    action: Vec<f64>,
    reward: f64,
}

/// JSON lines, one interaction per line. Images are not stored.
pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in data.records() {
        let c = &data.contexts()[r.context];
        let line = DatasetLine {
            mech_seed: c.mech_seed,
            kind: c.kind,
            action: r.action.clone(),
            reward: r.reward,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads a JSON-lines dataset, regenerating images from the mechanism seeds.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut data = Dataset::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetLine = serde_json::from_str(&line).map_err(|e| Error::parse("dataset", format!("line {}: {e}", n + 1)))?;
        let image = Mechanism::generate(rec.kind, rec.mech_seed).render();
        let ctx = data.add_context(rec.mech_seed, rec.kind, image);
        data.push(ctx, rec.action, rec.reward)?;
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regret_identities() {
        assert_eq!(regret(0.4, 0.4), 0.0);
        assert_eq!(regret(0.4, 0.0), 1.0);
        assert!((regret(0.4, 0.3) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
        assert_eq!(quantile(&[7.0], 0.75), 7.0);
    }

    #[test]
    fn histogram_basics() {
        let h = motion_histogram(&[0.0, 0.0, 0.0], 4).unwrap();
        assert_eq!(h.zero_count, 3);
        assert_eq!(h.counts, vec![0; 4]);
        let h = motion_histogram(&[0.0, 0.1, 0.2, 0.4, 0.39], 4).unwrap();
        assert_eq!(h.total(), 5);
        assert_eq!(h.zero_count, 1);
        assert_eq!(h.counts, vec![0, 1, 1, 2]);
        assert_eq!(h.edges.len(), 5);
        assert!(motion_histogram(&[0.1], 0).is_err());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert!("Cpp".parse::<Strategy>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig::smoke(MechanismKind::Slider);
        assert!(c.validate().is_ok());
        c.checkpoints = vec![0, 3];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::smoke(MechanismKind::Slider);
        c.regret_threshold = 1.0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::smoke(MechanismKind::Slider);
        c.interactions = 0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::smoke(MechanismKind::Slider);
        c.kernel = default_kernel(MechanismKind::Door);
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_uses_protocol_names() {
        let c = ExperimentConfig::smoke(MechanismKind::Door);
        let v = serde_json::to_value(&c).unwrap();
        assert_eq!(v["L"], 2);
        assert_eq!(v["M"], 20);
        assert_eq!(v["N"], 5);
        let back: ExperimentConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn weights_required_iff_cpp() {
        let cfg = ExperimentConfig::smoke(MechanismKind::Slider);
        let m = cfg.eval_mechanism(0);
        let w = NetworkWeights::init(0);
        assert!(evaluate_one(Strategy::CppGpUcb, None, &m, &cfg, 0).is_err());
        assert!(evaluate_one(Strategy::GpUcbBaseline, Some(&w), &m, &cfg, 0).is_err());
    }

    #[test]
    fn random_baseline_best_so_far() {
        let cfg = ExperimentConfig::smoke(MechanismKind::Slider);
        let m = cfg.eval_mechanism(1);
        let rec = evaluate_one(Strategy::RandomBaseline, None, &m, &cfg, 5).unwrap();
        assert_eq!(rec.initial_regret, 1.0);
        let regrets: Vec<f64> = rec.attempts.iter().map(|a| a.regret).collect();
        assert!(regrets.windows(2).all(|w| w[1] <= w[0]));
        assert!(rec.attempts_to_success.is_none_or(|t| t == rec.attempts.len() && t >= 1));
    }

    #[test]
    fn charged_probes_count_as_attempts() {
        let mut cfg = ExperimentConfig::smoke(MechanismKind::Slider);
        cfg.charge_probe = true;
        cfg.max_attempts = 15;
        for i in 0..3 {
            let m = cfg.eval_mechanism(i);
            let rec = evaluate_one(Strategy::GpUcbBaseline, None, &m, &cfg, 0).unwrap();
            if let Some(t) = rec.attempts_to_success {
                assert_eq!(t, rec.attempts.len());
                assert!(t >= 1);
            } else {
                assert_eq!(rec.attempts.len(), 15);
            }
        }
    }

    #[test]
    fn baseline_collect_rejected() {
        let cfg = ExperimentConfig::smoke(MechanismKind::Slider);
        assert!(collect_training(Strategy::GpUcbBaseline, 0, &cfg).is_err());
    }

    #[test]
    fn results_version_checked() {
        let text = r#"{"version": "mechprior-results/0", "cells": []}"#;
        assert!(matches!(parse_results(text), Err(Error::Version { .. })));
        assert!(matches!(parse_results("not json"), Err(Error::Parse { .. })));
    }
}
