//! The online optimization loop.
//!
//! A session first evaluates a `2N`-point exploratory design, freezes the
//! input/cost normalizer on it and trains the ensemble. Afterwards proposals
//! follow a fixed cycle: the minimum of every ensemble member in turn, then one
//! differential-evolution trial. Every evaluation is appended to the archive
//! before the next proposal is made, so a session can be resumed at any point.

use std::path::Path;
use std::time::Instant;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::archive::RunArchive;
use crate::de::{initial_design, DeConfig, DeState};
use crate::experiment::{Evaluation, Experiment, ExperimentError};
use crate::minimize::{multistart_minimize, MinimizeOptions};
use crate::mlp::{MlpConfig, Normalizer};
use crate::observation::{Dataset, Observation, Source};
use crate::sann::SannEnsemble;
use crate::space::{ParameterSpace, ParameterVector};
use crate::{seed, Error, Result};

const DESIGN_STREAM: u64 = 0x10;
const DE_STREAM: u64 = 0x20;
const MINIMIZE_STREAM: u64 = 0x30;

/// Maps a raw cost onto `[0, 1]`: 0 at the best known cost, 1 at the failure
/// cost.
pub fn scale_cost(raw: f64, best_raw: f64, failure_raw: f64) -> f64 {
    let span = failure_raw - best_raw;
    if !(span > 0.0) {
        return 0.0;
    }
    ((raw - best_raw) / span).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub max_runs: usize,
    /// Size of the exploratory design; `None` means `2N`.
    pub initial_runs: Option<usize>,
    /// Retrain after this many new observations.
    pub retrain_every: usize,
    /// Stop once the best cost has not improved for this many runs; 0 disables.
    pub stall_window: usize,
    /// Improvement in scaled cost that still counts as a stall.
    pub stall_tolerance: f64,
    /// Raw cost recorded for failed runs; `None` uses the worst cost seen.
    pub failure_cost: Option<f64>,
    pub ensemble_size: usize,
    /// Points closer than this (max-norm) to an earlier one are replaced.
    pub duplicate_tolerance: f64,
    pub minimizer: MinimizeOptions,
    pub seed: u64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            max_runs: 703,
            initial_runs: None,
            retrain_every: 1,
            stall_window: 150,
            stall_tolerance: 0.0,
            failure_cost: None,
            ensemble_size: 3,
            duplicate_tolerance: 1e-9,
            minimizer: MinimizeOptions::default(),
            seed: 0,
        }
    }
}

impl ControllerConfig {
    pub fn initial_runs_for(&self, dim: usize) -> usize {
        self.initial_runs.unwrap_or(2 * dim)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let init = self.initial_runs_for(dim);
        if init == 0 {
            return Err(Error::InvalidConfig("controller: initial_runs must be positive".into()));
        }
        if self.max_runs <= init {
            return Err(Error::InvalidConfig(format!(
                "controller: max_runs ({}) must exceed initial_runs ({init})",
                self.max_runs
            )));
        }
        if self.retrain_every == 0 {
            return Err(Error::InvalidConfig("controller: retrain_every must be positive".into()));
        }
        if self.ensemble_size == 0 {
            return Err(Error::InvalidConfig("controller: ensemble_size must be positive".into()));
        }
        if !(self.stall_tolerance >= 0.0) {
            return Err(Error::InvalidConfig("controller: stall_tolerance must be non-negative".into()));
        }
        if self.failure_cost.is_some_and(|f| !f.is_finite()) {
            return Err(Error::InvalidConfig("controller: failure_cost must be finite".into()));
        }
        Ok(())
    }
}

/// Everything needed to start a session.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSettings {
    pub mlp: MlpConfig,
    pub de: DeConfig,
    pub controller: ControllerConfig,
}

impl OptimizerSettings {
    /// Reseeds every component from one session seed.
    pub fn with_seed(mut self, session_seed: u64) -> Self {
        self.controller.seed = session_seed;
        self.mlp.seed = seed::derive(session_seed, 1);
        self.de.seed = seed::derive(session_seed, 2);
        self.controller.minimizer.seed = seed::derive(session_seed, 3);
        self
    }
}

/// The cycle `[net_0, …, net_{k-1}, de]` that follows the initial design.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProposalSchedule {
    members: usize,
}

impl ProposalSchedule {
    pub fn new(members: usize) -> Self {
        Self { members }
    }

    pub fn cycle_len(&self) -> usize {
        self.members + 1
    }

    /// Source of the `position`-th proposal after the initial design.
    pub fn source_at(&self, position: usize) -> Source {
        let slot = position % self.cycle_len();
        if slot < self.members {
            Source::Net(slot)
        } else {
            Source::De
        }
    }
}

/// A point to evaluate next.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub source: Source,
    pub params: ParameterVector,
    /// Model-predicted raw cost for network proposals.
    pub predicted: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxRuns,
    Stalled,
}

/// Proposal and bookkeeping state of one session, independent of how points
/// get evaluated.
pub struct Controller {
    space: ParameterSpace,
    settings: OptimizerSettings,
    initial_runs: usize,
    schedule: ProposalSchedule,
    design: Vec<ParameterVector>,
    dataset: Dataset,
    de: DeState,
    ensemble: SannEnsemble,
    since_retrain: usize,
    worst_raw: f64,
    best_raw: Option<f64>,
    last_improvement: usize,
}

impl Controller {
    pub fn new(space: ParameterSpace, settings: OptimizerSettings) -> Result<Self> {
        let dim = space.dim();
        settings.mlp.validate()?;
        settings.de.validate()?;
        settings.controller.validate(dim)?;
        let initial_runs = settings.controller.initial_runs_for(dim);
        let mut design_rng = seed::rng(settings.de.seed, DESIGN_STREAM);
        let mut design = initial_design(&space, settings.de.initial_design, &mut design_rng);
        // A non-default design size tops up with uniform points or truncates.
        while design.len() < initial_runs {
            design.push(space.sample_uniform(&mut design_rng));
        }
        design.truncate(initial_runs);
        let de = DeState::new(settings.de.clone(), dim)?;
        let ensemble = SannEnsemble::new(settings.mlp.clone(), dim, settings.controller.ensemble_size)?;
        Ok(Self {
            dataset: Dataset::new(space.clone()),
            schedule: ProposalSchedule::new(settings.controller.ensemble_size),
            space,
            settings,
            initial_runs,
            design,
            de,
            ensemble,
            since_retrain: 0,
            worst_raw: f64::NEG_INFINITY,
            best_raw: None,
            last_improvement: 0,
        })
    }

    /// Rebuilds a controller from archived observations: the explorer and
    /// schedule are replayed, the ensemble is retrained on everything.
    pub fn resume(space: ParameterSpace, settings: OptimizerSettings, archived: &Dataset) -> Result<Self> {
        let mut ctl = Self::new(space, settings)?;
        if archived.space().dim() != ctl.space.dim() {
            return Err(Error::DimensionMismatch {
                expected: ctl.space.dim(),
                actual: archived.space().dim(),
            });
        }
        for obs in archived.observations() {
            if let Some(position) = ctl.post_init_position() {
                if ctl.schedule.source_at(position) == Source::De {
                    // Re-asking restores the pending trial so selection matches
                    // the original session.
                    let mut rng = ctl.de_rng();
                    ctl.de.ask(&ctl.space, &mut rng)?;
                }
            }
            ctl.absorb(obs.clone())?;
            ctl.de.clear_pending();
        }
        let n = ctl.dataset.len();
        if n >= ctl.initial_runs {
            let net_proposals = (0..n - ctl.initial_runs)
                .filter(|&p| ctl.schedule.source_at(p).is_net())
                .count();
            ctl.ensemble.set_next_member(net_proposals);
            ctl.fit_normalizer()?;
            ctl.retrain()?;
        }
        info!("resumed session at run {}", ctl.dataset.next_run_index());
        Ok(ctl)
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    pub fn settings(&self) -> &OptimizerSettings {
        &self.settings
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn ensemble(&self) -> &SannEnsemble {
        &self.ensemble
    }

    pub fn initial_runs(&self) -> usize {
        self.initial_runs
    }

    pub fn schedule(&self) -> ProposalSchedule {
        self.schedule
    }

    /// Index into the post-design schedule, or `None` during the design.
    fn post_init_position(&self) -> Option<usize> {
        self.dataset.len().checked_sub(self.initial_runs)
    }

    fn run_count(&self) -> usize {
        self.dataset.len()
    }

    fn de_rng(&self) -> rand_chacha::ChaCha8Rng {
        seed::rng(self.settings.de.seed, DE_STREAM ^ (self.dataset.next_run_index() << 8))
    }

    /// Raw cost currently representing failure.
    pub fn failure_raw(&self) -> f64 {
        self.settings.controller.failure_cost.unwrap_or(self.worst_raw)
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        let cfg = &self.settings.controller;
        if self.run_count() >= cfg.max_runs {
            return Some(StopReason::MaxRuns);
        }
        if cfg.stall_window > 0
            && self.run_count() >= self.initial_runs
            && self.run_count() - self.last_improvement.max(self.initial_runs) >= cfg.stall_window
        {
            return Some(StopReason::Stalled);
        }
        None
    }

    /// The next point to evaluate.
    pub fn propose(&mut self) -> Result<Proposal> {
        let Some(position) = self.post_init_position() else {
            return Ok(Proposal {
                source: Source::InitDe,
                params: self.design[self.dataset.len()].clone(),
                predicted: None,
            });
        };
        let source = self.schedule.source_at(position);
        let mut proposal = match source {
            Source::Net(_) => self.network_proposal()?,
            _ => {
                let mut rng = self.de_rng();
                Proposal {
                    source,
                    params: self.de.ask(&self.space, &mut rng)?,
                    predicted: None,
                }
            }
        };
        if self.is_duplicate(&proposal.params) {
            debug!("run {}: duplicate proposal replaced by a DE trial", self.dataset.next_run_index());
            self.de.clear_pending();
            let mut rng = seed::rng(self.settings.de.seed, DE_STREAM ^ (self.dataset.next_run_index() << 8) ^ 1);
            proposal.params = self.de.ask(&self.space, &mut rng)?;
            proposal.predicted = None;
        }
        Ok(proposal)
    }

    fn network_proposal(&mut self) -> Result<Proposal> {
        let k = self.ensemble.thompson_sample();
        let mut opts = self.settings.controller.minimizer.clone();
        opts.seed = seed::derive(opts.seed, MINIMIZE_STREAM ^ (self.dataset.next_run_index() << 8));
        let starts: Vec<Vec<f64>> = self.dataset.best().map(|b| vec![b.params.clone()]).unwrap_or_default();
        let ensemble = &self.ensemble;
        let objective = |x: &[f64], g: &mut [f64]| {
            ensemble
                .member_value_and_gradient(k, x, g)
                .unwrap_or(f64::NAN)
        };
        let result = multistart_minimize(&objective, &self.space, &starts, &opts)?;
        Ok(Proposal {
            source: Source::Net(k),
            params: self.space.clamp(&result.x)?,
            predicted: result.f.is_finite().then_some(result.f),
        })
    }

    fn is_duplicate(&self, x: &[f64]) -> bool {
        let tol = self.settings.controller.duplicate_tolerance;
        self.dataset.observations().iter().any(|o| {
            o.params
                .iter()
                .zip(x)
                .all(|(a, b)| (a - b).abs() <= tol)
        })
    }

    /// Records the evaluation of `proposal` and retrains when due. Returns the
    /// stored observation.
    pub fn record(&mut self, proposal: Proposal, eval: Evaluation, wall_time: f64) -> Result<&Observation> {
        let raw = if eval.bad {
            self.settings
                .controller
                .failure_cost
                .unwrap_or_else(|| eval.raw_cost.max(self.worst_raw))
        } else {
            eval.raw_cost
        };
        let mut obs = Observation {
            run_index: self.dataset.next_run_index(),
            source: proposal.source,
            params: proposal.params.into_inner(),
            raw_cost: raw,
            scaled_cost: 1.0,
            bad: eval.bad,
            wall_time,
        };
        if !obs.bad {
            let best = self.best_raw.map_or(raw, |b| b.min(raw));
            let failure = self.failure_raw().max(raw);
            obs.scaled_cost = scale_cost(raw, best, failure);
        }
        self.absorb(obs)?;

        let n = self.dataset.len();
        if n == self.initial_runs {
            self.fit_normalizer()?;
            self.retrain()?;
        } else if n > self.initial_runs {
            self.since_retrain += 1;
            if self.since_retrain >= self.settings.controller.retrain_every {
                self.retrain()?;
            }
        }
        Ok(self.dataset.observations().last().expect("just pushed"))
    }

    /// Adds an observation to the dataset and explorer without training.
    fn absorb(&mut self, obs: Observation) -> Result<()> {
        let improved_by = match self.best_raw {
            _ if obs.bad => None,
            None => Some(f64::INFINITY),
            Some(b) if obs.raw_cost < b => {
                let failure = self.failure_raw().max(obs.raw_cost).max(b);
                Some(scale_cost(b, obs.raw_cost, failure))
            }
            Some(_) => None,
        };
        self.de.tell(&obs.params, obs.raw_cost);
        self.worst_raw = self.worst_raw.max(obs.raw_cost);
        if !obs.bad {
            self.best_raw = Some(self.best_raw.map_or(obs.raw_cost, |b| b.min(obs.raw_cost)));
        }
        self.dataset.push(obs)?;
        if improved_by.is_some_and(|d| d > self.settings.controller.stall_tolerance) {
            self.last_improvement = self.dataset.len();
        }
        Ok(())
    }

    fn fit_normalizer(&mut self) -> Result<()> {
        let design = &self.dataset.observations()[..self.initial_runs];
        self.ensemble.set_normalizer(Normalizer::fit(design)?);
        Ok(())
    }

    fn retrain(&mut self) -> Result<()> {
        self.since_retrain = 0;
        let reports = self.ensemble.retrain_all(self.dataset.observations())?;
        for (k, r) in reports.iter().enumerate() {
            debug!(
                "member {k}: {} iterations, loss {:.3e} -> {:.3e}",
                r.iterations, r.initial_loss, r.final_loss
            );
        }
        Ok(())
    }
}

/// How a session ended.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub stop: StopReason,
    pub runs: usize,
    /// Evaluations performed by this call (excludes resumed ones).
    pub evaluations: usize,
    pub best: Option<Observation>,
}

/// Evaluates with one retry on a retryable error.
fn evaluate_with_retry<E: Experiment + ?Sized>(
    experiment: &mut E,
    x: &[f64],
) -> std::result::Result<Evaluation, ExperimentError> {
    match experiment.evaluate(x) {
        Err(e) if e.is_retryable() => {
            warn!("evaluation failed ({e}); retrying once");
            experiment.evaluate(x)
        }
        other => other,
    }
}

/// Drives `controller` against `experiment` until a stop condition, appending
/// every observation to `archive`. An experiment failure that survives one
/// retry suspends the session with the archive intact.
pub fn drive<E: Experiment + ?Sized>(
    controller: &mut Controller,
    experiment: &mut E,
    archive: &mut RunArchive,
) -> Result<RunSummary> {
    if experiment.dim() != controller.space().dim() {
        return Err(ExperimentError::Config(format!(
            "experiment has dim {}, session has dim {}",
            experiment.dim(),
            controller.space().dim()
        ))
        .into());
    }
    let started = Instant::now();
    let offset = controller
        .dataset()
        .observations()
        .last()
        .map_or(0.0, |o| o.wall_time);
    let mut evaluations = 0;
    let stop = loop {
        if let Some(reason) = controller.stop_reason() {
            break reason;
        }
        let proposal = controller.propose()?;
        let eval = evaluate_with_retry(experiment, &proposal.params)?;
        evaluations += 1;
        let wall_time = offset + started.elapsed().as_secs_f64();
        let obs = controller.record(proposal, eval, wall_time)?;
        archive.append(obs)?;
        debug!(
            "run {} {}: raw {:.6} scaled {:.4}{}",
            obs.run_index,
            obs.source,
            obs.raw_cost,
            obs.scaled_cost,
            if obs.bad { " (bad)" } else { "" }
        );
    };
    let best = controller.dataset().best().ok().cloned();
    if let Some(b) = &best {
        info!("stopped ({stop:?}) after {} runs; best raw cost {} at run {}", controller.dataset().len(), b.raw_cost, b.run_index);
    }
    Ok(RunSummary {
        stop,
        runs: controller.dataset().len(),
        evaluations,
        best,
    })
}

/// Runs a full session, creating `archive_path` or, with `resume`, continuing
/// the session it holds.
pub fn run_optimization<E: Experiment + ?Sized>(
    experiment: &mut E,
    space: &ParameterSpace,
    settings: &OptimizerSettings,
    archive_path: &Path,
    resume: bool,
) -> Result<RunSummary> {
    let (mut archive, mut controller) = if resume && archive_path.exists() {
        let (archive, dataset) = RunArchive::resume(archive_path)?;
        if dataset.space() != space {
            return Err(Error::InvalidConfig(format!(
                "archive {} was written for a different parameter space",
                archive_path.display()
            )));
        }
        let controller = Controller::resume(space.clone(), settings.clone(), &dataset)?;
        (archive, controller)
    } else {
        let archive = RunArchive::create(archive_path, space)?;
        (archive, Controller::new(space.clone(), settings.clone())?)
    };
    let summary = drive(&mut controller, experiment, &mut archive)?;
    if let Err(e) = experiment.shutdown() {
        warn!("experiment shutdown failed: {e}");
    }
    Ok(summary)
}
