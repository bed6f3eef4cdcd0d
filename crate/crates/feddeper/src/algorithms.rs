//! The four federated optimizers (FedAvg, FedProx, SCAFFOLD, FedDeper) and
//! the round engine that orchestrates sampling, local updates, aggregation,
//! and per-round metrics.
//!
//! Determinism contract: every random draw comes from a lineage-keyed
//! [`RngStream`], and aggregation sums in ascending client-id order, so
//! parallel client execution is bitwise-identical to sequential.

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::data::{LabeledDataset, Partition, QuadraticProblem};
use crate::diagnostics::{self, DeviationRecord};
use crate::error::{Error, Result};
use crate::models::{self, Batch, ModelSpec};
use crate::numerics::{mix, sample_indices, ParamVector, Purpose, RngStream};

/// Optimizer kind. `FedDeperStar` is FedDeper run with half the local steps
/// (rounded down, minimum 1) to align computation cost with the baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    FedAvg,
    FedProx,
    Scaffold,
    FedDeper,
    FedDeperStar,
}

impl Algorithm {
    pub fn has_personalized_model(self) -> bool {
        matches!(self, Algorithm::FedDeper | Algorithm::FedDeperStar)
    }

    pub fn uses_control_variates(self) -> bool {
        matches!(self, Algorithm::Scaffold)
    }

    /// Local steps actually run per round.
    pub fn effective_tau(self, tau: usize) -> usize {
        match self {
            Algorithm::FedDeperStar => (tau / 2).max(1),
            _ => tau,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedProx => "fedprox",
            Algorithm::Scaffold => "scaffold",
            Algorithm::FedDeper => "feddeper",
            Algorithm::FedDeperStar => "feddeper_star",
        }
    }
}

/// Every tuning knob of the round loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Learning rate, > 0.
    pub eta: f64,
    /// Depersonalization penalty, >= 0.
    pub rho: f64,
    /// Mixing rate in [0, 1].
    pub lambda: f64,
    /// Local steps per round, >= 1.
    pub tau: usize,
    /// Communication rounds K.
    pub rounds: usize,
    /// Total clients n.
    pub clients: usize,
    /// Sampled clients m per round, 1 <= m <= n.
    pub sampled: usize,
    pub batch_size: usize,
    /// FedProx proximal weight, >= 0.
    pub mu: f64,
    pub algorithm: Algorithm,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            eta: 0.01,
            rho: 0.03,
            lambda: 0.5,
            tau: 10,
            rounds: 500,
            clients: 10,
            sampled: 10,
            batch_size: 20,
            mu: 1.0,
            algorithm: Algorithm::FedAvg,
        }
    }
}

impl HyperParams {
    /// Enforce invariants; returns human-readable warnings for settings that
    /// are legal but outside the theory's comfort zone.
    pub fn validate(&self) -> Result<Vec<String>> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidParameter {
                name: "eta",
                reason: format!("learning rate must be positive, got {}", self.eta),
            });
        }
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(Error::InvalidParameter {
                name: "rho",
                reason: format!("penalty must be nonnegative, got {}", self.rho),
            });
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: format!("mixing rate must lie in [0, 1], got {}", self.lambda),
            });
        }
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(Error::InvalidParameter {
                name: "mu",
                reason: format!("proximal weight must be nonnegative, got {}", self.mu),
            });
        }
        if self.tau == 0 {
            return Err(Error::InvalidParameter {
                name: "tau",
                reason: "at least one local step required".into(),
            });
        }
        if self.clients == 0 {
            return Err(Error::InvalidParameter {
                name: "clients",
                reason: "at least one client required".into(),
            });
        }
        if self.sampled == 0 || self.sampled > self.clients {
            return Err(Error::InvalidParameter {
                name: "sampled",
                reason: format!(
                    "sampled clients must satisfy 1 <= m <= n, got m = {}, n = {}",
                    self.sampled, self.clients
                ),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter {
                name: "batch_size",
                reason: "batch size must be positive".into(),
            });
        }
        let mut warnings = Vec::new();
        if self.lambda < 0.5 {
            warnings.push(format!(
                "lambda = {} lies outside [1/2, 1]; convergence is only guaranteed on that interval",
                self.lambda
            ));
        }
        Ok(warnings)
    }
}

/// Training data the optimizers draw from: either a supervised dataset with
/// a client partition, or the analytic quadratic test bed.
#[derive(Debug)]
pub enum ProblemData {
    Quadratic(QuadraticProblem),
    Supervised(SupervisedData),
}

#[derive(Debug)]
pub struct SupervisedData {
    dataset: LabeledDataset,
    partition: Partition,
    union_features: Array2<f64>,
    union_labels: Vec<u32>,
}

impl SupervisedData {
    pub fn new(dataset: LabeledDataset, partition: Partition) -> Result<Self> {
        partition.validate(dataset.count())?;
        let union: Vec<usize> = partition
            .shards()
            .iter()
            .flat_map(|s| s.iter().copied())
            .collect();
        if union.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (union_features, union_labels) = dataset.gather(&union);
        Ok(Self {
            dataset,
            partition,
            union_features,
            union_labels,
        })
    }

    pub fn dataset(&self) -> &LabeledDataset {
        &self.dataset
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }
}

impl ProblemData {
    pub fn num_clients(&self) -> usize {
        match self {
            ProblemData::Quadratic(p) => p.num_clients(),
            ProblemData::Supervised(s) => s.partition.num_clients(),
        }
    }

    /// Global training loss `f(x)` over the union of shards (analytic for
    /// the quadratic bed).
    pub fn train_loss(&self, spec: &ModelSpec, x: &ParamVector) -> Result<f64> {
        match self {
            ProblemData::Quadratic(p) => Ok(p.global_loss(x)),
            ProblemData::Supervised(s) => {
                let (loss, _) =
                    models::evaluate(spec, x, s.union_features.view(), &s.union_labels)?;
                Ok(loss)
            }
        }
    }

    /// Full-batch global gradient `grad f(x)`.
    pub fn global_grad(&self, spec: &ModelSpec, x: &ParamVector) -> Result<ParamVector> {
        match self {
            ProblemData::Quadratic(p) => Ok(p.global_grad(x)),
            ProblemData::Supervised(s) => {
                models::grad_dense(spec, x, s.union_features.view(), &s.union_labels)
            }
        }
    }

    /// Full-batch gradient of one client's objective `grad f_i(x)`.
    pub fn client_grad(&self, spec: &ModelSpec, client: usize, x: &ParamVector) -> Result<ParamVector> {
        match self {
            ProblemData::Quadratic(p) => x.sub(p.center(client)),
            ProblemData::Supervised(s) => {
                let (features, labels) = s.dataset.gather(s.partition.shard(client));
                models::grad_dense(spec, x, features.view(), &labels)
            }
        }
    }

    /// Draw the minibatch for client `client`, round `round`, local step
    /// `step`. The `(batch, noise)` purpose pair keeps the globalized and
    /// personalized model paths on independent sibling lineages.
    pub fn draw_batch(
        &self,
        master_seed: u64,
        client: usize,
        round: usize,
        step: usize,
        batch_purpose: Purpose,
        noise_purpose: Purpose,
        batch_size: usize,
    ) -> Result<Batch> {
        match self {
            ProblemData::Quadratic(p) => {
                let noise = if p.noise() > 0.0 {
                    let stream = RngStream::batch(master_seed, noise_purpose, client, round, step);
                    let mut rng = stream.rng();
                    let per_coord = p.noise() / (p.dim() as f64).sqrt();
                    Some(
                        (0..p.dim())
                            .map(|_| {
                                per_coord
                                    * <StandardNormal as Distribution<f64>>::sample(
                                        &StandardNormal,
                                        &mut rng,
                                    )
                            })
                            .collect(),
                    )
                } else {
                    None
                };
                Ok(Batch::Quadratic {
                    center: p.center(client).clone(),
                    noise,
                })
            }
            ProblemData::Supervised(s) => {
                let shard = s.partition.shard(client);
                if shard.is_empty() {
                    return Err(Error::EmptyDataset);
                }
                let indices: Vec<usize> = if batch_size >= shard.len() {
                    shard.to_vec()
                } else {
                    let stream = RngStream::batch(master_seed, batch_purpose, client, round, step);
                    let mut rng = stream.rng();
                    sample_indices(&mut rng, shard.len(), batch_size)
                        .into_iter()
                        .map(|pos| shard[pos])
                        .collect()
                };
                let (features, labels) = s.dataset.gather(&indices);
                Batch::supervised(features, labels)
            }
        }
    }
}

/// Server-side state: the global model, the round counter, and the SCAFFOLD
/// global control (all-zero unless SCAFFOLD runs).
#[derive(Clone, Debug, PartialEq)]
pub struct ServerState {
    pub x: ParamVector,
    pub round: usize,
    pub control: ParamVector,
}

impl ServerState {
    pub fn new(x0: ParamVector) -> Self {
        let control = ParamVector::zeros(x0.dim());
        Self {
            x: x0,
            round: 0,
            control,
        }
    }
}

/// Per-client persistent state.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientState {
    pub id: usize,
    /// Personalized model; initialized to `x0` for FedDeper kinds.
    pub v: Option<ParamVector>,
    /// SCAFFOLD per-client control variate.
    pub control: Option<ParamVector>,
}

/// Initial client states for a run: `v = x0` and zero controls where the
/// algorithm uses them.
pub fn init_clients(hyper: &HyperParams, x0: &ParamVector) -> Vec<ClientState> {
    (0..hyper.clients)
        .map(|id| ClientState {
            id,
            v: hyper
                .algorithm
                .has_personalized_model()
                .then(|| x0.clone()),
            control: hyper
                .algorithm
                .uses_control_variates()
                .then(|| ParamVector::zeros(x0.dim())),
        })
        .collect()
}

/// Uniformly sample `m` distinct clients out of `n`, ascending ids.
pub fn sample_clients(n: usize, m: usize, stream: &RngStream) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(Error::InvalidParameter {
            name: "m",
            reason: format!("cannot sample {m} of {n} clients"),
        });
    }
    let mut rng = stream.rng();
    Ok(sample_indices(&mut rng, n, m))
}

/// `x + (1/m) * sum(deltas)`, summed in the order given (callers pass
/// ascending client id).
pub fn aggregate(x: &ParamVector, deltas: &[ParamVector]) -> Result<ParamVector> {
    if deltas.is_empty() {
        return Err(Error::InvalidParameter {
            name: "deltas",
            reason: "aggregation requires at least one upload".into(),
        });
    }
    let mut sum = ParamVector::zeros(x.dim());
    for d in deltas {
        if d.dim() != x.dim() {
            return Err(Error::DimensionMismatch {
                left: d.dim(),
                right: x.dim(),
                context: "aggregate",
            });
        }
        sum.axpy_in_place(1.0, d);
    }
    let mut out = x.clone();
    out.axpy_in_place(1.0 / deltas.len() as f64, &sum);
    if let Some((index, value)) = out.first_non_finite() {
        return Err(Error::NonFinite {
            index,
            value,
            context: "aggregate",
        });
    }
    Ok(out)
}

/// Everything a local update needs to know about its surroundings.
pub struct LocalEnv<'a> {
    pub spec: &'a ModelSpec,
    pub hyper: &'a HyperParams,
    pub data: &'a ProblemData,
    pub master_seed: u64,
    pub client: usize,
    pub round: usize,
    /// Local steps for this run (already halved for FedDeper*).
    pub tau: usize,
    pub record_trajectory: bool,
}

impl LocalEnv<'_> {
    fn draw(&self, step: usize, batch: Purpose, noise: Purpose) -> Result<Batch> {
        self.data.draw_batch(
            self.master_seed,
            self.client,
            self.round,
            step,
            batch,
            noise,
            self.hyper.batch_size,
        )
    }
}

/// `p -= eta * g`, shared by every optimizer so reductions are bitwise.
fn step_in_place(p: &mut ParamVector, g: &ParamVector, eta: f64) {
    debug_assert_eq!(p.dim(), g.dim());
    for (pi, gi) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *pi -= eta * gi;
    }
}

fn check_iterate(p: &ParamVector, client: usize, step: usize, model: &'static str) -> Result<()> {
    if p.first_non_finite().is_some() {
        return Err(Error::Divergence {
            client,
            step,
            model,
        });
    }
    Ok(())
}

/// Result of one client's local update.
pub struct LocalRun {
    pub y_final: ParamVector,
    /// `y_0 .. y_tau` when trajectories are recorded.
    pub y_traj: Option<Vec<ParamVector>>,
}

pub struct ScaffoldRun {
    pub y_final: ParamVector,
    pub control_new: ParamVector,
    pub control_delta: ParamVector,
    pub y_traj: Option<Vec<ParamVector>>,
}

pub struct FedDeperRun {
    pub y_final: ParamVector,
    pub v_out: ParamVector,
    pub y_traj: Option<Vec<ParamVector>>,
    /// `v_0 .. v_tau` (pre-mixing values).
    pub v_traj: Option<Vec<ParamVector>>,
}

fn push_traj(traj: &mut Option<Vec<ParamVector>>, value: &ParamVector) {
    if let Some(t) = traj {
        t.push(value.clone());
    }
}

/// FedAvg local update: `tau` SGD steps from `y_0 = x`.
pub fn local_update_fedavg(env: &LocalEnv, x: &ParamVector) -> Result<LocalRun> {
    let mut y = x.clone();
    let mut traj = env.record_trajectory.then(Vec::new);
    push_traj(&mut traj, &y);
    for step in 0..env.tau {
        let batch = env.draw(step, Purpose::BatchGlobal, Purpose::NoiseGlobal)?;
        let g = models::grad(env.spec, &y, &batch)?;
        step_in_place(&mut y, &g, env.hyper.eta);
        check_iterate(&y, env.client, step, "y")?;
        push_traj(&mut traj, &y);
    }
    Ok(LocalRun {
        y_final: y,
        y_traj: traj,
    })
}

/// FedProx local update: `y <- y - eta * (g(y) + mu * (y - x))`.
pub fn local_update_fedprox(env: &LocalEnv, x: &ParamVector) -> Result<LocalRun> {
    let mu = env.hyper.mu;
    let mut y = x.clone();
    let mut traj = env.record_trajectory.then(Vec::new);
    push_traj(&mut traj, &y);
    for step in 0..env.tau {
        let batch = env.draw(step, Purpose::BatchGlobal, Purpose::NoiseGlobal)?;
        let mut g = models::grad(env.spec, &y, &batch)?;
        if mu != 0.0 {
            for ((gi, yi), xi) in g
                .as_mut_slice()
                .iter_mut()
                .zip(y.as_slice())
                .zip(x.as_slice())
            {
                *gi += mu * (yi - xi);
            }
        }
        step_in_place(&mut y, &g, env.hyper.eta);
        check_iterate(&y, env.client, step, "y")?;
        push_traj(&mut traj, &y);
    }
    Ok(LocalRun {
        y_final: y,
        y_traj: traj,
    })
}

/// SCAFFOLD local update with displacement-based control refresh:
/// `y <- y - eta * (g(y) - c_i + c)`, then
/// `c_i' = c_i - c + (x - y_tau) / (tau * eta)`.
pub fn local_update_scaffold(
    env: &LocalEnv,
    x: &ParamVector,
    c: &ParamVector,
    c_i: &ParamVector,
) -> Result<ScaffoldRun> {
    let correction = c.sub(c_i)?;
    let apply_correction = !correction.is_all_zero();
    let mut y = x.clone();
    let mut traj = env.record_trajectory.then(Vec::new);
    push_traj(&mut traj, &y);
    for step in 0..env.tau {
        let batch = env.draw(step, Purpose::BatchGlobal, Purpose::NoiseGlobal)?;
        let mut g = models::grad(env.spec, &y, &batch)?;
        if apply_correction {
            g.axpy_in_place(1.0, &correction);
        }
        step_in_place(&mut y, &g, env.hyper.eta);
        check_iterate(&y, env.client, step, "y")?;
        push_traj(&mut traj, &y);
    }
    let scale = 1.0 / (env.tau as f64 * env.hyper.eta);
    let mut control_new = c_i.sub(c)?;
    let displacement = x.sub(&y)?;
    control_new.axpy_in_place(scale, &displacement);
    let control_delta = control_new.sub(c_i)?;
    Ok(ScaffoldRun {
        y_final: y,
        control_new,
        control_delta,
        y_traj: traj,
    })
}

/// FedDeper local update: alternating steps on the surrogate (globalized)
/// and plain (personalized) objectives, then the mixing re-initialization.
///
/// Per step `j`:
///   `y_{j+1} = y_j - eta * g(y_j) - rho * (v_j + y_j - 2x)`
///   `v_{j+1} = v_j - eta * g(v_j)`
/// with independent minibatches for the two gradients; afterwards
/// `v_out = (1 - lambda) * v_tau + lambda * y_tau`.
pub fn local_update_feddeper(
    env: &LocalEnv,
    x: &ParamVector,
    v_in: &ParamVector,
) -> Result<FedDeperRun> {
    let (eta, rho, lambda) = (env.hyper.eta, env.hyper.rho, env.hyper.lambda);
    let mut y = x.clone();
    let mut v = v_in.clone();
    let mut y_traj = env.record_trajectory.then(Vec::new);
    let mut v_traj = env.record_trajectory.then(Vec::new);
    push_traj(&mut y_traj, &y);
    push_traj(&mut v_traj, &v);
    for step in 0..env.tau {
        let batch_y = env.draw(step, Purpose::BatchGlobal, Purpose::NoiseGlobal)?;
        let gy = models::grad(env.spec, &y, &batch_y)?;
        let batch_v = env.draw(step, Purpose::BatchPersonal, Purpose::NoisePersonal)?;
        let gv = models::grad(env.spec, &v, &batch_v)?;
        if rho != 0.0 {
            // One fused pass so each coordinate reads the pre-step y and v.
            for (((yi, gyi), vi), xi) in y
                .as_mut_slice()
                .iter_mut()
                .zip(gy.as_slice())
                .zip(v.as_slice())
                .zip(x.as_slice())
            {
                *yi -= eta * gyi + rho * (vi + *yi - 2.0 * xi);
            }
        } else {
            step_in_place(&mut y, &gy, eta);
        }
        check_iterate(&y, env.client, step, "y")?;
        step_in_place(&mut v, &gv, eta);
        check_iterate(&v, env.client, step, "v")?;
        push_traj(&mut y_traj, &y);
        push_traj(&mut v_traj, &v);
    }
    let v_out = mix(&v, &y, lambda)?;
    Ok(FedDeperRun {
        y_final: y,
        v_out,
        y_traj,
        v_traj,
    })
}

/// Trajectories retained for one client in diagnostics mode.
#[derive(Clone, Debug)]
pub struct ClientTrajectory {
    pub client: usize,
    /// `y_0 .. y_tau`.
    pub y: Vec<ParamVector>,
    /// `v_0 .. v_tau` for FedDeper kinds.
    pub v: Option<Vec<ParamVector>>,
}

/// Trajectories of every client (sampled or shadow) for one round.
#[derive(Clone, Debug)]
pub struct RoundTrajectories {
    pub per_client: Vec<ClientTrajectory>,
}

/// Output of one communication round.
pub struct RoundResult {
    pub server: ServerState,
    /// `(client id, y_tau - x)` for the sampled clients, ascending id.
    pub uploads: Vec<(usize, ParamVector)>,
    pub trajectories: Option<RoundTrajectories>,
}

/// Shared context for executing rounds.
pub struct RoundContext<'a> {
    pub spec: &'a ModelSpec,
    pub hyper: &'a HyperParams,
    pub data: &'a ProblemData,
    pub master_seed: u64,
    /// Record trajectories and run shadow updates on unsampled clients so
    /// the measured deviations average over all n clients.
    pub diagnostics: bool,
    pub parallel: bool,
}

struct ClientOutcome {
    client: usize,
    y_final: ParamVector,
    v_out: Option<ParamVector>,
    control_new: Option<ParamVector>,
    control_delta: Option<ParamVector>,
    y_traj: Option<Vec<ParamVector>>,
    v_traj: Option<Vec<ParamVector>>,
}

fn run_client(
    ctx: &RoundContext,
    server: &ServerState,
    state: &ClientState,
    record: bool,
) -> Result<ClientOutcome> {
    let env = LocalEnv {
        spec: ctx.spec,
        hyper: ctx.hyper,
        data: ctx.data,
        master_seed: ctx.master_seed,
        client: state.id,
        round: server.round,
        tau: ctx.hyper.algorithm.effective_tau(ctx.hyper.tau),
        record_trajectory: record,
    };
    let outcome = match ctx.hyper.algorithm {
        Algorithm::FedAvg => {
            let run = local_update_fedavg(&env, &server.x)?;
            ClientOutcome {
                client: state.id,
                y_final: run.y_final,
                v_out: None,
                control_new: None,
                control_delta: None,
                y_traj: run.y_traj,
                v_traj: None,
            }
        }
        Algorithm::FedProx => {
            let run = local_update_fedprox(&env, &server.x)?;
            ClientOutcome {
                client: state.id,
                y_final: run.y_final,
                v_out: None,
                control_new: None,
                control_delta: None,
                y_traj: run.y_traj,
                v_traj: None,
            }
        }
        Algorithm::Scaffold => {
            let c_i = state.control.as_ref().ok_or(Error::MissingTrajectory {
                client: state.id,
                step: None,
            })?;
            let run = local_update_scaffold(&env, &server.x, &server.control, c_i)?;
            ClientOutcome {
                client: state.id,
                y_final: run.y_final,
                v_out: None,
                control_new: Some(run.control_new),
                control_delta: Some(run.control_delta),
                y_traj: run.y_traj,
                v_traj: None,
            }
        }
        Algorithm::FedDeper | Algorithm::FedDeperStar => {
            let v_in = state.v.as_ref().ok_or(Error::MissingTrajectory {
                client: state.id,
                step: None,
            })?;
            let run = local_update_feddeper(&env, &server.x, v_in)?;
            ClientOutcome {
                client: state.id,
                y_final: run.y_final,
                v_out: Some(run.v_out),
                control_new: None,
                control_delta: None,
                y_traj: run.y_traj,
                v_traj: run.v_traj,
            }
        }
    };
    Ok(outcome)
}

/// Execute one communication round.
///
/// Samples `m` clients, runs the kind-appropriate local update, aggregates
/// the uploaded deltas in ascending client order, and advances the round
/// counter. Unsampled clients' persistent state is untouched; in diagnostics
/// mode they still execute shadow updates so trajectories cover all `n`
/// clients, with their uploads discarded.
pub fn run_round(
    ctx: &RoundContext,
    server: &ServerState,
    clients: &mut [ClientState],
) -> Result<RoundResult> {
    let hyper = ctx.hyper;
    if server.round >= hyper.rounds {
        return Err(Error::InvalidParameter {
            name: "round",
            reason: format!(
                "round {} is past the configured horizon K = {}",
                server.round, hyper.rounds
            ),
        });
    }
    let sampled = sample_clients(
        hyper.clients,
        hyper.sampled,
        &RngStream::client_sampling(ctx.master_seed, server.round),
    )?;
    let active: Vec<usize> = if ctx.diagnostics {
        (0..hyper.clients).collect()
    } else {
        sampled.clone()
    };

    let run_one = |&client: &usize| run_client(ctx, server, &clients[client], ctx.diagnostics);
    let outcomes: Vec<ClientOutcome> = if ctx.parallel {
        active.par_iter().map(run_one).collect::<Result<_>>()?
    } else {
        active.iter().map(run_one).collect::<Result<_>>()?
    };

    let mut uploads = Vec::with_capacity(sampled.len());
    let mut deltas = Vec::with_capacity(sampled.len());
    let mut control_deltas = Vec::new();
    let mut trajectories = ctx
        .diagnostics
        .then(|| Vec::with_capacity(outcomes.len()));
    let sampled_set: std::collections::BTreeSet<usize> = sampled.iter().copied().collect();

    for outcome in outcomes {
        let is_sampled = sampled_set.contains(&outcome.client);
        if let Some(traj) = trajectories.as_mut() {
            traj.push(ClientTrajectory {
                client: outcome.client,
                y: outcome.y_traj.clone().unwrap_or_default(),
                v: outcome.v_traj.clone(),
            });
        }
        if is_sampled {
            let delta = outcome.y_final.sub(&server.x)?;
            uploads.push((outcome.client, delta.clone()));
            deltas.push(delta);
            if let Some(v_out) = outcome.v_out {
                clients[outcome.client].v = Some(v_out);
            }
            if let Some(c_new) = outcome.control_new {
                clients[outcome.client].control = Some(c_new);
            }
            if let Some(c_delta) = outcome.control_delta {
                control_deltas.push(c_delta);
            }
        }
    }

    let x_next = aggregate(&server.x, &deltas)?;
    let mut control_next = server.control.clone();
    if hyper.algorithm.uses_control_variates() && !control_deltas.is_empty() {
        let mut mean = ParamVector::zeros(server.control.dim());
        for d in &control_deltas {
            mean.axpy_in_place(1.0, d);
        }
        let m = control_deltas.len() as f64;
        let participation = m / hyper.clients as f64;
        control_next.axpy_in_place(participation / m, &mean);
    }

    Ok(RoundResult {
        server: ServerState {
            x: x_next,
            round: server.round + 1,
            control: control_next,
        },
        uploads,
        trajectories: trajectories.map(|per_client| RoundTrajectories { per_client }),
    })
}

/// Per-round metrics row; `None` fields were not evaluated this round.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub k: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub test_acc: Option<f64>,
    pub pm_local_acc: Option<f64>,
    pub gm_local_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DeviationRecord>,
    pub wall_ms: f64,
}

/// Test-time evaluation data: the common test set, plus optional per-client
/// single-class shards for personalized/global local accuracy.
pub struct EvalData {
    pub test: LabeledDataset,
    pub individual: Option<Partition>,
    /// Evaluate every this many rounds (the final round always evaluates).
    pub every: usize,
}

/// Full configuration for a training run.
pub struct TrainingSetup<'a> {
    pub spec: &'a ModelSpec,
    pub hyper: &'a HyperParams,
    pub data: &'a ProblemData,
    pub master_seed: u64,
    pub diagnostics: bool,
    pub parallel: bool,
    pub eval: Option<&'a EvalData>,
    /// Known global optimum; with diagnostics on, enables the averaged
    /// personalized-gap accumulation.
    pub x_star: Option<&'a ParamVector>,
}

pub struct TrainingOutput {
    pub metrics: Vec<RoundMetrics>,
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    /// `(1/(n tau K)) * sum_{i,j,k} ||v_{i,j}^k - x*||^2` when measured.
    pub v_gap_mean: Option<f64>,
}

/// Run `K` rounds, recording metrics after each round.
pub fn run_training(setup: &TrainingSetup) -> Result<TrainingOutput> {
    for warning in setup.hyper.validate()? {
        log::warn!("{warning}");
    }
    if setup.data.num_clients() != setup.hyper.clients {
        return Err(Error::InvalidParameter {
            name: "clients",
            reason: format!(
                "hyper-params declare {} clients but the data provides {}",
                setup.hyper.clients,
                setup.data.num_clients()
            ),
        });
    }

    let x0 = models::init_params(setup.spec, &RngStream::param_init(setup.master_seed));
    let mut server = ServerState::new(x0.clone());
    let mut clients = init_clients(setup.hyper, &x0);
    let ctx = RoundContext {
        spec: setup.spec,
        hyper: setup.hyper,
        data: setup.data,
        master_seed: setup.master_seed,
        diagnostics: setup.diagnostics,
        parallel: setup.parallel,
    };

    let mut metrics = Vec::with_capacity(setup.hyper.rounds);
    let mut grad_sq_sum = 0.0;
    let mut xi0: Option<f64> = None;
    let mut v_gap_sum = 0.0;
    let mut v_gap_rounds = 0usize;

    for k in 0..setup.hyper.rounds {
        let t0 = Instant::now();
        if setup.diagnostics {
            let g = setup
                .data
                .global_grad(setup.spec, &server.x)
                .map_err(|e| Error::RoundFailed {
                    round: k,
                    source: Box::new(e),
                })?;
            grad_sq_sum += g.squared_norm();
        }
        let x_prev = server.x.clone();
        let result = run_round(&ctx, &server, &mut clients).map_err(|e| Error::RoundFailed {
            round: k,
            source: Box::new(e),
        })?;
        server = result.server;

        let diagnostics_record = if let Some(trajs) = &result.trajectories {
            let eps_avg = grad_sq_sum / (k + 1) as f64;
            let mut record =
                diagnostics::measure_deviations(trajs, &x_prev, &server.x, k, eps_avg)?;
            if k == 0 {
                xi0 = record.phi;
            }
            record.xi0 = xi0;
            if let Some(x_star) = setup.x_star {
                if let Some(gap) = diagnostics::round_v_gap(trajs, x_star) {
                    v_gap_sum += gap;
                    v_gap_rounds += 1;
                }
            }
            Some(record)
        } else {
            None
        };

        let train_loss = setup
            .data
            .train_loss(setup.spec, &server.x)
            .map_err(|e| Error::RoundFailed {
                round: k,
                source: Box::new(e),
            })?;

        let mut test_loss = None;
        let mut test_acc = None;
        let mut pm_local_acc = None;
        let mut gm_local_acc = None;
        if let Some(eval) = setup.eval {
            let due = (k + 1) % eval.every.max(1) == 0 || k + 1 == setup.hyper.rounds;
            if due {
                let (l, a) = models::evaluate(
                    setup.spec,
                    &server.x,
                    eval.test.features().view(),
                    eval.test.labels(),
                )?;
                test_loss = Some(l);
                test_acc = Some(a);
                if let Some(individual) = &eval.individual {
                    gm_local_acc = Some(individual_accuracy(
                        setup.spec,
                        &eval.test,
                        individual,
                        |_| Some(&server.x),
                    )?);
                    if setup.hyper.algorithm.has_personalized_model() {
                        pm_local_acc = Some(individual_accuracy(
                            setup.spec,
                            &eval.test,
                            individual,
                            |id| clients[id].v.as_ref(),
                        )?);
                    }
                }
            }
        }

        metrics.push(RoundMetrics {
            k,
            train_loss,
            test_loss,
            test_acc,
            pm_local_acc,
            gm_local_acc,
            diagnostics: diagnostics_record,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
    }

    Ok(TrainingOutput {
        metrics,
        server,
        clients,
        v_gap_mean: (v_gap_rounds > 0).then(|| v_gap_sum / v_gap_rounds as f64),
    })
}

/// Mean over clients of top-1 accuracy of `model(client)` on that client's
/// individual test shard. Clients whose model is absent are skipped.
fn individual_accuracy<'a>(
    spec: &ModelSpec,
    test: &LabeledDataset,
    individual: &Partition,
    model: impl Fn(usize) -> Option<&'a ParamVector>,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut counted = 0usize;
    for client in 0..individual.num_clients() {
        let shard = individual.shard(client);
        if shard.is_empty() {
            continue;
        }
        if let Some(p) = model(client) {
            let (features, labels) = test.gather(shard);
            let (_, acc) = models::evaluate(spec, p, features.view(), &labels)?;
            sum += acc;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(sum / counted as f64)
}
