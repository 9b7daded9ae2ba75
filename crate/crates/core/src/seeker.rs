//! Round-synchronous execution of the distributed gradient-play method.
//!
//! Agent `i` holds a row `z_i ∈ R^n` with estimates of every agent's action.
//! Each round mixes rows with a row-stochastic `W_k` and replaces the own
//! block by a projected gradient step taken at the mixed row.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{BlockLayout, GameError, GameSpec};
use crate::graph::{GraphError, GraphSequence};
use crate::mixing::{default_mixing_delta, estimate_pi, eta_report, MixingError, PiSequence, WeightMatrix, WeightSequence};

#[derive(Debug, Error)]
pub enum SeekerError {
    #[error("non-finite gradient for agent {agent} in round {round}")]
    NonFinite { agent: usize, round: usize },
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Mixing(#[from] MixingError),
}

/// Stacked estimates, one row per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateMatrix {
    layout: BlockLayout,
    z: DMatrix<f64>,
}

impl EstimateMatrix {
    pub fn zeros(layout: &BlockLayout) -> Self {
        Self { z: DMatrix::zeros(layout.num_agents(), layout.total()), layout: layout.clone() }
    }

    pub fn from_matrix(layout: &BlockLayout, z: DMatrix<f64>) -> Result<Self, SeekerError> {
        if z.nrows() != layout.num_agents() || z.ncols() != layout.total() {
            return Err(SeekerError::Config(format!(
                "estimate matrix is {}x{}, expected {}x{}",
                z.nrows(),
                z.ncols(),
                layout.num_agents(),
                layout.total()
            )));
        }
        Ok(Self { layout: layout.clone(), z })
    }

    /// Every row equal to `x'`.
    pub fn consensual(layout: &BlockLayout, x: &DVector<f64>) -> Self {
        let m = layout.num_agents();
        Self { layout: layout.clone(), z: DMatrix::from_fn(m, layout.total(), |_, c| x[c]) }
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.z
    }

    /// The joint action `x = (z_11, …, z_mm)`.
    pub fn actions(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.layout.total());
        for i in 0..self.layout.num_agents() {
            let r = self.layout.range(i);
            for c in r {
                x[c] = self.z[(i, c)];
            }
        }
        x
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (&self.z - &other.z).amax()
    }
}

/// `W Z`: row `i` holds `v_ii` in block `i` and `z_{i,-i}` elsewhere.
pub fn mix(z: &EstimateMatrix, w: &WeightMatrix) -> Result<EstimateMatrix, SeekerError> {
    if w.size() != z.layout.num_agents() {
        return Err(SeekerError::Config(format!("weight matrix has size {}, expected {}", w.size(), z.layout.num_agents())));
    }
    Ok(EstimateMatrix { layout: z.layout.clone(), z: w.matrix() * &z.z })
}

/// One synchronous round of the method at round index `k`.
pub fn round(z: &EstimateMatrix, w: &WeightMatrix, game: &GameSpec, alphas: &[f64], k: usize) -> Result<EstimateMatrix, SeekerError> {
    if z.layout != *game.layout() {
        return Err(SeekerError::Config("estimate layout does not match the game".into()));
    }
    if alphas.len() != game.num_agents() {
        return Err(SeekerError::Config(format!("{} stepsizes for {} agents", alphas.len(), game.num_agents())));
    }
    let mut next = mix(z, w)?;
    for (i, &alpha) in alphas.iter().enumerate() {
        let row = next.z.row(i).transpose();
        let grad = game.partial_gradient(i, row.as_view())?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(SeekerError::NonFinite { agent: i, round: k });
        }
        let range = game.layout().range(i);
        let step = row.rows(range.start, range.len()) - grad * alpha;
        let x_i = game.project_agent(i, &step)?;
        next.z.view_mut((i, range.start), (1, range.len())).copy_from(&x_i.transpose());
    }
    Ok(next)
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub game: GameSpec,
    pub graphs: GraphSequence,
    /// Mixing-δ; `None` picks `0.5 / max_{i,k} d_k(i)` over `max_iter` rounds.
    pub mixing_delta: Option<f64>,
    pub alphas: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub z0: Option<DMatrix<f64>>,
    /// Compute `π_k`-weighted errors and `η_k` when an equilibrium is supplied.
    pub weighted: bool,
}

pub const DEFAULT_TOL: f64 = 1e-3;
pub const DEFAULT_MAX_ITER: usize = 100_000;

impl RunConfig {
    /// Uniform stepsize `alpha` with default tolerance and budget.
    pub fn new(game: GameSpec, graphs: GraphSequence, alpha: f64) -> Self {
        let m = game.num_agents();
        Self {
            game,
            graphs,
            mixing_delta: None,
            alphas: vec![alpha; m],
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            seed: 0,
            z0: None,
            weighted: true,
        }
    }

    pub fn validate(&self) -> Result<(), SeekerError> {
        let m = self.game.num_agents();
        if self.graphs.num_nodes() != m {
            return Err(SeekerError::Config(format!("graph has {} nodes for {m} agents", self.graphs.num_nodes())));
        }
        if self.alphas.len() != m || self.alphas.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(SeekerError::Config("stepsizes must be positive, one per agent".into()));
        }
        if !(self.tol > 0.0) {
            return Err(SeekerError::Config(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(SeekerError::Config("max_iter must be at least 1".into()));
        }
        if let Some(z0) = &self.z0 {
            if z0.iter().any(|v| !v.is_finite()) {
                return Err(SeekerError::Config("initial estimates must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn resolved_delta(&self) -> f64 {
        self.mixing_delta.unwrap_or_else(|| default_mixing_delta(&self.graphs, self.max_iter))
    }

    pub fn weights(&self) -> Result<WeightSequence, SeekerError> {
        Ok(WeightSequence::new(self.graphs.clone(), self.resolved_delta())?)
    }
}

/// Stateful driver exposing each round; [`run`] is built on it.
pub struct Engine<'a> {
    config: &'a RunConfig,
    weights: WeightSequence,
    z: EstimateMatrix,
    k: usize,
}

/// What one [`Engine::step`] produced.
pub struct Step {
    pub k: usize,
    pub weight: WeightMatrix,
    pub prev: EstimateMatrix,
}

impl<'a> Engine<'a> {
    pub fn new(config: &'a RunConfig) -> Result<Self, SeekerError> {
        config.validate()?;
        let weights = config.weights()?;
        if let GraphSequence::Static(g) = &config.graphs {
            g.validate()?;
        }
        let layout = config.game.layout();
        let z = match &config.z0 {
            Some(z0) => EstimateMatrix::from_matrix(layout, z0.clone())?,
            None => EstimateMatrix::zeros(layout),
        };
        Ok(Self { config, weights, z, k: 0 })
    }

    pub fn weights(&self) -> &WeightSequence {
        &self.weights
    }

    pub fn round_index(&self) -> usize {
        self.k
    }

    pub fn state(&self) -> &EstimateMatrix {
        &self.z
    }

    /// Advances from `Z^k` to `Z^{k+1}`.
    pub fn step(&mut self) -> Result<Step, SeekerError> {
        let k = self.k;
        if !self.weights.is_static() {
            self.config.graphs.graph_at(k).validate()?;
        }
        let w = self.weights.at(k)?;
        let next = round(&self.z, &w, &self.config.game, &self.config.alphas, k)?;
        let prev = std::mem::replace(&mut self.z, next);
        self.k += 1;
        Ok(Step { k, weight: w, prev })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopReason {
    Tolerance,
    Budget,
}

/// Metrics of round `k`, i.e. of the transition `Z^k → Z^{k+1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundMetrics {
    pub k: usize,
    pub dx_inf: f64,
    pub dz_inf: f64,
    /// `‖x^{k+1} − x*‖_∞`.
    pub err_inf: Option<f64>,
    /// `‖Z^{k+1} − 1 x*'‖²_{π_{k+1}}`.
    pub weighted_err: Option<f64>,
    pub eta_k: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub rounds: Vec<RoundMetrics>,
    pub stop: StopReason,
    pub final_state: EstimateMatrix,
    pub mixing_delta: f64,
    /// `‖Z^0 − 1 x*'‖²_{π_0}` when weighted errors were tracked.
    pub initial_weighted_err: Option<f64>,
    /// The `π_k` estimates used for weighted errors.
    pub pis: Option<PiSequence>,
    pub wall_time: Duration,
}

impl RunRecord {
    pub fn iterations(&self) -> usize {
        self.rounds.len()
    }

    pub fn converged(&self) -> bool {
        self.stop == StopReason::Tolerance
    }

    pub fn last(&self) -> Option<&RoundMetrics> {
        self.rounds.last()
    }

    pub fn final_actions(&self) -> DVector<f64> {
        self.final_state.actions()
    }

    /// CSV with columns `k,dx_inf,dz_inf,err_inf,weighted_err,eta_k`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,dx_inf,dz_inf,err_inf,weighted_err,eta_k\n");
        let opt = |v: Option<f64>| v.map(|v| format!("{v:e}")).unwrap_or_default();
        for r in &self.rounds {
            writeln!(out, "{},{:e},{:e},{},{},{}", r.k, r.dx_inf, r.dz_inf, opt(r.err_inf), opt(r.weighted_err), opt(r.eta_k)).unwrap();
        }
        out
    }
}

/// `Σ_i π_i ‖z_i − x‖²`.
pub fn weighted_sq_error(z: &EstimateMatrix, x: &DVector<f64>, pi: &DVector<f64>) -> f64 {
    z.z.row_iter().zip(pi.iter()).map(|(row, p)| p * (row.transpose() - x).norm_squared()).sum()
}

/// Horizon cap for the `π_k` tail products.
const PI_HORIZON_CAP: usize = 1_000_000;
/// Agreement of the tail-product rows before `π_k` is read off.
const PI_TOL: f64 = 1e-13;

/// Runs until both `‖x^{k+1}−x^k‖_∞` and `‖Z^{k+1}−Z^k‖_∞` drop below the
/// tolerance, or the budget is spent.
///
/// With an equilibrium `x_star` the record carries `‖x^{k+1}−x*‖_∞`; if
/// `config.weighted` is set the run is replayed once the round count is
/// known, to attach `π_k`-weighted errors and `η_k`.
pub fn run(config: &RunConfig, x_star: Option<&DVector<f64>>) -> Result<RunRecord, SeekerError> {
    let start = Instant::now();
    let mut engine = Engine::new(config)?;
    let mixing_delta = engine.weights().delta();
    let mut rounds = Vec::new();
    let mut x_prev = engine.state().actions();
    let mut stop = StopReason::Budget;
    while engine.round_index() < config.max_iter {
        let step = engine.step()?;
        let x = engine.state().actions();
        let dx = (&x - &x_prev).amax();
        let dz = engine.state().max_abs_diff(&step.prev);
        let err_inf = x_star.map(|xs| (&x - xs).amax());
        rounds.push(RoundMetrics { k: step.k, dx_inf: dx, dz_inf: dz, err_inf, weighted_err: None, eta_k: None });
        x_prev = x;
        if dx < config.tol && dz < config.tol {
            stop = StopReason::Tolerance;
            break;
        }
    }
    let final_state = engine.state().clone();
    let mut record = RunRecord { rounds, stop, final_state, mixing_delta, initial_weighted_err: None, pis: None, wall_time: Duration::ZERO };
    if let (Some(xs), true) = (x_star, config.weighted) {
        attach_weighted(config, xs, &mut record)?;
    }
    record.wall_time = start.elapsed();
    Ok(record)
}

fn attach_weighted(config: &RunConfig, x_star: &DVector<f64>, record: &mut RunRecord) -> Result<(), SeekerError> {
    let n_rounds = record.rounds.len();
    let mut engine = Engine::new(config)?;
    let pis = estimate_pi(engine.weights(), n_rounds, PI_TOL, PI_HORIZON_CAP)?;
    // a single agent has no dispersion to contract
    let etas = if config.game.num_agents() > 1 { Some(eta_report(engine.weights(), &pis, n_rounds)?) } else { None };
    let pi_at = |k: usize| pis.get(k).expect("pi estimated for every round");
    record.initial_weighted_err = Some(weighted_sq_error(engine.state(), x_star, pi_at(0)));
    for k in 0..n_rounds {
        engine.step()?;
        let r = &mut record.rounds[k];
        r.weighted_err = Some(weighted_sq_error(engine.state(), x_star, pi_at(k + 1)));
        r.eta_k = etas.as_ref().and_then(|e| e.per_round.get(k).or(e.per_round.last()).copied());
    }
    record.pis = Some(pis);
    Ok(())
}
