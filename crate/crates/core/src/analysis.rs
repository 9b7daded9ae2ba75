//! Weighted-norm toolkit and numerical instantiations of the convergence
//! lemmas. Every check evaluates both sides directly, so the tests built on
//! it act as oracles for the analysis rather than re-deriving it.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::game::{GameConstants, GameError, GameSpec};
use crate::graph::{DirectedGraph, GraphError};
use crate::mixing::{estimate_pi, MixingError, WeightMatrix};
use crate::seeker::{Engine, RunConfig, SeekerError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Mixing(#[from] MixingError),
    #[error(transparent)]
    Seeker(#[from] SeekerError),
}

type Result<T> = std::result::Result<T, AnalysisError>;

/// Relative tolerance for exact identities.
pub const IDENTITY_TOL: f64 = 1e-10;
/// Slack for inequalities, relative to `max(1, |lhs|, |rhs|)`.
pub const INEQUALITY_TOL: f64 = 1e-9;
/// How far a weight vector may sum away from one.
pub const STOCHASTIC_TOL: f64 = 1e-12;

fn scale(a: f64, b: f64) -> f64 {
    1f64.max(a.abs()).max(b.abs())
}

/// Outcome of one two-sided evaluation. `slack` is the margin in the
/// direction of the inequality; negative means the inequality is violated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Check {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
}

impl Check {
    /// `lhs ≤ rhs`.
    pub fn le(lhs: f64, rhs: f64, tol: f64) -> Self {
        let slack = rhs - lhs;
        Self { lhs, rhs, slack, pass: slack >= -tol * scale(lhs, rhs) }
    }

    /// `lhs ≥ rhs`.
    pub fn ge(lhs: f64, rhs: f64, tol: f64) -> Self {
        let slack = lhs - rhs;
        Self { lhs, rhs, slack, pass: slack >= -tol * scale(lhs, rhs) }
    }

    /// `lhs = rhs`.
    pub fn eq(lhs: f64, rhs: f64, tol: f64) -> Self {
        let slack = -(lhs - rhs).abs();
        Self { lhs, rhs, slack, pass: -slack <= tol * scale(lhs, rhs) }
    }

    pub fn relative_residual(&self) -> f64 {
        (self.lhs - self.rhs).abs() / scale(self.lhs, self.rhs)
    }
}

/// `π`-weighted inner product and norm on `m×n` matrices whose rows are
/// agent vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedNorm {
    pi: DVector<f64>,
}

impl WeightedNorm {
    pub fn new(pi: DVector<f64>) -> Result<Self> {
        if pi.is_empty() {
            return Err(AnalysisError::Input("empty weight vector".into()));
        }
        if pi.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(AnalysisError::Input("weights must be positive".into()));
        }
        if (pi.sum() - 1.0).abs() > STOCHASTIC_TOL {
            return Err(AnalysisError::Input(format!("weights sum to {}", pi.sum())));
        }
        Ok(Self { pi })
    }

    pub fn uniform(m: usize) -> Self {
        Self { pi: DVector::from_element(m, 1.0 / m as f64) }
    }

    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    fn check_rows(&self, z: &DMatrix<f64>) -> Result<()> {
        if z.nrows() != self.pi.len() {
            return Err(AnalysisError::Input(format!("{} rows for {} weights", z.nrows(), self.pi.len())));
        }
        Ok(())
    }

    pub fn inner(&self, u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64> {
        self.check_rows(u)?;
        if u.shape() != v.shape() {
            return Err(AnalysisError::Input("shape mismatch".into()));
        }
        Ok((0..u.nrows()).map(|i| self.pi[i] * u.row(i).dot(&v.row(i))).sum())
    }

    pub fn norm_sq(&self, z: &DMatrix<f64>) -> Result<f64> {
        self.check_rows(z)?;
        Ok((0..z.nrows()).map(|i| self.pi[i] * z.row(i).norm_squared()).sum())
    }

    pub fn norm(&self, z: &DMatrix<f64>) -> Result<f64> {
        Ok(self.norm_sq(z)?.sqrt())
    }

    /// `ẑ_π = Σ_i π_i z_i`.
    pub fn average(&self, z: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_rows(z)?;
        Ok(z.tr_mul(&self.pi))
    }

    /// `Σ_i π_i ‖z_i − ẑ_π‖²`.
    pub fn dispersion(&self, z: &DMatrix<f64>) -> Result<f64> {
        let avg = self.average(z)?;
        self.norm_sq(&(z - stack(&avg, z.nrows())))
    }
}

/// `1 u'`: the matrix with every row equal to `u`.
pub fn stack(u: &DVector<f64>, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, u.len(), |_, j| u[j])
}

pub fn weighted_norm(z: &DMatrix<f64>, pi: &DVector<f64>) -> Result<f64> {
    WeightedNorm::new(pi.clone())?.norm(z)
}

pub fn weighted_inner(u: &DMatrix<f64>, v: &DMatrix<f64>, pi: &DVector<f64>) -> Result<f64> {
    WeightedNorm::new(pi.clone())?.inner(u, v)
}

/// `‖u‖_π / sqrt(max π) ≤ ‖u‖ ≤ ‖u‖_π / sqrt(min π)`, as (lower, upper).
pub fn norm_ineq_check(z: &DMatrix<f64>, pi: &DVector<f64>) -> Result<(Check, Check)> {
    let nrm = WeightedNorm::new(pi.clone())?;
    let wz = nrm.norm(z)?;
    let plain = z.norm();
    Ok((
        Check::le(wz / pi.max().sqrt(), plain, INEQUALITY_TOL),
        Check::le(plain, wz / pi.min().sqrt(), INEQUALITY_TOL),
    ))
}

/// `|⟨u, v⟩_π| ≤ ‖u‖_π ‖v‖_π`.
pub fn cauchy_schwarz_check(u: &DMatrix<f64>, v: &DMatrix<f64>, pi: &DVector<f64>) -> Result<Check> {
    let nrm = WeightedNorm::new(pi.clone())?;
    Ok(Check::le(nrm.inner(u, v)?.abs(), nrm.norm(u)? * nrm.norm(v)?, INEQUALITY_TOL))
}

fn check_vectors(us: &[DVector<f64>], gammas: &[f64]) -> Result<usize> {
    if us.is_empty() || us.len() != gammas.len() {
        return Err(AnalysisError::Input(format!("{} vectors and {} weights", us.len(), gammas.len())));
    }
    let n = us[0].len();
    if us.iter().any(|u| u.len() != n) {
        return Err(AnalysisError::Input("vectors differ in length".into()));
    }
    Ok(n)
}

fn weighted_sum(us: &[DVector<f64>], gammas: &[f64], n: usize) -> DVector<f64> {
    us.iter().zip(gammas).fold(DVector::zeros(n), |acc, (u, &g)| acc + u * g)
}

/// `½ Σ_i Σ_j γ_i γ_j ‖u_i − u_j‖²`.
fn pair_dispersion(us: &[DVector<f64>], gammas: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..us.len() {
        for j in 0..us.len() {
            total += gammas[i] * gammas[j] * (&us[i] - &us[j]).norm_squared();
        }
    }
    0.5 * total
}

/// `‖Σγ_i u_i‖² = (Σγ_i) Σγ_i‖u_i‖² − ½ΣΣγ_iγ_j‖u_i − u_j‖²` for arbitrary
/// real `γ`.
pub fn lemma1a_check(us: &[DVector<f64>], gammas: &[f64]) -> Result<Check> {
    let n = check_vectors(us, gammas)?;
    let lhs = weighted_sum(us, gammas, n).norm_squared();
    let gsum: f64 = gammas.iter().sum();
    let sq: f64 = us.iter().zip(gammas).map(|(u, g)| g * u.norm_squared()).sum();
    Ok(Check::eq(lhs, gsum * sq - pair_dispersion(us, gammas), IDENTITY_TOL))
}

/// The identities that need `Σγ_i = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Report {
    pub part_a: Check,
    /// `‖Σγ_i u_i − u‖² = Σγ_i‖u_i − u‖² − ½ΣΣγ_iγ_j‖u_i − u_j‖²`.
    pub part_b: Check,
    /// `½ΣΣγ_iγ_j‖u_i − u_j‖² = Σγ_i‖u_i − ū‖²`, `ū = Σγ_i u_i`.
    pub aver_disp: Check,
    /// `‖Σγ_i u_i − u‖² = Σγ_i‖u_i − u‖² − Σγ_i‖u_i − ū‖²`.
    pub gen_aver: Check,
}

impl Lemma1Report {
    pub fn max_residual(&self) -> f64 {
        [self.part_a, self.part_b, self.aver_disp, self.gen_aver].iter().map(Check::relative_residual).fold(0.0, f64::max)
    }

    pub fn pass(&self) -> bool {
        self.part_a.pass && self.part_b.pass && self.aver_disp.pass && self.gen_aver.pass
    }
}

pub fn lemma1_check(us: &[DVector<f64>], gammas: &[f64], u: &DVector<f64>) -> Result<Lemma1Report> {
    let n = check_vectors(us, gammas)?;
    if u.len() != n {
        return Err(AnalysisError::Input("reference vector has the wrong length".into()));
    }
    let gsum: f64 = gammas.iter().sum();
    if (gsum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(AnalysisError::Precondition(format!("weights sum to {gsum}, not 1")));
    }
    let bar = weighted_sum(us, gammas, n);
    let disp = pair_dispersion(us, gammas);
    let to_u: f64 = us.iter().zip(gammas).map(|(ui, g)| g * (ui - u).norm_squared()).sum();
    let to_bar: f64 = us.iter().zip(gammas).map(|(ui, g)| g * (ui - &bar).norm_squared()).sum();
    let lhs_b = (&bar - u).norm_squared();
    Ok(Lemma1Report {
        part_a: lemma1a_check(us, gammas)?,
        part_b: Check::eq(lhs_b, to_u - disp, IDENTITY_TOL),
        aver_disp: Check::eq(disp, to_bar, IDENTITY_TOL),
        gen_aver: Check::eq(lhs_b, to_u - to_bar, IDENTITY_TOL),
    })
}

/// `Σ_{(j,l)∈E} ‖z_j − z_l‖² ≥ 2/(D K) Σ_{j<l} ‖z_j − z_l‖²` with rows of
/// `z` as the `z_j`.
pub fn lemma2_check(g: &DirectedGraph, z: &DMatrix<f64>) -> Result<Check> {
    let m = g.num_nodes();
    if z.nrows() != m {
        return Err(AnalysisError::Input(format!("{} rows for {m} nodes", z.nrows())));
    }
    let metrics = g.metrics()?;
    if metrics.diameter == 0 {
        return Err(AnalysisError::Precondition("needs at least two nodes".into()));
    }
    let dist = |j: usize, l: usize| (z.row(j) - z.row(l)).norm_squared();
    let lhs: f64 = g.edges().map(|(j, l)| dist(j, l)).sum();
    let mut all = 0.0;
    for j in 0..m {
        for l in j + 1..m {
            all += dist(j, l);
        }
    }
    let rhs = 2.0 / (metrics.diameter * metrics.max_edge_utility) as f64 * all;
    Ok(Check::ge(lhs, rhs, INEQUALITY_TOL))
}

/// Graph of the positive off-diagonal support of `W`: `W_ij > 0` is the
/// edge `j → i`.
pub fn support_graph(w: &DMatrix<f64>) -> Result<DirectedGraph> {
    let m = w.nrows();
    let mut g = DirectedGraph::with_self_loops(m);
    for i in 0..m {
        for j in 0..m {
            if i != j && w[(i, j)] > 0.0 {
                g.add_edge(j, i)?;
            }
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma6Report {
    /// Row-wise form `Σφ_i‖r_i − u‖² ≤ Σπ_j‖z_j − u‖² − η Σπ_j‖z_j − ẑ_π‖²`.
    pub main: Check,
    /// Matrix form `‖Wz − 1u'‖²_φ ≤ ‖z − 1u'‖²_π − η‖z − 1ẑ_π'‖²_π`.
    pub compact: Check,
    /// `min(φ) min(W⁺)² / (max²(π) D K)`.
    pub eta: f64,
}

impl Lemma6Report {
    pub fn pass(&self) -> bool {
        self.main.pass && self.compact.pass
    }
}

pub fn lemma6_check(w: &WeightMatrix, phi: &DVector<f64>, pi: &DVector<f64>, z: &DMatrix<f64>, u: &DVector<f64>) -> Result<Lemma6Report> {
    let wm = w.matrix();
    let m = wm.nrows();
    let nphi = WeightedNorm::new(phi.clone())?;
    let npi = WeightedNorm::new(pi.clone())?;
    if phi.len() != m || pi.len() != m || z.nrows() != m || z.ncols() != u.len() {
        return Err(AnalysisError::Input("dimension mismatch".into()));
    }
    let gap = (wm.tr_mul(phi) - pi).amax();
    if gap > 1e-10 {
        return Err(AnalysisError::Precondition(format!("phi'W differs from pi' by {gap:e}")));
    }
    let metrics = support_graph(wm)?.metrics()?;
    if metrics.diameter == 0 {
        return Err(AnalysisError::Precondition("needs at least two nodes".into()));
    }
    let eta = phi.min() * w.min_positive().powi(2) / (pi.max().powi(2) * (metrics.diameter * metrics.max_edge_utility) as f64);

    let avg: DVector<f64> = (0..m).fold(DVector::zeros(u.len()), |acc, j| acc + z.row(j).transpose() * pi[j]);
    let mut lhs = 0.0;
    for i in 0..m {
        let mut r = DVector::zeros(u.len());
        for j in 0..m {
            r += z.row(j).transpose() * wm[(i, j)];
        }
        lhs += phi[i] * (r - u).norm_squared();
    }
    let mut to_u = 0.0;
    let mut disp = 0.0;
    for j in 0..m {
        to_u += pi[j] * (z.row(j).transpose() - u).norm_squared();
        disp += pi[j] * (z.row(j).transpose() - &avg).norm_squared();
    }
    let main = Check::le(lhs, to_u - eta * disp, INEQUALITY_TOL);

    let ones_u = stack(u, m);
    let compact_lhs = nphi.norm_sq(&(wm * z - &ones_u))?;
    let compact_rhs = npi.norm_sq(&(z - &ones_u))? - eta * npi.dispersion(z)?;
    Ok(Lemma6Report { main, compact: Check::le(compact_lhs, compact_rhs, INEQUALITY_TOL), eta })
}

/// Row `i` is zero except block `i`, which holds `α_i ∇_i J_i(z_i)`.
pub fn f_alpha(z: &DMatrix<f64>, game: &GameSpec, alphas: &[f64]) -> Result<DMatrix<f64>> {
    let layout = game.layout();
    let m = layout.num_agents();
    if z.nrows() != m || z.ncols() != layout.total() || alphas.len() != m {
        return Err(AnalysisError::Input("dimension mismatch".into()));
    }
    let mut out = DMatrix::zeros(m, layout.total());
    for i in 0..m {
        let row = z.row(i).transpose();
        let g = game.partial_gradient(i, row.as_view())? * alphas[i];
        out.view_mut((i, layout.offset(i)), (1, layout.dim(i))).copy_from(&g.transpose());
    }
    Ok(out)
}

/// `‖∇_iJ_i(x) − ∇_iJ_i(y)‖² ≤ (L_{-i}² + L_i²) ‖x − y‖²`.
pub fn lemma4_check(game: &GameSpec, consts: &GameConstants, agent: usize, x: &DVector<f64>, y: &DVector<f64>) -> Result<Check> {
    let gx = game.partial_gradient(agent, x.as_view())?;
    let gy = game.partial_gradient(agent, y.as_view())?;
    let lhs = (gx - gy).norm_squared();
    Ok(Check::le(lhs, consts.combined_lipschitz(agent).powi(2) * (x - y).norm_squared(), INEQUALITY_TOL))
}

/// `L_α = sqrt(max_i α_i² (L_{-i}² + L_i²))`.
pub fn l_alpha(consts: &GameConstants, alphas: &[f64]) -> f64 {
    alphas.iter().enumerate().map(|(i, a)| a * a * consts.combined_lipschitz(i).powi(2)).fold(0.0, f64::max).sqrt()
}

/// `‖F_α(Z) − F_α(Y)‖_π ≤ L_α ‖Z − Y‖_π`.
pub fn lemma5_check(
    game: &GameSpec,
    consts: &GameConstants,
    alphas: &[f64],
    z: &DMatrix<f64>,
    y: &DMatrix<f64>,
    pi: &DVector<f64>,
) -> Result<Check> {
    let nrm = WeightedNorm::new(pi.clone())?;
    let lhs = nrm.norm(&(f_alpha(z, game, alphas)? - f_alpha(y, game, alphas)?))?;
    Ok(Check::le(lhs, l_alpha(consts, alphas) * nrm.norm(&(z - y))?, INEQUALITY_TOL))
}

/// One recorded round of the seeker.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    pub k: usize,
    pub z: DMatrix<f64>,
    pub z_next: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub pi_k: DVector<f64>,
    pub pi_next: DVector<f64>,
    pub x_star: DVector<f64>,
}

impl RoundTrace {
    fn validate(&self) -> Result<()> {
        let (m, n) = self.z.shape();
        let ok = self.z_next.shape() == (m, n)
            && self.w.shape() == (m, m)
            && self.pi_k.len() == m
            && self.pi_next.len() == m
            && self.x_star.len() == n;
        if !ok || m == 0 {
            return Err(AnalysisError::Input(format!("inconsistent trace at round {}", self.k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma7Report {
    pub l_alpha: f64,
    pub beta_alpha: f64,
    /// `(1 + L_α²) ‖W Z − x*‖²_{π_{k+1}}`.
    pub mixed: f64,
    /// `2 β_α ‖ẑ − x*‖²_{π_k}`, subtracted.
    pub monotone: f64,
    /// `2 L_α ‖W Z − x*‖_{π_{k+1}} ‖W Z − ẑ‖_{π_{k+1}}`.
    pub cross_mixed: f64,
    /// `2 L_α ‖W Z − ẑ‖_{π_{k+1}} ‖ẑ − x*‖_{π_{k+1}}`.
    pub cross_average: f64,
    /// `‖Z^{k+1} − x*‖²_{π_{k+1}}` against the sum of the four terms.
    pub check: Check,
}

/// Evaluates the one-round bound on `‖Z^{k+1} − x*‖²_{π_{k+1}}`. Without an
/// explicit `β_α` the round's own `min_i [π_{k+1}]_i α_i μ_i` is used, which
/// is the tightest value the bound admits.
pub fn lemma7_check(trace: &RoundTrace, consts: &GameConstants, alphas: &[f64], beta_alpha: Option<f64>) -> Result<Lemma7Report> {
    trace.validate()?;
    let m = trace.z.nrows();
    if alphas.len() != m || consts.num_agents() != m {
        return Err(AnalysisError::Input("stepsizes or constants do not match the trace".into()));
    }
    let next = WeightedNorm::new(trace.pi_next.clone())?;
    let cur = WeightedNorm::new(trace.pi_k.clone())?;
    let la = l_alpha(consts, alphas);
    let beta = beta_alpha.unwrap_or_else(|| (0..m).map(|i| trace.pi_next[i] * alphas[i] * consts.mu[i]).fold(f64::INFINITY, f64::min));
    let xs = stack(&trace.x_star, m);
    let wz = &trace.w * &trace.z;
    let zhat = stack(&cur.average(&trace.z)?, m);
    let wz_x = next.norm(&(&wz - &xs))?;
    let wz_hat = next.norm(&(&wz - &zhat))?;
    let mixed = (1.0 + la * la) * wz_x * wz_x;
    let monotone = 2.0 * beta * cur.norm_sq(&(&zhat - &xs))?;
    let cross_mixed = 2.0 * la * wz_x * wz_hat;
    let cross_average = 2.0 * la * wz_hat * next.norm(&(&zhat - &xs))?;
    let lhs = next.norm_sq(&(&trace.z_next - &xs))?;
    Ok(Lemma7Report {
        l_alpha: la,
        beta_alpha: beta,
        mixed,
        monotone,
        cross_mixed,
        cross_average,
        check: Check::le(lhs, mixed - monotone + cross_mixed + cross_average, INEQUALITY_TOL),
    })
}

/// Runs the seeker for `rounds` rounds and records each one together with
/// `π_k` and `π_{k+1}`.
pub fn collect_traces(config: &RunConfig, x_star: &DVector<f64>, rounds: usize) -> Result<Vec<RoundTrace>> {
    let mut engine = Engine::new(config)?;
    let pis = estimate_pi(engine.weights(), rounds + 1, 1e-13, 1_000_000)?;
    let pi_at = |k: usize| pis.get(k).cloned().ok_or_else(|| AnalysisError::Input(format!("no pi for round {k}")));
    let mut out = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let step = engine.step()?;
        out.push(RoundTrace {
            k: step.k,
            z: step.prev.matrix().clone(),
            z_next: engine.state().matrix().clone(),
            w: step.weight.into_matrix(),
            pi_k: pi_at(step.k)?,
            pi_next: pi_at(step.k + 1)?,
            x_star: x_star.clone(),
        });
    }
    Ok(out)
}

/// One fuzz trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuzzRecord {
    pub trial: usize,
    pub seed: u64,
    pub check: Check,
}

/// Runs `trials` independent checks in parallel; trial `t` gets seed
/// `base_seed + t`. Records come back in trial order.
pub fn fuzz<F>(trials: usize, base_seed: u64, check: F) -> Result<Vec<FuzzRecord>>
where
    F: Fn(u64) -> Result<Check> + Sync,
{
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let seed = base_seed.wrapping_add(trial as u64);
            Ok(FuzzRecord { trial, seed, check: check(seed)? })
        })
        .collect()
}

pub fn fuzz_csv(records: &[FuzzRecord]) -> String {
    let mut out = String::from("trial,seed,lhs,rhs,slack,pass\n");
    for r in records {
        out.push_str(&format!("{},{},{:e},{:e},{:e},{}\n", r.trial, r.seed, r.check.lhs, r.check.rhs, r.check.slack, r.check.pass));
    }
    out
}
