//! Games with box-constrained actions, the Nash-Cournot instance and a
//! full-information Nash equilibrium solver used as the reference oracle.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, DVectorView, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("agent index {index} out of range for {agents} agents")]
    AgentIndex { index: usize, agents: usize },
    #[error("invalid game specification: {0}")]
    Spec(String),
    #[error("empty action set: lower bound exceeds upper bound at component {component}")]
    EmptyBox { component: usize },
    #[error("point lies outside the action set (excess {excess:e})")]
    Infeasible { excess: f64 },
    #[error("equilibrium iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last: DVector<f64>,
    },
    #[error("cannot read game file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed game file: {0}")]
    Parse(String),
}

/// Partition of the joint action vector into per-agent blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    total: usize,
}

impl BlockLayout {
    pub fn new(dims: Vec<usize>) -> Result<Self, GameError> {
        if dims.is_empty() {
            return Err(GameError::Spec("a game needs at least one agent".into()));
        }
        if let Some(i) = dims.iter().position(|&d| d == 0) {
            return Err(GameError::Spec(format!("agent {i} has an empty decision vector")));
        }
        let mut offsets = Vec::with_capacity(dims.len());
        let mut total = 0;
        for &d in &dims {
            offsets.push(total);
            total += d;
        }
        Ok(Self { dims, offsets, total })
    }

    pub fn num_agents(&self) -> usize {
        self.dims.len()
    }

    /// Joint dimension `n`.
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn dim(&self, agent: usize) -> usize {
        self.dims[agent]
    }

    pub fn offset(&self, agent: usize) -> usize {
        self.offsets[agent]
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn range(&self, agent: usize) -> std::ops::Range<usize> {
        self.offsets[agent]..self.offsets[agent] + self.dims[agent]
    }
}

/// The per-agent partial gradient `x ↦ ∇_i J_i(x)`, defined on all of `R^n`.
pub trait PseudoGradient: Send + Sync {
    fn partial(&self, agent: usize, x: DVectorView<'_, f64>) -> DVector<f64>;
}

/// Affine pseudo-gradient: agent `i` evaluates rows `range(i)` of `A x + b`.
#[derive(Debug, Clone)]
pub struct AffineGradient {
    layout: BlockLayout,
    matrix: DMatrix<f64>,
    offset: DVector<f64>,
}

impl AffineGradient {
    pub fn new(layout: BlockLayout, matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self, GameError> {
        let n = layout.total();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(GameError::Dimension { expected: n, got: matrix.nrows().max(matrix.ncols()) });
        }
        if offset.len() != n {
            return Err(GameError::Dimension { expected: n, got: offset.len() });
        }
        Ok(Self { layout, matrix, offset })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    /// Spectral constants of each agent's gradient block.
    ///
    /// `μ_i` is the smallest eigenvalue of the symmetric part of the own block,
    /// `L_i` its largest singular value and `L_{-i}` the largest singular value
    /// of the cross block acting on `x_{-i}`. These are the tightest constants
    /// for an affine map.
    pub fn constants(&self) -> GameConstants {
        let n = self.layout.total();
        let m = self.layout.num_agents();
        let mut mu = Vec::with_capacity(m);
        let mut own = Vec::with_capacity(m);
        let mut cross = Vec::with_capacity(m);
        for i in 0..m {
            let r = self.layout.range(i);
            let ni = r.len();
            let block = self.matrix.view((r.start, r.start), (ni, ni)).into_owned();
            let sym = (&block + block.transpose()) * 0.5;
            let eig = SymmetricEigen::new(sym);
            mu.push(eig.eigenvalues.min());
            own.push(block.singular_values().max());
            let others: Vec<usize> = (0..n).filter(|c| !r.contains(c)).collect();
            let lip_cross = if others.is_empty() {
                0.0
            } else {
                let cross_block = DMatrix::from_fn(ni, others.len(), |a, b| self.matrix[(r.start + a, others[b])]);
                cross_block.singular_values().max()
            };
            cross.push(lip_cross);
        }
        GameConstants { mu, lip_own: own, lip_cross: cross }
    }
}

impl PseudoGradient for AffineGradient {
    fn partial(&self, agent: usize, x: DVectorView<'_, f64>) -> DVector<f64> {
        let r = self.layout.range(agent);
        let rows = self.matrix.rows(r.start, r.len());
        rows * x + self.offset.rows(r.start, r.len())
    }
}

/// Per-agent constants of the game's partial gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConstants {
    /// Strong monotonicity constants `μ_i`.
    pub mu: Vec<f64>,
    /// Own-block Lipschitz constants `L_i`.
    pub lip_own: Vec<f64>,
    /// Cross-block Lipschitz constants `L_{-i}`.
    pub lip_cross: Vec<f64>,
}

impl GameConstants {
    pub fn num_agents(&self) -> usize {
        self.mu.len()
    }

    /// `L_{-i} = 0`: agent `i`'s gradient ignores the other agents.
    pub fn is_decoupled(&self, agent: usize) -> bool {
        self.lip_cross[agent] == 0.0
    }

    /// `sqrt(L_{-i}^2 + L_i^2)`, the combined Lipschitz constant of agent `i`.
    pub fn combined_lipschitz(&self, agent: usize) -> f64 {
        self.lip_cross[agent].hypot(self.lip_own[agent])
    }

    /// Aggregate `L = sqrt(max_i (L_{-i}^2 + L_i^2))`.
    pub fn aggregate_lipschitz(&self) -> f64 {
        (0..self.num_agents()).map(|i| self.combined_lipschitz(i)).fold(0.0, f64::max)
    }

    pub fn min_mu(&self) -> f64 {
        self.mu.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<(), GameError> {
        let m = self.mu.len();
        if self.lip_own.len() != m || self.lip_cross.len() != m {
            return Err(GameError::Spec("constant vectors have different lengths".into()));
        }
        for i in 0..m {
            let (mu, l) = (self.mu[i], self.lip_own[i]);
            if !(mu > 0.0) || !l.is_finite() || mu > l * (1.0 + 1e-12) {
                return Err(GameError::Spec(format!("agent {i}: need 0 < mu <= L_i, got mu={mu}, L_i={l}")));
            }
            if !(self.lip_cross[i] >= 0.0) {
                return Err(GameError::Spec(format!("agent {i}: negative cross Lipschitz constant")));
            }
        }
        Ok(())
    }
}

/// A game `([m], {J_i}, {X_i})` with box action sets `X_i = [lower_i, upper_i]`.
#[derive(Clone)]
pub struct GameSpec {
    layout: BlockLayout,
    lower: DVector<f64>,
    upper: DVector<f64>,
    gradient: Arc<dyn PseudoGradient>,
}

impl fmt::Debug for GameSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GameSpec")
            .field("dims", &self.layout.dims())
            .field("lower", &self.lower.as_slice())
            .field("upper", &self.upper.as_slice())
            .finish_non_exhaustive()
    }
}

impl GameSpec {
    pub fn new(
        layout: BlockLayout,
        lower: DVector<f64>,
        upper: DVector<f64>,
        gradient: Arc<dyn PseudoGradient>,
    ) -> Result<Self, GameError> {
        let n = layout.total();
        for v in [&lower, &upper] {
            if v.len() != n {
                return Err(GameError::Dimension { expected: n, got: v.len() });
            }
        }
        if let Some(component) = (0..n).find(|&c| !(lower[c] <= upper[c])) {
            return Err(GameError::EmptyBox { component });
        }
        Ok(Self { layout, lower, upper, gradient })
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn num_agents(&self) -> usize {
        self.layout.num_agents()
    }

    pub fn dim(&self) -> usize {
        self.layout.total()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    /// `∇_i J_i(x)` at a joint point (possibly outside `X`).
    pub fn partial_gradient(&self, agent: usize, x: DVectorView<'_, f64>) -> Result<DVector<f64>, GameError> {
        self.check_agent(agent)?;
        if x.len() != self.dim() {
            return Err(GameError::Dimension { expected: self.dim(), got: x.len() });
        }
        Ok(self.gradient.partial(agent, x))
    }

    /// Stacked `(∇_1 J_1(x), …, ∇_m J_m(x))`.
    pub fn stacked_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, GameError> {
        let mut out = DVector::zeros(self.dim());
        for i in 0..self.num_agents() {
            let g = self.partial_gradient(i, x.as_view())?;
            out.rows_mut(self.layout.offset(i), g.len()).copy_from(&g);
        }
        Ok(out)
    }

    /// Euclidean projection onto `X_i`.
    pub fn project_agent(&self, agent: usize, v: &DVector<f64>) -> Result<DVector<f64>, GameError> {
        self.check_agent(agent)?;
        let r = self.layout.range(agent);
        project_box(v, &self.lower.rows(r.start, r.len()).into_owned(), &self.upper.rows(r.start, r.len()).into_owned())
    }

    /// Euclidean projection onto `X = X_1 × … × X_m`.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>, GameError> {
        project_box(x, &self.lower, &self.upper)
    }

    /// Largest violation of the box constraints (0 for feasible points).
    pub fn infeasibility(&self, x: &DVector<f64>) -> f64 {
        x.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .map(|(&v, (&lo, &hi))| (lo - v).max(v - hi).max(0.0))
            .fold(0.0, f64::max)
    }

    fn check_agent(&self, agent: usize) -> Result<(), GameError> {
        if agent >= self.num_agents() {
            return Err(GameError::AgentIndex { index: agent, agents: self.num_agents() });
        }
        Ok(())
    }
}

/// Componentwise clamp of `v` into `[lower, upper]`.
pub fn project_box(v: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> Result<DVector<f64>, GameError> {
    if lower.len() != v.len() || upper.len() != v.len() {
        return Err(GameError::Dimension { expected: v.len(), got: lower.len().min(upper.len()) });
    }
    if let Some(component) = (0..v.len()).find(|&c| !(lower[c] <= upper[c])) {
        return Err(GameError::EmptyBox { component });
    }
    Ok(DVector::from_fn(v.len(), |c, _| v[c].clamp(lower[c], upper[c])))
}

/// Nash-Cournot competition of `m` firms over `N` markets.
///
/// Firm `i` ships `x_i ∈ [0, C_i]` through the 0/1 incidence matrix `B_i`
/// (`N × n_i`), pays `x_i'Q_i x_i + q_i'x_i` and earns the linear market price
/// `P̄ - Ξ B x` on what it sells.
#[derive(Debug, Clone, PartialEq)]
pub struct CournotSpec {
    markets: usize,
    incidence: Vec<DMatrix<f64>>,
    cost_quad: Vec<DMatrix<f64>>,
    cost_lin: Vec<DVector<f64>>,
    price_intercept: DVector<f64>,
    price_slope: DVector<f64>,
    capacity: Vec<DVector<f64>>,
    seed: Option<u64>,
    layout: BlockLayout,
    joint_incidence: DMatrix<f64>,
}

impl CournotSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        markets: usize,
        incidence: Vec<DMatrix<f64>>,
        cost_quad: Vec<DMatrix<f64>>,
        cost_lin: Vec<DVector<f64>>,
        price_intercept: DVector<f64>,
        price_slope: DVector<f64>,
        capacity: Vec<DVector<f64>>,
        seed: Option<u64>,
    ) -> Result<Self, GameError> {
        let m = incidence.len();
        if markets == 0 {
            return Err(GameError::Spec("at least one market is required".into()));
        }
        if cost_quad.len() != m || cost_lin.len() != m || capacity.len() != m {
            return Err(GameError::Spec(format!(
                "per-firm data disagree on the number of firms: B={m}, Q={}, q={}, C={}",
                cost_quad.len(),
                cost_lin.len(),
                capacity.len()
            )));
        }
        for (name, v) in [("P_bar", &price_intercept), ("chi", &price_slope)] {
            if v.len() != markets {
                return Err(GameError::Spec(format!("{name} has length {}, expected N={markets}", v.len())));
            }
            if v.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
                return Err(GameError::Spec(format!("{name} entries must be positive and finite")));
            }
        }
        let dims: Vec<usize> = incidence.iter().map(|b| b.ncols()).collect();
        let layout = BlockLayout::new(dims)?;
        for i in 0..m {
            let ni = layout.dim(i);
            let b = &incidence[i];
            if b.nrows() != markets {
                return Err(GameError::Spec(format!("B_{i} has {} rows, expected N={markets}", b.nrows())));
            }
            if b.iter().any(|&e| e != 0.0 && e != 1.0) {
                return Err(GameError::Spec(format!("B_{i} entries must be 0 or 1")));
            }
            let q = &cost_quad[i];
            if q.nrows() != ni || q.ncols() != ni {
                return Err(GameError::Spec(format!("Q_{i} must be {ni}x{ni}")));
            }
            if (q - q.transpose()).amax() > 1e-12 * q.amax().max(1.0) {
                return Err(GameError::Spec(format!("Q_{i} is not symmetric")));
            }
            let min_eig = SymmetricEigen::new(q.clone()).eigenvalues.min();
            if !(min_eig > 0.0) {
                return Err(GameError::Spec(format!("Q_{i} is not positive definite (smallest eigenvalue {min_eig})")));
            }
            if cost_lin[i].len() != ni {
                return Err(GameError::Spec(format!("q_{i} has length {}, expected {ni}", cost_lin[i].len())));
            }
            if capacity[i].len() != ni || capacity[i].iter().any(|&c| !(c > 0.0)) {
                return Err(GameError::Spec(format!("C_{i} must have {ni} positive entries")));
            }
        }
        let n = layout.total();
        let mut joint_incidence = DMatrix::zeros(markets, n);
        for i in 0..m {
            joint_incidence.columns_mut(layout.offset(i), layout.dim(i)).copy_from(&incidence[i]);
        }
        Ok(Self {
            markets,
            incidence,
            cost_quad,
            cost_lin,
            price_intercept,
            price_slope,
            capacity,
            seed,
            layout,
            joint_incidence,
        })
    }

    /// Random instance drawn as in the Nash-Cournot experiments.
    ///
    /// `C_i ~ U[5,10]`, `diag(Q_i) ~ U[1,8]`, `q_i ~ U[1,2]`, `P̄_h ~ U[10,20]`,
    /// `χ_h ~ U[1,3]`. Each firm serves between one and `min(3, N)` distinct
    /// markets chosen uniformly, one decision variable per served market.
    pub fn random(firms: usize, markets: usize, seed: u64) -> Result<Self, GameError> {
        if firms < 2 {
            return Err(GameError::Spec("a Cournot game needs at least two firms".into()));
        }
        if markets == 0 {
            return Err(GameError::Spec("at least one market is required".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let price_intercept = DVector::from_fn(markets, |_, _| rng.gen_range(10.0..20.0));
        let price_slope = DVector::from_fn(markets, |_, _| rng.gen_range(1.0..3.0));
        let max_served = markets.min(3);
        let mut incidence = Vec::with_capacity(firms);
        let mut cost_quad = Vec::with_capacity(firms);
        let mut cost_lin = Vec::with_capacity(firms);
        let mut capacity = Vec::with_capacity(firms);
        for _ in 0..firms {
            let served = rng.gen_range(1..=max_served);
            let chosen = rand::seq::index::sample(&mut rng, markets, served).into_vec();
            let mut b = DMatrix::zeros(markets, served);
            for (col, &h) in chosen.iter().enumerate() {
                b[(h, col)] = 1.0;
            }
            incidence.push(b);
            cost_quad.push(DMatrix::from_diagonal(&DVector::from_fn(served, |_, _| rng.gen_range(1.0..8.0))));
            cost_lin.push(DVector::from_fn(served, |_, _| rng.gen_range(1.0..2.0)));
            capacity.push(DVector::from_fn(served, |_, _| rng.gen_range(5.0..10.0)));
        }
        Self::new(markets, incidence, cost_quad, cost_lin, price_intercept, price_slope, capacity, Some(seed))
    }

    pub fn num_firms(&self) -> usize {
        self.incidence.len()
    }

    pub fn num_markets(&self) -> usize {
        self.markets
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn incidence(&self, firm: usize) -> &DMatrix<f64> {
        &self.incidence[firm]
    }

    pub fn cost_quad(&self, firm: usize) -> &DMatrix<f64> {
        &self.cost_quad[firm]
    }

    pub fn cost_lin(&self, firm: usize) -> &DVector<f64> {
        &self.cost_lin[firm]
    }

    pub fn price_intercept(&self) -> &DVector<f64> {
        &self.price_intercept
    }

    pub fn price_slope(&self) -> &DVector<f64> {
        &self.price_slope
    }

    pub fn capacity(&self, firm: usize) -> &DVector<f64> {
        &self.capacity[firm]
    }

    /// `B = [B_1, …, B_m]`.
    pub fn joint_incidence(&self) -> &DMatrix<f64> {
        &self.joint_incidence
    }

    /// Copy of the game with `q_i` replaced.
    pub fn with_cost_lin(&self, firm: usize, q: DVector<f64>) -> Result<Self, GameError> {
        let mut cost_lin = self.cost_lin.clone();
        cost_lin[firm] = q;
        Self::new(
            self.markets,
            self.incidence.clone(),
            self.cost_quad.clone(),
            cost_lin,
            self.price_intercept.clone(),
            self.price_slope.clone(),
            self.capacity.clone(),
            self.seed,
        )
    }

    fn check_point(&self, firm: usize, x: &DVector<f64>) -> Result<(), GameError> {
        if firm >= self.num_firms() {
            return Err(GameError::AgentIndex { index: firm, agents: self.num_firms() });
        }
        if x.len() != self.layout.total() {
            return Err(GameError::Dimension { expected: self.layout.total(), got: x.len() });
        }
        Ok(())
    }

    fn price(&self, x: &DVector<f64>) -> DVector<f64> {
        let supply = &self.joint_incidence * x;
        &self.price_intercept - self.price_slope.component_mul(&supply)
    }

    /// `J_i(x) = x_i'Q_i x_i + q_i'x_i - (P̄ - Ξ B x)' B_i x_i`.
    pub fn cost(&self, firm: usize, x: &DVector<f64>) -> Result<f64, GameError> {
        self.check_point(firm, x)?;
        let r = self.layout.range(firm);
        let xi = x.rows(r.start, r.len());
        let production = (xi.transpose() * &self.cost_quad[firm] * xi)[(0, 0)] + self.cost_lin[firm].dot(&xi);
        let revenue = self.price(x).dot(&(&self.incidence[firm] * xi));
        Ok(production - revenue)
    }

    /// `∇_i J_i(x) = 2Q_i x_i + q_i + B_i'Ξ B_i x_i - B_i'(P̄ - Ξ B x)`.
    pub fn gradient(&self, firm: usize, x: &DVector<f64>) -> Result<DVector<f64>, GameError> {
        self.check_point(firm, x)?;
        let r = self.layout.range(firm);
        let xi = x.rows(r.start, r.len());
        let b = &self.incidence[firm];
        let own_price_effect = self.price_slope.component_mul(&(b * xi));
        Ok(&self.cost_quad[firm] * xi * 2.0 + &self.cost_lin[firm] + b.transpose() * own_price_effect
            - b.transpose() * self.price(x))
    }

    /// The pseudo-gradient written as `A x + b`.
    pub fn affine_gradient(&self) -> AffineGradient {
        let n = self.layout.total();
        let xi_b = DMatrix::from_diagonal(&self.price_slope) * &self.joint_incidence;
        let mut matrix = DMatrix::zeros(n, n);
        let mut offset = DVector::zeros(n);
        for i in 0..self.num_firms() {
            let r = self.layout.range(i);
            let bt = self.incidence[i].transpose();
            let mut rows = &bt * &xi_b;
            let own = &bt * DMatrix::from_diagonal(&self.price_slope) * &self.incidence[i] + &self.cost_quad[i] * 2.0;
            let mut own_block = rows.columns_mut(r.start, r.len());
            own_block += own;
            matrix.rows_mut(r.start, r.len()).copy_from(&rows);
            offset.rows_mut(r.start, r.len()).copy_from(&(&self.cost_lin[i] - &bt * &self.price_intercept));
        }
        AffineGradient::new(self.layout.clone(), matrix, offset).expect("dimensions are consistent by construction")
    }

    pub fn constants(&self) -> GameConstants {
        self.affine_gradient().constants()
    }

    pub fn to_game(&self) -> GameSpec {
        let n = self.layout.total();
        let mut upper = DVector::zeros(n);
        for i in 0..self.num_firms() {
            upper.rows_mut(self.layout.offset(i), self.layout.dim(i)).copy_from(&self.capacity[i]);
        }
        GameSpec::new(self.layout.clone(), DVector::zeros(n), upper, Arc::new(self.affine_gradient()))
            .expect("capacities are positive")
    }

    pub fn to_toml(&self) -> Result<String, GameError> {
        let mut q_diag = Vec::with_capacity(self.num_firms());
        for (i, q) in self.cost_quad.iter().enumerate() {
            let diag = q.diagonal();
            if (q - DMatrix::from_diagonal(&diag)).amax() != 0.0 {
                return Err(GameError::Spec(format!("Q_{i} is not diagonal and cannot be written as Q_diag")));
            }
            q_diag.push(diag.iter().copied().collect());
        }
        let file = CournotFile {
            m: self.num_firms(),
            markets: self.markets,
            seed: self.seed,
            price_intercept: self.price_intercept.iter().copied().collect(),
            price_slope: self.price_slope.iter().copied().collect(),
            incidence: self
                .incidence
                .iter()
                .map(|b| b.row_iter().map(|r| r.iter().map(|&e| e as u8).collect()).collect())
                .collect(),
            q_diag,
            cost_lin: self.cost_lin.iter().map(|v| v.iter().copied().collect()).collect(),
            capacity: self.capacity.iter().map(|v| v.iter().copied().collect()).collect(),
        };
        toml::to_string(&file).map_err(|e| GameError::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, GameError> {
        let file: CournotFile = toml::from_str(text).map_err(|e| GameError::Parse(e.to_string()))?;
        let m = file.m;
        for (key, len) in [
            ("B", file.incidence.len()),
            ("Q_diag", file.q_diag.len()),
            ("q", file.cost_lin.len()),
            ("C", file.capacity.len()),
        ] {
            if len != m {
                return Err(GameError::Parse(format!("`{key}` lists {len} firms but m = {m}")));
            }
        }
        let mut incidence = Vec::with_capacity(m);
        for (i, rows) in file.incidence.iter().enumerate() {
            if rows.len() != file.markets {
                return Err(GameError::Parse(format!("B[{i}] has {} rows but N = {}", rows.len(), file.markets)));
            }
            let ni = file.q_diag[i].len();
            if rows.iter().any(|r| r.len() != ni) {
                return Err(GameError::Parse(format!("B[{i}] rows must have {ni} columns to match Q_diag[{i}]")));
            }
            incidence.push(DMatrix::from_fn(file.markets, ni, |h, j| f64::from(rows[h][j])));
        }
        Self::new(
            file.markets,
            incidence,
            file.q_diag.iter().map(|d| DMatrix::from_diagonal(&DVector::from_vec(d.clone()))).collect(),
            file.cost_lin.into_iter().map(DVector::from_vec).collect(),
            DVector::from_vec(file.price_intercept),
            DVector::from_vec(file.price_slope),
            file.capacity.into_iter().map(DVector::from_vec).collect(),
            file.seed,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GameError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GameError> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CournotFile {
    m: usize,
    #[serde(rename = "N")]
    markets: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(rename = "P_bar")]
    price_intercept: Vec<f64>,
    #[serde(rename = "chi")]
    price_slope: Vec<f64>,
    #[serde(rename = "B")]
    incidence: Vec<Vec<Vec<u8>>>,
    #[serde(rename = "Q_diag")]
    q_diag: Vec<Vec<f64>>,
    #[serde(rename = "q")]
    cost_lin: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    capacity: Vec<Vec<f64>>,
}

/// Free-standing forms of the Cournot cost and gradient.
pub fn cournot_cost(spec: &CournotSpec, firm: usize, x: &DVector<f64>) -> Result<f64, GameError> {
    spec.cost(firm, x)
}

pub fn cournot_grad(spec: &CournotSpec, firm: usize, x: &DVector<f64>) -> Result<DVector<f64>, GameError> {
    spec.gradient(firm, x)
}

pub fn compute_constants(spec: &CournotSpec) -> GameConstants {
    spec.constants()
}

/// Default stepsize of the full-information iteration, `min_i μ_i / L^2`.
pub fn default_ne_stepsize(constants: &GameConstants) -> f64 {
    let l = constants.aggregate_lipschitz();
    constants.min_mu() / (l * l)
}

/// Projected-gradient iteration `x ← Π_X[x - α F(x)]` with full information.
#[derive(Debug, Clone, Copy)]
pub struct NeSolver {
    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl NeSolver {
    pub fn solve(&self, game: &GameSpec) -> Result<DVector<f64>, GameError> {
        let start = game.project(&DVector::zeros(game.dim()))?;
        self.solve_from(game, start)
    }

    /// Iterates until both the step `‖x^{k+1}-x^k‖_∞` and the unit-step
    /// fixed-point residual drop below `tol`.
    pub fn solve_from(&self, game: &GameSpec, start: DVector<f64>) -> Result<DVector<f64>, GameError> {
        if !(self.alpha > 0.0) || !(self.tol > 0.0) {
            return Err(GameError::Spec(format!(
                "stepsize and tolerance must be positive (alpha={}, tol={})",
                self.alpha, self.tol
            )));
        }
        if start.len() != game.dim() {
            return Err(GameError::Dimension { expected: game.dim(), got: start.len() });
        }
        let mut x = game.project(&start)?;
        let mut residual = f64::INFINITY;
        for _ in 0..self.max_iter {
            let grad = game.stacked_gradient(&x)?;
            residual = (&x - game.project(&(&x - &grad))?).amax();
            let next = game.project(&(&x - grad * self.alpha))?;
            let step = (&next - &x).amax();
            x = next;
            if step < self.tol && residual < self.tol {
                return Ok(x);
            }
        }
        Err(GameError::NonConvergence { iterations: self.max_iter, residual, last: x })
    }
}

pub fn solve_ne_full_info(game: &GameSpec, alpha: f64, tol: f64, max_iter: usize) -> Result<DVector<f64>, GameError> {
    NeSolver { alpha, tol, max_iter }.solve(game)
}

/// Outcome of [`verify_ne`].
#[derive(Debug, Clone)]
pub struct NeReport {
    pub is_ne: bool,
    /// `‖x - Π_X[x - F(x)]‖_∞` with unit stepsizes.
    pub residual: f64,
    pub agent_residuals: Vec<f64>,
    /// Per agent `min_{y_i vertex of X_i} ⟨∇_i J_i(x), y_i - x_i⟩`.
    pub vi_gaps: Vec<f64>,
    /// Every VI gap is at least `-tol`.
    pub vi_ok: bool,
}

/// Checks the projection fixed-point characterisation of an equilibrium.
///
/// The variational-inequality gaps are diagnostics only; the verdict uses the
/// fixed-point residual.
pub fn verify_ne(game: &GameSpec, x: &DVector<f64>, tol: f64) -> Result<NeReport, GameError> {
    if x.len() != game.dim() {
        return Err(GameError::Dimension { expected: game.dim(), got: x.len() });
    }
    let excess = game.infeasibility(x);
    if excess > tol {
        return Err(GameError::Infeasible { excess });
    }
    let layout = game.layout();
    let mut agent_residuals = Vec::with_capacity(game.num_agents());
    let mut vi_gaps = Vec::with_capacity(game.num_agents());
    for i in 0..game.num_agents() {
        let r = layout.range(i);
        let g = game.partial_gradient(i, x.as_view())?;
        let xi = x.rows(r.start, r.len()).into_owned();
        let projected = game.project_agent(i, &(&xi - &g))?;
        agent_residuals.push((&xi - projected).amax());
        // linear objective over a box: the minimising vertex is chosen per coordinate
        let gap: f64 = (0..r.len())
            .map(|c| {
                let lo = game.lower()[r.start + c] - xi[c];
                let hi = game.upper()[r.start + c] - xi[c];
                (g[c] * lo).min(g[c] * hi)
            })
            .sum();
        vi_gaps.push(gap);
    }
    let residual = agent_residuals.iter().copied().fold(0.0, f64::max);
    let vi_ok = vi_gaps.iter().all(|&g| g >= -tol);
    Ok(NeReport { is_ne: residual <= tol, residual, agent_residuals, vi_gaps, vi_ok })
}
