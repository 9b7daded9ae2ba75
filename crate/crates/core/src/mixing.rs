//! Row-stochastic weight matrices, the absolute probability sequence `π_k`
//! with `π_{k+1}' W_k = π_k'`, and the dispersion contraction factors `η_k`.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graph::{DirectedGraph, GraphError, GraphMetrics, GraphSequence};

#[derive(Debug, Error)]
pub enum MixingError {
    #[error("mixing delta {delta} too large for row {row} with in-degree {degree}")]
    DeltaTooLarge { row: usize, degree: usize, delta: f64 },
    #[error("weight matrix is not row-stochastic: row {row} sums to {sum}")]
    NotStochastic { row: usize, sum: f64 },
    #[error("weight matrix has negative entry at ({row}, {col})")]
    Negative { row: usize, col: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("absolute probability estimate did not settle within horizon {horizon}: row spread {spread:e}")]
    PiNonConvergence { horizon: usize, spread: f64 },
    #[error("eta value {0} outside (0, 1)")]
    EtaRange(f64),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Tolerance on row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Nonnegative row-stochastic `m × m` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    w: DMatrix<f64>,
}

impl WeightMatrix {
    pub fn new(w: DMatrix<f64>) -> Result<Self, MixingError> {
        if w.nrows() != w.ncols() {
            return Err(MixingError::Dimension { expected: w.nrows(), got: w.ncols() });
        }
        for row in 0..w.nrows() {
            for col in 0..w.ncols() {
                if !(w[(row, col)] >= 0.0) {
                    return Err(MixingError::Negative { row, col });
                }
            }
        }
        for (row, r) in w.row_iter().enumerate() {
            let sum = r.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(MixingError::NotStochastic { row, sum });
            }
        }
        Ok(Self { w })
    }

    pub fn size(&self) -> usize {
        self.w.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.w
    }

    /// Smallest strictly positive entry, `min(W^+)`.
    pub fn min_positive(&self) -> f64 {
        self.w.iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min)
    }
}

/// `W_ij = δ` for each in-neighbour `j` of `i`, `W_ii = 1 − δ d(i)`.
pub fn build_weights(g: &DirectedGraph, delta: f64) -> Result<WeightMatrix, MixingError> {
    let m = g.num_nodes();
    if !(delta > 0.0) {
        return Err(MixingError::Input(format!("mixing delta must be positive, got {delta}")));
    }
    let mut w = DMatrix::zeros(m, m);
    for i in 0..m {
        let degree = g.in_degree(i);
        let diag = 1.0 - delta * degree as f64;
        if diag <= 0.0 {
            return Err(MixingError::DeltaTooLarge { row: i, degree, delta });
        }
        w[(i, i)] = diag;
        for j in g.in_neighbors(i) {
            w[(i, j)] = delta;
        }
    }
    WeightMatrix::new(w)
}

/// Itemised outcome of [`validate_weights`].
#[derive(Debug, Clone, Default)]
pub struct WeightReport {
    pub row_sums: bool,
    pub nonnegative: bool,
    pub compatible: bool,
    pub positive_diagonal: bool,
    pub floor: bool,
    pub min_positive: f64,
    pub failures: Vec<String>,
}

impl WeightReport {
    pub fn passed(&self) -> bool {
        self.row_sums && self.nonnegative && self.compatible && self.positive_diagonal && self.floor
    }
}

/// Checks a raw matrix against a graph and a floor on positive entries.
pub fn validate_weights(w: &DMatrix<f64>, g: &DirectedGraph, w_floor: f64) -> Result<WeightReport, MixingError> {
    let m = g.num_nodes();
    if w.nrows() != m || w.ncols() != m {
        return Err(MixingError::Dimension { expected: m, got: w.nrows().max(w.ncols()) });
    }
    let mut rep = WeightReport { row_sums: true, nonnegative: true, compatible: true, positive_diagonal: true, floor: true, ..Default::default() };
    rep.min_positive = w.iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
    for i in 0..m {
        let sum = w.row(i).sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            rep.row_sums = false;
            rep.failures.push(format!("row {i} sums to {sum}"));
        }
        if w[(i, i)] <= 0.0 {
            rep.positive_diagonal = false;
            rep.failures.push(format!("diagonal entry {i} is {}", w[(i, i)]));
        }
        for j in 0..m {
            let v = w[(i, j)];
            if v < 0.0 {
                rep.nonnegative = false;
                rep.failures.push(format!("entry ({i}, {j}) is negative"));
            }
            let edge = i == j || g.has_edge(j, i);
            if (v > 0.0) != edge {
                rep.compatible = false;
                rep.failures.push(format!("entry ({i}, {j}) = {v} does not match the graph"));
            }
            if v > 0.0 && v < w_floor {
                rep.floor = false;
                rep.failures.push(format!("entry ({i}, {j}) = {v} below floor {w_floor}"));
            }
        }
    }
    Ok(rep)
}

/// Mixing-δ `0.5 / max_{i,k} d_k(i)` over the first `rounds` graphs.
pub fn default_mixing_delta(graphs: &GraphSequence, rounds: usize) -> f64 {
    let d = graphs.max_in_degree(rounds);
    if d == 0 {
        0.5
    } else {
        0.5 / d as f64
    }
}

/// Weight matrices `W_k = build_weights(G_k, δ)`.
#[derive(Debug, Clone)]
pub struct WeightSequence {
    graphs: GraphSequence,
    delta: f64,
    fixed: Option<WeightMatrix>,
}

impl WeightSequence {
    pub fn new(graphs: GraphSequence, delta: f64) -> Result<Self, MixingError> {
        let fixed = match &graphs {
            GraphSequence::Static(g) => Some(build_weights(g, delta)?),
            _ => None,
        };
        let seq = Self { graphs, delta, fixed };
        // catches an oversized delta early for periodic sequences
        if let GraphSequence::Periodic(gs) = &seq.graphs {
            for g in gs {
                build_weights(g, delta)?;
            }
        }
        Ok(seq)
    }

    pub fn graphs(&self) -> &GraphSequence {
        &self.graphs
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn num_nodes(&self) -> usize {
        self.graphs.num_nodes()
    }

    pub fn is_static(&self) -> bool {
        self.fixed.is_some()
    }

    pub fn at(&self, k: usize) -> Result<WeightMatrix, MixingError> {
        match &self.fixed {
            Some(w) => Ok(w.clone()),
            None => build_weights(&self.graphs.graph_at(k), self.delta),
        }
    }

    /// `W_k` for rounds past the run, used only to extend `π`. Any valid
    /// continuation gives an absolute probability sequence, so `δ` shrinks to
    /// `0.5 / max_i d_k(i)` on graphs whose in-degree it would overload.
    pub fn continuation_at(&self, k: usize) -> Result<WeightMatrix, MixingError> {
        match self.at(k) {
            Err(MixingError::DeltaTooLarge { .. }) => {
                let g = self.graphs.graph_at(k);
                build_weights(&g, self.delta.min(0.5 / g.max_in_degree().max(1) as f64))
            }
            other => other,
        }
    }

    /// Smallest positive entry over rounds `0..rounds`.
    pub fn floor(&self, rounds: usize) -> Result<f64, MixingError> {
        match &self.fixed {
            Some(w) => Ok(w.min_positive()),
            None => (0..rounds.max(1)).try_fold(f64::INFINITY, |acc, k| Ok(acc.min(self.at(k)?.min_positive()))),
        }
    }

    /// Dense text blocks, one per round.
    pub fn to_text(&self, rounds: usize) -> Result<String, MixingError> {
        let mut out = String::new();
        for k in 0..rounds {
            let w = self.at(k)?;
            writeln!(out, "# round {k}").unwrap();
            for row in w.matrix().row_iter() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
                writeln!(out, "{}", cells.join(" ")).unwrap();
            }
            out.push('\n');
        }
        Ok(out)
    }
}

/// Estimates of `π_0 … π_R` for a weight sequence.
#[derive(Debug, Clone)]
pub struct PiSequence {
    pis: Vec<DVector<f64>>,
    constant: bool,
    /// Backward horizon `T` used beyond the last requested round.
    pub horizon: usize,
    /// Bound on `‖π̃_k − π_k‖_1` from the row spread of the tail product.
    pub tail_bound: f64,
    /// `‖π_{k+1}' W_k − π_k'‖_∞` for each round with both ends stored.
    pub residuals: Vec<f64>,
}

impl PiSequence {
    pub fn constant(pi: DVector<f64>, residual: f64) -> Self {
        Self { pis: vec![pi], constant: true, horizon: 0, tail_bound: 0.0, residuals: vec![residual] }
    }

    pub fn is_constant(&self) -> bool {
        self.constant
    }

    /// `π_k`; constant sequences answer every round.
    pub fn get(&self, k: usize) -> Option<&DVector<f64>> {
        if self.constant {
            self.pis.first()
        } else {
            self.pis.get(k)
        }
    }

    /// Number of stored vectors (1 for a constant sequence).
    pub fn len(&self) -> usize {
        self.pis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pis.is_empty()
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.pis.iter().map(|p| p.min()).fold(f64::INFINITY, f64::min)
    }

    /// CSV with columns `round, pi_0 … pi_{m-1}, residual`.
    pub fn to_csv(&self) -> String {
        let m = self.pis.first().map_or(0, |p| p.len());
        let mut out = String::from("round");
        for i in 0..m {
            write!(out, ",pi_{i}").unwrap();
        }
        out.push_str(",residual\n");
        for (k, p) in self.pis.iter().enumerate() {
            write!(out, "{k}").unwrap();
            for v in p.iter() {
                write!(out, ",{v:.17e}").unwrap();
            }
            match self.residuals.get(k) {
                Some(r) => writeln!(out, ",{r:.6e}").unwrap(),
                None => out.push_str(",\n"),
            }
        }
        out
    }
}

fn max_row_spread(p: &DMatrix<f64>) -> f64 {
    let m = p.nrows();
    let mut spread: f64 = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            let d: f64 = (p.row(i) - p.row(j)).iter().map(|v| v.abs()).sum();
            spread = spread.max(d);
        }
    }
    spread
}

fn left_residual(w: &DMatrix<f64>, next: &DVector<f64>, cur: &DVector<f64>) -> f64 {
    (w.tr_mul(next) - cur).amax()
}

/// Stationary left eigenvector of one matrix: repeated squaring until the
/// rows agree, then power iteration on `W'`.
pub fn estimate_pi_static(w: &WeightMatrix, tol: f64) -> Result<PiSequence, MixingError> {
    let m = w.size();
    let mut p = w.matrix().clone();
    let mut squarings = 0;
    while max_row_spread(&p) > tol.min(1e-12) {
        if squarings == 64 {
            return Err(MixingError::PiNonConvergence { horizon: usize::MAX, spread: max_row_spread(&p) });
        }
        p = &p * &p;
        squarings += 1;
    }
    let mut pi: DVector<f64> = p.row_mean().transpose();
    for _ in 0..50 {
        let next = w.matrix().tr_mul(&pi);
        let done = (&next - &pi).amax() < 1e-16;
        pi = next;
        if done {
            break;
        }
    }
    pi /= pi.sum();
    let residual = left_residual(w.matrix(), &pi, &pi);
    if m > 0 && pi.min() <= 0.0 {
        return Err(MixingError::Input("stationary vector has a non-positive entry; the graph is not strongly connected".into()));
    }
    Ok(PiSequence::constant(pi, residual))
}

/// `π_0 … π_rounds` for a time-varying sequence given by `weight_at`.
///
/// `π_k' = φ' W_{H-1} ⋯ W_k` with `φ` uniform, where the horizon `H` grows
/// past `rounds` until the rows of `W_{H-1} ⋯ W_rounds` agree to `tol` in
/// the 1-norm. The spread bounds the error of every returned vector, since
/// it cannot increase for earlier rounds.
pub fn estimate_pi_with<F>(rounds: usize, tol: f64, horizon_cap: usize, mut weight_at: F) -> Result<PiSequence, MixingError>
where
    F: FnMut(usize) -> Result<WeightMatrix, MixingError>,
{
    if !(tol > 0.0) {
        return Err(MixingError::Input(format!("tolerance must be positive, got {tol}")));
    }
    let first = weight_at(rounds)?;
    let m = first.size();
    let mut tail = first.into_matrix();
    let mut horizon = 1;
    let mut spread = max_row_spread(&tail);
    while spread >= tol {
        if horizon >= horizon_cap {
            return Err(MixingError::PiNonConvergence { horizon, spread });
        }
        let w = weight_at(rounds + horizon)?;
        tail = w.matrix() * tail;
        horizon += 1;
        spread = max_row_spread(&tail);
    }
    // π_rounds is the uniform mix of the tail rows
    let mut p: DVector<f64> = tail.row_mean().transpose();
    let mut pis = vec![DVector::zeros(m); rounds + 1];
    let mut residuals = vec![0.0; rounds];
    pis[rounds] = p.clone();
    for k in (0..rounds).rev() {
        let w = weight_at(k)?;
        let prev = w.matrix().tr_mul(&p);
        residuals[k] = left_residual(w.matrix(), &p, &prev);
        p = prev;
        pis[k] = p.clone();
    }
    Ok(PiSequence { pis, constant: false, horizon, tail_bound: spread, residuals })
}

/// Absolute probability sequence for `seq` over rounds `0..=rounds`.
pub fn estimate_pi(seq: &WeightSequence, rounds: usize, tol: f64, horizon_cap: usize) -> Result<PiSequence, MixingError> {
    if seq.is_static() {
        return estimate_pi_static(&seq.at(0)?, tol);
    }
    estimate_pi_with(rounds, tol, horizon_cap, |k| if k < rounds { seq.at(k) } else { seq.continuation_at(k) })
}

/// `η_k = min(π_{k+1}) w² / (max²(π_k) D K)`.
pub fn eta_round(pi_k: &DVector<f64>, pi_next: &DVector<f64>, w: f64, diameter: usize, edge_utility: usize) -> Result<f64, MixingError> {
    if pi_k.len() != pi_next.len() {
        return Err(MixingError::Dimension { expected: pi_k.len(), got: pi_next.len() });
    }
    if diameter == 0 || edge_utility == 0 {
        return Err(MixingError::Input("diameter and edge utility must be at least 1".into()));
    }
    let max = pi_k.max();
    let eta = pi_next.min() * w * w / (max * max * diameter as f64 * edge_utility as f64);
    if !(eta > 0.0 && eta < 1.0) {
        return Err(MixingError::EtaRange(eta));
    }
    Ok(eta)
}

/// Closed-form floor `w^{m+2} / (m (m−1)²)`.
pub fn pessimistic_eta(m: usize, w: f64) -> f64 {
    let m_f = m as f64;
    w.powi(m as i32 + 2) / (m_f * (m_f - 1.0).powi(2))
}

/// Floor `w^{m+2} / (m² (m−1)²)` that only uses `D ≤ m−1`, `K ≤ m(m−1)`
/// and `[π]_i ≥ w^m/m`.
pub fn worst_case_eta(m: usize, w: f64) -> f64 {
    let m_f = m as f64;
    w.powi(m as i32 + 2) / (m_f * m_f * (m_f - 1.0).powi(2))
}

#[derive(Debug, Clone)]
pub struct EtaReport {
    /// `η_k` for rounds `0..len`.
    pub per_round: Vec<f64>,
    /// `min_k η_k` over the reported rounds.
    pub bold: f64,
    pub pessimistic: f64,
    pub worst_case: f64,
    /// Uniform floor `w` on positive weights.
    pub w: f64,
}

/// `η_k` for `k < rounds` using the uniform floor of the sequence.
pub fn eta_report(seq: &WeightSequence, pis: &PiSequence, rounds: usize) -> Result<EtaReport, MixingError> {
    let m = seq.num_nodes();
    if m < 2 {
        return Err(MixingError::Input("eta needs at least two agents".into()));
    }
    let w = seq.floor(rounds)?;
    let mut cache: HashMap<DirectedGraph, GraphMetrics> = HashMap::new();
    let mut per_round = Vec::with_capacity(rounds);
    let count = if pis.is_constant() { rounds.max(1) } else { rounds.min(pis.len().saturating_sub(1)) };
    for k in 0..count {
        let g = seq.graphs().graph_at(k);
        let metrics = match cache.get(&g) {
            Some(v) => *v,
            None => {
                let v = g.metrics()?;
                cache.insert(g, v);
                v
            }
        };
        let pk = pis.get(k).expect("pi in range");
        let pn = pis.get(k + 1).expect("pi in range");
        per_round.push(eta_round(pk, pn, w, metrics.diameter, metrics.max_edge_utility)?);
        if pis.is_constant() && seq.is_static() {
            break;
        }
    }
    let bold = per_round.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(EtaReport { per_round, bold, pessimistic: pessimistic_eta(m, w), worst_case: worst_case_eta(m, w), w })
}
