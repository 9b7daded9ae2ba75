//! Convergence certificate: the 2×2 matrix `Q̄_α` whose largest eigenvalue
//! bounds the per-round contraction of `‖Z^k − 1x*'‖²_{π_k}`, and the
//! polynomial stepsize conditions for a uniform stepsize.

use nalgebra::{DVector, Matrix2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::GameConstants;
use crate::mixing::{worst_case_eta, EtaReport, PiSequence};

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("eta {0} outside (0, 1)")]
    Eta(f64),
    #[error("the stepsize region needs mono-delta < L, got delta = {delta}, L = {l}")]
    Precondition { delta: f64, l: f64 },
}

/// `L_α`, `β_α`, and their stepsize-free counterparts `L` and mono-δ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub l_alpha: f64,
    pub beta_alpha: f64,
    /// `sqrt(max_i (L_{-i}² + L_i²))`.
    pub l: f64,
    /// `min_k min_i [π_{k+1}]_i μ_i`.
    pub mono_delta: f64,
}

/// Computes the aggregates over the supplied `π_{k+1}` vectors.
pub fn aggregate_constants<'a>(
    consts: &GameConstants,
    pis: impl IntoIterator<Item = &'a DVector<f64>>,
    alphas: &[f64],
) -> Result<Aggregates, CertifyError> {
    let m = consts.num_agents();
    if alphas.len() != m {
        return Err(CertifyError::Input(format!("{} stepsizes for {m} agents", alphas.len())));
    }
    for i in 0..m {
        if !(consts.mu[i] > 0.0 && consts.lip_own[i] > 0.0 && consts.lip_cross[i] >= 0.0 && alphas[i] > 0.0) {
            return Err(CertifyError::Input(format!("agent {i} has a non-positive constant or stepsize")));
        }
    }
    let l = consts.aggregate_lipschitz();
    let l_alpha = (0..m).map(|i| alphas[i] * alphas[i] * consts.combined_lipschitz(i).powi(2)).fold(0.0, f64::max).sqrt();
    let mut beta_alpha = f64::INFINITY;
    let mut mono_delta = f64::INFINITY;
    let mut seen = false;
    for pi in pis {
        if pi.len() != m {
            return Err(CertifyError::Input(format!("pi has {} entries for {m} agents", pi.len())));
        }
        if pi.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(CertifyError::Input("pi entries must lie in (0, 1]".into()));
        }
        seen = true;
        for i in 0..m {
            beta_alpha = beta_alpha.min(pi[i] * alphas[i] * consts.mu[i]);
            mono_delta = mono_delta.min(pi[i] * consts.mu[i]);
        }
    }
    if !seen {
        return Err(CertifyError::Input("no pi vectors supplied".into()));
    }
    Ok(Aggregates { l_alpha, beta_alpha, l, mono_delta })
}

pub fn build_qbar(beta_alpha: f64, l_alpha: f64, eta: f64) -> Result<Matrix2<f64>, CertifyError> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(CertifyError::Eta(eta));
    }
    if !(beta_alpha > 0.0 && l_alpha >= 0.0) {
        return Err(CertifyError::Input(format!("need beta > 0 and L_alpha >= 0, got {beta_alpha}, {l_alpha}")));
    }
    let off = 2.0 * (1.0 - eta).sqrt() * l_alpha;
    Ok(Matrix2::new(
        1.0 - 2.0 * beta_alpha + l_alpha * l_alpha,
        off,
        off,
        (1.0 + 2.0 * l_alpha + l_alpha * l_alpha) * (1.0 - eta),
    ))
}

/// Largest eigenvalue of a symmetric 2×2 matrix.
pub fn lambda_max_2x2(m: &Matrix2<f64>) -> f64 {
    // tr² − 4det cancels badly when both eigenvalues sit near 1
    let half_gap = 0.5 * (m[(0, 0)] - m[(1, 1)]);
    let off = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    0.5 * (m[(0, 0)] + m[(1, 1)]) + half_gap.hypot(off)
}

/// One polynomial condition evaluated at a stepsize.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub value: f64,
    pub holds: bool,
}

impl Condition {
    fn positive(value: f64) -> Self {
        Self { value, holds: value > 0.0 }
    }
}

/// The four Sylvester-type conditions and the solved intervals at one
/// uniform stepsize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub alpha: f64,
    /// `[Q̄]_11 > 0`; true for every real α when δ < L.
    pub alpha1: Condition,
    /// `det Q̄ > 0`.
    pub alpha2: Condition,
    /// `[I − Q̄]_11 > 0`.
    pub alpha3: Condition,
    /// `det(I − Q̄) > 0`.
    pub alpha4: Condition,
    /// `0 < α < 2δ/L²`.
    pub interval1: bool,
    /// `α` below the smaller or above the larger root of `L⁴α⁴ − 2L(L+2δ)α² + 1`.
    pub interval2: bool,
    /// `α > (−(L−δ) + sqrt(5L² + 2Lδ + δ²)) / L²`.
    pub interval3: bool,
    pub lambda_max: f64,
    /// `λ_max(Q̄_α) < 1`.
    pub eigen_certified: bool,
    /// `I − Q̄_α ≻ 0`, i.e. conditions 3 and 4; equivalent to `eigen_certified`.
    pub sylvester_certified: bool,
    /// All four conditions; strictly stronger than `eigen_certified`.
    pub all_four: bool,
    /// Name of the first failing condition among 3 and 4, if any.
    pub binding: Option<String>,
}

/// `L⁴(1−η)α³ + 2L²(L−δ)(1−η)α² − (4L(L+δ)(1−η) + L²η)α + 2ηδ`.
fn alpha4_bracket(alpha: f64, l: f64, delta: f64, eta: f64) -> f64 {
    let l2 = l * l;
    let a = 1.0 - eta;
    l2 * l2 * a * alpha.powi(3) + 2.0 * l2 * (l - delta) * a * alpha * alpha - (4.0 * l * (l + delta) * a + l2 * eta) * alpha + 2.0 * eta * delta
}

fn check_region_inputs(l: f64, delta: f64, eta: f64) -> Result<(), CertifyError> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(CertifyError::Eta(eta));
    }
    if !(delta > 0.0) || !(delta < l) {
        return Err(CertifyError::Precondition { delta, l });
    }
    Ok(())
}

pub fn check_stepsize_region(alpha: f64, l: f64, delta: f64, eta: f64) -> Result<RegionReport, CertifyError> {
    check_region_inputs(l, delta, eta)?;
    let l2 = l * l;
    let a2 = alpha * alpha;
    let alpha1 = Condition::positive(l2 * a2 - 2.0 * delta * alpha + 1.0);
    // sanity: the discriminant 4δ² − 4L² is negative
    debug_assert!(alpha1.holds);
    let alpha2 = Condition::positive(
        (1.0 - eta)
            * (l2 * l2 * a2 * a2 + 2.0 * l2 * (l - delta) * a2 * alpha - 2.0 * l * (l + 2.0 * delta) * a2 + 2.0 * (l - delta) * alpha + 1.0),
    );
    let alpha3 = Condition::positive(-l2 * a2 + 2.0 * delta * alpha);
    let alpha4 = Condition::positive(alpha * alpha4_bracket(alpha, l, delta, eta));
    let root = 2.0 * l * (l * delta + delta * delta).sqrt();
    let lo2 = (l * (l + 2.0 * delta) - root) / (l2 * l2);
    let hi2 = (l * (l + 2.0 * delta) + root) / (l2 * l2);
    let thr3 = (-(l - delta) + (5.0 * l2 + 2.0 * l * delta + delta * delta).sqrt()) / l2;
    let qbar = build_qbar(alpha * delta, alpha * l, eta)?;
    let lambda_max = lambda_max_2x2(&qbar);
    let binding = if !alpha3.holds {
        Some("alpha3".to_string())
    } else if !alpha4.holds {
        Some("alpha4".to_string())
    } else {
        None
    };
    Ok(RegionReport {
        alpha,
        alpha1,
        alpha2,
        alpha3,
        alpha4,
        interval1: alpha > 0.0 && alpha < 2.0 * delta / l2,
        interval2: alpha < lo2 || alpha > hi2,
        interval3: alpha > thr3,
        lambda_max,
        eigen_certified: lambda_max < 1.0,
        sylvester_certified: alpha3.holds && alpha4.holds,
        all_four: alpha1.holds && alpha2.holds && alpha3.holds && alpha4.holds,
        binding,
    })
}

/// The set of uniform stepsizes with `λ_max(Q̄_α) < 1`, which is `(0, r)`
/// for the unique root `r` of the convex bracket of condition 4 inside
/// `(0, 2δ/L²)`.
pub fn certified_interval(l: f64, delta: f64, eta: f64) -> Result<(f64, f64), CertifyError> {
    check_region_inputs(l, delta, eta)?;
    let (mut lo, mut hi) = (0.0, 2.0 * delta / (l * l));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if alpha4_bracket(mid, l, delta, eta) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok((0.0, lo))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Certified,
    Uncertified,
}

/// Where the `η` entering `Q̄_α` came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaSource {
    /// Minimum of `η_k` over the simulated horizon.
    Horizon,
    /// Closed-form worst case from the weight floor.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepsizeCertificate {
    pub l: f64,
    pub mono_delta: f64,
    pub eta: f64,
    pub eta_source: EtaSource,
    pub l_alpha: f64,
    pub beta_alpha: f64,
    pub qbar: [[f64; 2]; 2],
    pub lambda_max: f64,
    pub verdict: Verdict,
    /// Uniform stepsize, when all agents share one.
    pub alpha: Option<f64>,
    /// Stepsize conditions, for a uniform stepsize with mono-δ < L.
    pub region: Option<RegionReport>,
    /// `(0, r)`: every uniform stepsize inside is certified.
    pub certified_interval: Option<(f64, f64)>,
}

impl StepsizeCertificate {
    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::Certified
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("certificate serialises")
    }
}

/// Builds the certificate from game constants, the `π_k` used over the run's
/// rounds, and the `η_k` report; without a report the worst-case `η` for the
/// weight floor `w` is used.
pub fn certify(
    consts: &GameConstants,
    pis: &PiSequence,
    rounds: usize,
    eta: Option<&EtaReport>,
    w: f64,
    alphas: &[f64],
) -> Result<StepsizeCertificate, CertifyError> {
    let m = consts.num_agents();
    let vectors: Vec<&DVector<f64>> = if pis.is_constant() {
        pis.get(0).into_iter().collect()
    } else {
        (1..=rounds.max(1)).filter_map(|k| pis.get(k)).collect()
    };
    let agg = aggregate_constants(consts, vectors, alphas)?;
    let (eta_value, eta_source) = match eta {
        Some(rep) if rep.bold.is_finite() => (rep.bold, EtaSource::Horizon),
        _ => {
            if m < 2 {
                return Err(CertifyError::Input("eta needs at least two agents".into()));
            }
            (worst_case_eta(m, w), EtaSource::Fallback)
        }
    };
    let qbar = build_qbar(agg.beta_alpha, agg.l_alpha, eta_value)?;
    let lambda_max = lambda_max_2x2(&qbar);
    let uniform = alphas.iter().all(|&a| a == alphas[0]).then_some(alphas[0]);
    let (region, interval) = match uniform {
        Some(a) if agg.mono_delta < agg.l => (
            Some(check_stepsize_region(a, agg.l, agg.mono_delta, eta_value)?),
            Some(certified_interval(agg.l, agg.mono_delta, eta_value)?),
        ),
        _ => (None, None),
    };
    Ok(StepsizeCertificate {
        l: agg.l,
        mono_delta: agg.mono_delta,
        eta: eta_value,
        eta_source,
        l_alpha: agg.l_alpha,
        beta_alpha: agg.beta_alpha,
        qbar: [[qbar[(0, 0)], qbar[(0, 1)]], [qbar[(1, 0)], qbar[(1, 1)]]],
        lambda_max,
        verdict: if lambda_max < 1.0 { Verdict::Certified } else { Verdict::Uncertified },
        alpha: uniform,
        region,
        certified_interval: interval,
    })
}

/// `λ_max(Q̄_α)` over a list of uniform stepsizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub alpha: f64,
    pub lambda_max: f64,
    pub certified: bool,
}

pub fn stepsize_grid(l: f64, delta: f64, eta: f64, alphas: &[f64]) -> Result<Vec<GridRow>, CertifyError> {
    alphas
        .iter()
        .map(|&alpha| {
            let lambda_max = lambda_max_2x2(&build_qbar(alpha * delta, alpha * l, eta)?);
            Ok(GridRow { alpha, lambda_max, certified: lambda_max < 1.0 })
        })
        .collect()
}
