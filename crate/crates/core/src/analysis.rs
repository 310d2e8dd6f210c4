//! Closed-form performance expressions for slotted ALOHA and IRSA.
//!
//! All quantities are in slots. The IRSA age is the sum of three parts:
//! half a frame of transmission time, the mean time between successful
//! deliveries `n / S`, and the mean wait between the generation of a
//! delivered update and the start of the frame that carries it.
//!
//! Powers of `(1 - pa)` go through `log1p`/`expm1` so that operating
//! points like `pa = 1e-5`, `m = 10^4` keep full precision.

use thiserror::Error;

use crate::model::{edge_perspective, mean_degree, DegreeDistribution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    /// No successful deliveries: every age grows without bound.
    #[error("average age diverges: {0}")]
    Divergent(String),
    #[error("inconsistent throughput: nu = S*m/n = {0} exceeds 1")]
    InconsistentThroughput(f64),
    #[error("argument out of domain: {0}")]
    Domain(String),
}

fn check_pa(pa: f64) -> Result<(), AnalysisError> {
    if pa > 0.0 && pa <= 1.0 {
        Ok(())
    } else {
        Err(AnalysisError::Domain(format!("pa = {pa} is outside (0, 1]")))
    }
}

/// `(1 - pa)^exponent`.
pub fn idle_probability(pa: f64, exponent: f64) -> f64 {
    if exponent == 0.0 {
        return 1.0;
    }
    (exponent * (-pa).ln_1p()).exp()
}

/// `1 - (1 - pa)^m`: probability of at least one activation in `m` slots.
pub fn activity_probability(m: u32, pa: f64) -> f64 {
    -(f64::from(m) * (-pa).ln_1p()).exp_m1()
}

/// Slotted ALOHA throughput `n·pa·(1 - pa)^(n-1)` in packets per slot.
pub fn sa_throughput(n: u32, pa: f64) -> f64 {
    f64::from(n) * pa * idle_probability(pa, f64::from(n) - 1.0)
}

/// IRSA channel load `G = n(1 - (1 - pa)^m)/m` in transmitting users per slot.
pub fn irsa_load(n: u32, m: u32, pa: f64) -> f64 {
    f64::from(n) * activity_probability(m, pa) / f64::from(m)
}

/// Per-frame delivery probability of a single node, `ν = S·m/n`.
pub fn nu_from_throughput(n: u32, m: u32, s: f64) -> Result<f64, AnalysisError> {
    if n == 0 || m == 0 {
        return Err(AnalysisError::Domain("n and m must be positive".into()));
    }
    if !(s >= 0.0) {
        return Err(AnalysisError::Domain(format!("throughput {s} is negative")));
    }
    let nu = s * f64::from(m) / f64::from(n);
    if nu > 1.0 + 1e-12 {
        return Err(AnalysisError::InconsistentThroughput(nu));
    }
    Ok(nu.min(1.0))
}

/// Moments of the geometric number of frames between two deliveries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZMoments {
    pub mean: f64,
    pub second_moment: f64,
    pub nu: f64,
}

impl ZMoments {
    pub fn variance(&self) -> f64 {
        self.second_moment - self.mean * self.mean
    }
}

pub fn z_moments(nu: f64) -> Result<ZMoments, AnalysisError> {
    if !(nu > 0.0) {
        return Err(AnalysisError::Divergent(format!("nu = {nu}")));
    }
    if nu > 1.0 {
        return Err(AnalysisError::InconsistentThroughput(nu));
    }
    Ok(ZMoments {
        mean: 1.0 / nu,
        second_moment: (2.0 - nu) / (nu * nu),
        nu,
    })
}

/// Probability that a delivered update was generated `k` slots before the
/// end of its generation frame (`k = 1` is the last slot).
pub fn x_pmf(m: u32, pa: f64, k: u32) -> Result<f64, AnalysisError> {
    check_pa(pa)?;
    if k == 0 || k > m {
        return Err(AnalysisError::Domain(format!("k = {k} outside [1, {m}]")));
    }
    Ok(pa * idle_probability(pa, f64::from(k) - 1.0) / activity_probability(m, pa))
}

/// Mean wait `E[X] = 1/pa - m(1-pa)^m / (1 - (1-pa)^m)` in slots.
///
/// Debug builds assert `pa ∈ (0, 1]`, `m ≥ 1`.
pub fn mean_wait(m: u32, pa: f64) -> f64 {
    debug_assert!(m >= 1 && pa > 0.0 && pa <= 1.0);
    if m == 1 || pa >= 1.0 {
        return 1.0;
    }
    // m(1-pa)^m / (1-(1-pa)^m) = m / (e^t - 1) with t = -m·ln(1-pa)
    let t = -f64::from(m) * (-pa).ln_1p();
    1.0 / pa - f64::from(m) / t.exp_m1()
}

/// The three addends of the IRSA average network age.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoiBreakdown {
    /// `m/2`
    pub frame_term: f64,
    /// `n/S`
    pub inter_update_term: f64,
    /// `E[X]`
    pub wait_term: f64,
    pub total: f64,
}

impl AoiBreakdown {
    fn new(frame_term: f64, inter_update_term: f64, wait_term: f64) -> Self {
        Self {
            frame_term,
            inter_update_term,
            wait_term,
            total: frame_term + inter_update_term + wait_term,
        }
    }
}

/// Exact average network age of IRSA given the aggregate throughput `s`.
pub fn aoi_irsa(n: u32, m: u32, pa: f64, s: f64) -> Result<AoiBreakdown, AnalysisError> {
    check_pa(pa)?;
    let nu = nu_from_throughput(n, m, s)?;
    if nu <= 0.0 {
        return Err(AnalysisError::Divergent("zero throughput".into()));
    }
    Ok(AoiBreakdown::new(
        f64::from(m) / 2.0,
        f64::from(n) / s,
        mean_wait(m, pa),
    ))
}

/// Slotted ALOHA average network age `1/2 + n/S`.
///
/// This is one slot less than [`aoi_irsa`] at `m = 1`: slotted ALOHA sends
/// in the generation slot, framed access waits for the next frame.
pub fn aoi_sa(n: u32, s: f64) -> Result<f64, AnalysisError> {
    Ok(aoi_sa_breakdown(n, s)?.total)
}

/// [`aoi_sa`] in breakdown form (`frame_term = 1/2`, no wait term).
pub fn aoi_sa_breakdown(n: u32, s: f64) -> Result<AoiBreakdown, AnalysisError> {
    if n == 0 {
        return Err(AnalysisError::Domain("n must be positive".into()));
    }
    if !(s > 0.0) {
        return Err(AnalysisError::Divergent(format!("throughput {s}")));
    }
    if s > 1.0 {
        return Err(AnalysisError::InconsistentThroughput(s));
    }
    Ok(AoiBreakdown::new(0.5, f64::from(n) / s, 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaOptimum {
    pub pa_star: f64,
    pub aoi_star: f64,
}

/// Minimum slotted ALOHA age, reached at `pa = 1/n`:
/// `1/2 + n(1 - 1/n)^(1-n)`, which tends to `1/2 + n·e`.
pub fn sa_optimal_aoi(n: u32) -> SaOptimum {
    assert!(n >= 1, "population must be positive");
    let nf = f64::from(n);
    let aoi_star = if n == 1 {
        1.5
    } else {
        0.5 + nf * ((1.0 - nf) * (-1.0 / nf).ln_1p()).exp()
    };
    SaOptimum {
        pa_star: 1.0 / nf,
        aoi_star,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdResult {
    pub g_star: f64,
    /// Bisection steps performed.
    pub iterations_used: u32,
    /// Whether the recursion converged at `g_star` within the iteration cap.
    pub converged: bool,
}

/// Asymptotic (infinite frame) decoding threshold of the peeling decoder.
#[derive(Debug, Clone, Copy)]
pub struct DensityEvolution {
    pub max_iterations: u32,
    pub target: f64,
    /// Upper end of the initial bisection bracket; doubled while the
    /// recursion still converges there.
    pub initial_upper: f64,
}

impl Default for DensityEvolution {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            target: 1e-9,
            initial_upper: 1.0,
        }
    }
}

impl DensityEvolution {
    /// Runs `q ← λ(1 - exp(-G·Λ'(1)·q))` from `q = 1` and reports whether
    /// the erasure probability drops below `target`.
    pub fn converges(&self, lambda: &DegreeDistribution, load: f64) -> bool {
        let edges = edge_perspective(lambda);
        let mean = mean_degree(lambda);
        let mut q = 1.0f64;
        for _ in 0..self.max_iterations {
            let p = -(-load * mean * q).exp_m1();
            q = edges.iter().map(|&(e, c)| c * p.powi(e as i32)).sum();
            if q < self.target {
                return true;
            }
        }
        false
    }

    pub fn threshold(&self, lambda: &DegreeDistribution, tol: f64) -> ThresholdResult {
        assert!(tol > 0.0, "bisection width must be positive");
        let mut lo = 0.0;
        let mut hi = self.initial_upper;
        let mut steps = 0;
        while self.converges(lambda, hi) && hi < 64.0 {
            lo = hi;
            hi *= 2.0;
            steps += 1;
        }
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if self.converges(lambda, mid) {
                lo = mid;
            } else {
                hi = mid;
            }
            steps += 1;
        }
        ThresholdResult {
            g_star: lo,
            iterations_used: steps,
            converged: self.converges(lambda, lo),
        }
    }
}

/// [`DensityEvolution::threshold`] with default settings.
pub fn density_evolution_threshold(lambda: &DegreeDistribution, tol: f64) -> ThresholdResult {
    DensityEvolution::default().threshold(lambda, tol)
}
