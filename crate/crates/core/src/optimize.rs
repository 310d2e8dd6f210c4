//! Experiment drivers built on the closed forms and the loss-rate simulator:
//! age versus activity sweeps, frame-size optimisation and age ratios.
//!
//! Loss-rate estimates are cached per `(n, m, pa, Λ, seed, frames)` inside an
//! [`Experiment`], so drivers that revisit a point share the Monte Carlo
//! work. The seed of every point is derived from the root seed and the point
//! parameters, never from its position in a grid, which makes serial and
//! parallel evaluation agree bit for bit.

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;
use thiserror::Error;

use crate::analysis::{
    aoi_irsa, aoi_sa, idle_probability, sa_optimal_aoi, sa_throughput, AnalysisError,
};
use crate::model::{validate_config, DegreeDistribution, Protocol, SystemConfig};
use crate::rng::derive_seed;
use crate::sim::{estimate_plr, simulate_aoi_irsa, simulate_aoi_sa, PlrEstimate, SimError};

/// Relative standard error above which a loss estimate is re-run.
pub const NOISY_PLR_RATIO: f64 = 0.1;

pub const REFINE_RADIUS: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("frame-size grid is empty")]
    EmptyGrid,
    #[error("frame size {m} is smaller than the maximum degree {degree}")]
    FrameTooShort { m: u32, degree: u32 },
    #[error("every frame size in the grid gives a divergent age")]
    AllDivergent,
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimBudget {
    /// Frames per loss-rate estimate (slots for slotted ALOHA).
    pub plr_frames: u64,
    /// Horizon of the optional direct age simulation.
    pub aoi_frames: Option<u64>,
    pub aoi_transient: u64,
}

impl Default for SimBudget {
    fn default() -> Self {
        Self {
            plr_frames: 2_000,
            aoi_frames: None,
            aoi_transient: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct PlrKey {
    n: u32,
    m: u32,
    pa_bits: u64,
    lambda: Vec<(u32, u64)>,
    seed: u64,
    frames: u64,
}

/// Shared state of a family of driver calls: root seed, budget and cache.
#[derive(Debug)]
pub struct Experiment {
    pub seed: u64,
    pub budget: SimBudget,
    cache: Mutex<HashMap<PlrKey, PlrEstimate>>,
}

/// A loss estimate plus a flag when it stayed noisy after the re-run.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckedPlr {
    pub estimate: PlrEstimate,
    pub noisy: bool,
}

fn lambda_words(lambda: &DegreeDistribution) -> Vec<(u32, u64)> {
    lambda.coeffs().iter().map(|&(d, p)| (d, p.to_bits())).collect()
}

fn is_noisy(est: &PlrEstimate) -> bool {
    est.plr > 0.0 && est.stderr > NOISY_PLR_RATIO * est.plr
}

impl Experiment {
    pub fn new(seed: u64, budget: SimBudget) -> Self {
        Self {
            seed,
            budget,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn point_seed(&self, n: u32, m: u32, pa: f64, lambda: &DegreeDistribution) -> u64 {
        let mut words = vec![u64::from(n), u64::from(m), pa.to_bits()];
        for (d, p) in lambda_words(lambda) {
            words.push(u64::from(d));
            words.push(p);
        }
        derive_seed(self.seed, &words)
    }

    pub fn cached_plr(&self, cfg: &SystemConfig, frames: u64) -> Result<PlrEstimate, SimError> {
        let seed = self.point_seed(cfg.n, cfg.m, cfg.pa, &cfg.lambda);
        let key = PlrKey {
            n: cfg.n,
            m: cfg.m,
            pa_bits: cfg.pa.to_bits(),
            lambda: lambda_words(&cfg.lambda),
            seed,
            frames,
        };
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let est = estimate_plr(cfg, frames, seed)?;
        self.cache.lock().expect("cache lock").insert(key, est.clone());
        Ok(est)
    }

    /// Loss estimate with the budgeted frame count, re-run once with twice
    /// the frames when its relative error exceeds [`NOISY_PLR_RATIO`].
    pub fn plr(&self, cfg: &SystemConfig) -> Result<CheckedPlr, SimError> {
        let first = self.cached_plr(cfg, self.budget.plr_frames)?;
        if !is_noisy(&first) {
            return Ok(CheckedPlr { estimate: first, noisy: false });
        }
        let second = self.cached_plr(cfg, 2 * self.budget.plr_frames)?;
        let noisy = is_noisy(&second);
        Ok(CheckedPlr { estimate: second, noisy })
    }

    pub fn cache_len(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }
}

fn join_flags(flags: Vec<String>) -> Option<String> {
    if flags.is_empty() {
        None
    } else {
        Some(flags.join("|"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub protocol: Protocol,
    /// Mean number of activations per slot, `n·pa`.
    pub n_pa: f64,
    pub pa: f64,
    pub m: u32,
    pub load: f64,
    pub plr: f64,
    pub plr_stderr: f64,
    pub throughput: f64,
    pub aoi_formula: Option<f64>,
    pub aoi_sim: Option<f64>,
    pub aoi_sim_stderr: Option<f64>,
    pub seed: u64,
    pub flag: Option<String>,
}

/// One record per activation probability. For slotted ALOHA the loss rate
/// and throughput are exact; for IRSA the loss rate is simulated and the
/// age comes from the closed form evaluated at `S = (1 - plr)·G`.
pub fn sweep_aoi_vs_activity(
    exp: &Experiment,
    protocol: Protocol,
    n: u32,
    m: u32,
    lambda: &DegreeDistribution,
    pa_grid: &[f64],
) -> Vec<SweepPoint> {
    pa_grid
        .par_iter()
        .map(|&pa| sweep_point(exp, protocol, n, m, lambda, pa))
        .collect()
}

fn sweep_point(
    exp: &Experiment,
    protocol: Protocol,
    n: u32,
    m: u32,
    lambda: &DegreeDistribution,
    pa: f64,
) -> SweepPoint {
    let cfg = match protocol {
        Protocol::SlottedAloha => SystemConfig::sa(n, pa),
        Protocol::Irsa => SystemConfig::irsa(n, m, pa, lambda.clone()),
    };
    let seed = exp.point_seed(cfg.n, cfg.m, pa, &cfg.lambda);
    let mut point = SweepPoint {
        protocol,
        n_pa: f64::from(n) * pa,
        pa,
        m: cfg.m,
        load: 0.0,
        plr: 0.0,
        plr_stderr: 0.0,
        throughput: 0.0,
        aoi_formula: None,
        aoi_sim: None,
        aoi_sim_stderr: None,
        seed,
        flag: None,
    };
    let mut flags = Vec::new();
    let report = validate_config(&cfg);
    if !report.ok {
        point.flag = Some(format!("invalid: {}", report.violations.join("; ")));
        return point;
    }

    let formula: Result<f64, AnalysisError> = match protocol {
        Protocol::SlottedAloha => {
            point.load = f64::from(n) * pa;
            point.plr = 1.0 - idle_probability(pa, f64::from(n) - 1.0);
            point.throughput = sa_throughput(n, pa);
            aoi_sa(n, point.throughput)
        }
        Protocol::Irsa => match exp.plr(&cfg) {
            Ok(checked) => {
                if checked.noisy {
                    flags.push("noisy_plr".to_string());
                }
                point.load = checked.estimate.load;
                point.plr = checked.estimate.plr;
                point.plr_stderr = checked.estimate.stderr;
                point.throughput = checked.estimate.throughput();
                aoi_irsa(n, cfg.m, pa, point.throughput).map(|b| b.total)
            }
            Err(e) => {
                point.flag = Some(format!("error: {e}"));
                return point;
            }
        },
    };
    match formula {
        Ok(aoi) => point.aoi_formula = Some(aoi),
        Err(AnalysisError::Divergent(_)) => flags.push("divergent".to_string()),
        Err(e) => flags.push(format!("error: {e}")),
    }

    if let Some(horizon) = exp.budget.aoi_frames {
        let transient = exp.budget.aoi_transient.min(horizon.saturating_sub(1));
        let stats = match protocol {
            Protocol::SlottedAloha => simulate_aoi_sa(&cfg, horizon, seed, transient),
            Protocol::Irsa => simulate_aoi_irsa(&cfg, horizon, seed, transient),
        };
        match stats {
            Ok(stats) => {
                if stats.diverged {
                    flags.push("aoi_sim_lower_bound".to_string());
                } else if stats.nodes_without_delivery > 0 {
                    flags.push(format!("silent_nodes={}", stats.nodes_without_delivery));
                }
                point.aoi_sim = Some(stats.network_aoi);
                point.aoi_sim_stderr = Some(stats.per_node_stderr);
            }
            Err(e) => flags.push(format!("error: {e}")),
        }
    }
    point.flag = join_flags(flags);
    point
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOptResult {
    pub n_pa: f64,
    pub pa: f64,
    pub m_star: u32,
    pub aoi_star: f64,
    /// Non-divergent `(m, age)` evaluations in increasing `m`.
    pub grid_evaluated: Vec<(u32, f64)>,
    pub flag: Option<String>,
}

/// Age of IRSA at frame size `m`, evaluated with the (cached) simulated loss.
pub fn frame_aoi(
    exp: &Experiment,
    n: u32,
    m: u32,
    pa: f64,
    lambda: &DegreeDistribution,
) -> Result<(Result<f64, AnalysisError>, CheckedPlr), SimError> {
    let cfg = SystemConfig::irsa(n, m, pa, lambda.clone());
    let checked = exp.plr(&cfg)?;
    let aoi = aoi_irsa(n, m, pa, checked.estimate.throughput()).map(|b| b.total);
    Ok((aoi, checked))
}

/// Frame size minimising the age over `m_grid`; ties go to the smaller `m`.
pub fn optimal_frame_size(
    exp: &Experiment,
    n: u32,
    pa: f64,
    lambda: &DegreeDistribution,
    m_grid: &[u32],
) -> Result<FrameOptResult, OptimizeError> {
    let mut grid = m_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let Some(&smallest) = grid.first() else {
        return Err(OptimizeError::EmptyGrid);
    };
    if smallest < lambda.max_degree() {
        return Err(OptimizeError::FrameTooShort {
            m: smallest,
            degree: lambda.max_degree(),
        });
    }
    let evaluated: Vec<(u32, Result<f64, AnalysisError>, bool)> = grid
        .par_iter()
        .map(|&m| frame_aoi(exp, n, m, pa, lambda).map(|(aoi, c)| (m, aoi, c.noisy)))
        .collect::<Result<_, _>>()?;

    let mut best: Option<(u32, f64)> = None;
    let mut noisy = 0;
    let mut grid_evaluated = Vec::with_capacity(evaluated.len());
    for (m, aoi, was_noisy) in evaluated {
        noisy += usize::from(was_noisy);
        if let Ok(aoi) = aoi {
            grid_evaluated.push((m, aoi));
            if best.is_none_or(|(_, b)| aoi < b) {
                best = Some((m, aoi));
            }
        }
    }
    let (m_star, aoi_star) = best.ok_or(OptimizeError::AllDivergent)?;
    let mut flags = Vec::new();
    if grid_evaluated.len() < grid.len() {
        flags.push(format!("divergent_m={}", grid.len() - grid_evaluated.len()));
    }
    if noisy > 0 {
        flags.push(format!("noisy_plr={noisy}"));
    }
    Ok(FrameOptResult {
        n_pa: f64::from(n) * pa,
        pa,
        m_star,
        aoi_star,
        grid_evaluated,
        flag: join_flags(flags),
    })
}

/// [`optimal_frame_size`] on `coarse`, then again with the
/// ±[`REFINE_RADIUS`] neighbours of the coarse minimiser added.
pub fn optimal_frame_size_refined(
    exp: &Experiment,
    n: u32,
    pa: f64,
    lambda: &DegreeDistribution,
    coarse: &[u32],
) -> Result<FrameOptResult, OptimizeError> {
    let first = optimal_frame_size(exp, n, pa, lambda, coarse)?;
    let lo = first.m_star.saturating_sub(REFINE_RADIUS).max(lambda.max_degree()).max(1);
    let mut grid = coarse.to_vec();
    grid.extend(lo..=first.m_star + REFINE_RADIUS);
    optimal_frame_size(exp, n, pa, lambda, &grid)
}

/// `points` geometrically spaced frame sizes from `min_m` to `max_m`,
/// rounded and de-duplicated.
pub fn default_m_grid(min_m: u32, max_m: u32, points: usize) -> Vec<u32> {
    let min_m = min_m.max(1);
    let max_m = max_m.max(min_m);
    if points <= 1 || min_m == max_m {
        return vec![min_m];
    }
    let ratio = f64::from(max_m) / f64::from(min_m);
    let mut grid: Vec<u32> = (0..points)
        .map(|i| {
            let x = f64::from(min_m) * ratio.powf(i as f64 / (points - 1) as f64);
            (x.round() as u32).clamp(min_m, max_m)
        })
        .collect();
    grid.dedup();
    grid
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioPoint {
    pub n_pa: f64,
    pub pa: f64,
    pub m_fixed: u32,
    pub m_star: Option<u32>,
    pub aoi_star: Option<f64>,
    pub aoi_fixed: Option<f64>,
    pub aoi_sa_star: f64,
    /// `Δ*_irsa(m*) / Δ_irsa(m_fixed)`
    pub ratio_opt_vs_fixed: Option<f64>,
    /// `Δ*_irsa(m*) / Δ*_sa(n)`
    pub ratio_irsa_vs_sa: Option<f64>,
    pub flag: Option<String>,
}

/// Age ratios of IRSA at its best frame size against a fixed frame size and
/// against slotted ALOHA at its optimum. `m_fixed` is always part of the
/// searched grid.
pub fn aoi_ratio_curves(
    exp: &Experiment,
    n: u32,
    lambda: &DegreeDistribution,
    pa_grid: &[f64],
    m_fixed: u32,
    m_grid: &[u32],
    refine: bool,
) -> Vec<RatioPoint> {
    let mut grid = m_grid.to_vec();
    grid.push(m_fixed);
    let sa_star = sa_optimal_aoi(n).aoi_star;
    pa_grid
        .par_iter()
        .map(|&pa| {
            let mut point = RatioPoint {
                n_pa: f64::from(n) * pa,
                pa,
                m_fixed,
                m_star: None,
                aoi_star: None,
                aoi_fixed: None,
                aoi_sa_star: sa_star,
                ratio_opt_vs_fixed: None,
                ratio_irsa_vs_sa: None,
                flag: None,
            };
            let result = if refine {
                optimal_frame_size_refined(exp, n, pa, lambda, &grid)
            } else {
                optimal_frame_size(exp, n, pa, lambda, &grid)
            };
            match result {
                Ok(opt) => {
                    let mut flags: Vec<String> = opt.flag.iter().cloned().collect();
                    point.m_star = Some(opt.m_star);
                    point.aoi_star = Some(opt.aoi_star);
                    point.ratio_irsa_vs_sa = Some(opt.aoi_star / sa_star);
                    point.aoi_fixed = opt
                        .grid_evaluated
                        .iter()
                        .find(|&&(m, _)| m == m_fixed)
                        .map(|&(_, a)| a);
                    match point.aoi_fixed {
                        Some(fixed) => point.ratio_opt_vs_fixed = Some(opt.aoi_star / fixed),
                        None => flags.push("fixed_divergent".to_string()),
                    }
                    point.flag = join_flags(flags);
                }
                Err(e) => point.flag = Some(format!("error: {e}")),
            }
            point
        })
        .collect()
}
