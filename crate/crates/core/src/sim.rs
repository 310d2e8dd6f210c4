//! Monte Carlo engines.
//!
//! [`estimate_plr`] measures the IRSA packet loss rate frame by frame.
//! [`simulate_aoi_irsa`] and [`simulate_aoi_sa`] run the protocols slot by
//! slot and integrate every node's age exactly.
//!
//! Age bookkeeping: a delivery at time `t` of an update generated at `ts`
//! sets the age to `t - ts`; in between the age grows with slope one. Areas
//! are accumulated as exact integers (twice the trapezoid area), so runs
//! are bit-reproducible. Each node is observed from the end of the
//! transient, or from its first delivery if it had none by then, to the
//! end of the horizon. Nodes with no delivery at all are excluded and
//! counted.
//!
//! Both AoI simulators draw activations from the same per-node
//! [`ActivationStream`]s, so for equal `(n, pa, seed)` the SA run and an
//! IRSA run with `m = 1`, `Λ(x) = x` see identical activation patterns.

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use thiserror::Error;

use crate::analysis::{activity_probability, irsa_load};
use crate::decoder::{place_user, Frame, PeelingDecoder, UserId};
use crate::model::{validate_config, ModelError, Protocol, SystemConfig};
use crate::rng::{substream, tag, ActivationStream};

/// Batches used for the batch-means standard error of the age.
pub const AGE_BATCHES: usize = 32;

/// Frames handled by one parallel work unit in [`estimate_plr`].
const PLR_CHUNK: u64 = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ModelError),
    #[error("{0}")]
    Domain(String),
}

fn checked(cfg: &SystemConfig) -> Result<(), SimError> {
    let report = validate_config(cfg);
    if report.ok {
        Ok(())
    } else {
        Err(ModelError::Invalid(report.violations).into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlrEstimate {
    /// Channel load `G` in transmitting users per slot.
    pub load: f64,
    pub plr: f64,
    pub stderr: f64,
    pub packets_observed: u64,
    pub frames_simulated: u64,
    pub seed: u64,
}

impl PlrEstimate {
    pub fn throughput(&self) -> f64 {
        (1.0 - self.plr) * self.load
    }
}

/// Integer sufficient statistics of per-frame (transmitted, lost) counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct LossTally {
    frames: u64,
    sent: u64,
    lost: u64,
    sent_sq: u128,
    lost_sq: u128,
    cross: u128,
}

impl LossTally {
    fn record(&mut self, sent: u64, lost: u64) {
        self.frames += 1;
        self.sent += sent;
        self.lost += lost;
        self.sent_sq += u128::from(sent * sent);
        self.lost_sq += u128::from(lost * lost);
        self.cross += u128::from(sent * lost);
    }

    fn merge(mut self, other: Self) -> Self {
        self.frames += other.frames;
        self.sent += other.sent;
        self.lost += other.lost;
        self.sent_sq += other.sent_sq;
        self.lost_sq += other.lost_sq;
        self.cross += other.cross;
        self
    }

    /// Ratio estimate and its standard error, treating frames as the
    /// independent sampling unit (losses inside a frame are correlated).
    fn ratio(&self) -> (f64, f64) {
        if self.sent == 0 {
            return (0.0, 0.0);
        }
        let p = self.lost as f64 / self.sent as f64;
        if self.frames < 2 {
            return (p, 0.0);
        }
        let f = self.frames as f64;
        let resid = self.lost_sq as f64 - 2.0 * p * self.cross as f64 + p * p * self.sent_sq as f64;
        let var_unit = (resid.max(0.0)) / (f - 1.0);
        let mean_sent = self.sent as f64 / f;
        (p, (var_unit / f).sqrt() / mean_sent)
    }
}

/// Packet loss rate over `frames` independent frames. In every frame the
/// number of transmitting users is Binomial(n, 1-(1-pa)^m); each draws a
/// degree from `Λ` and places its replicas uniformly.
///
/// A slotted ALOHA config is accepted as the equivalent `m = 1`, `Λ(x) = x`
/// frame. Frame `f` uses `substream(seed, PLR_FRAME, f, 0)`, so the result
/// is identical for any thread count.
pub fn estimate_plr(cfg: &SystemConfig, frames: u64, seed: u64) -> Result<PlrEstimate, SimError> {
    checked(cfg)?;
    if frames == 0 {
        return Err(SimError::Domain("at least one frame is required".into()));
    }
    let m = cfg.m as usize;
    let active = Binomial::new(u64::from(cfg.n), activity_probability(cfg.m, cfg.pa))
        .map_err(|e| SimError::Domain(e.to_string()))?;
    let chunks = frames.div_ceil(PLR_CHUNK);
    let tally = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut frame = Frame::new(m).expect("m validated");
            let mut decoder = PeelingDecoder::new();
            let mut tally = LossTally::default();
            let end = ((chunk + 1) * PLR_CHUNK).min(frames);
            for f in chunk * PLR_CHUNK..end {
                let mut rng = substream(seed, tag::PLR_FRAME, f, 0);
                let sent = active.sample(&mut rng);
                frame.reset(m);
                for user in 0..sent {
                    let degree = cfg.lambda.sample(&mut rng);
                    place_user(&mut frame, user as UserId, degree, 0, &mut rng)
                        .expect("degree validated against m");
                }
                let decoded = decoder.run(&frame) as u64;
                tally.record(sent, sent - decoded);
            }
            tally
        })
        .reduce(LossTally::default, LossTally::merge);
    let (plr, stderr) = tally.ratio();
    Ok(PlrEstimate {
        load: irsa_load(cfg.n, cfg.m, cfg.pa),
        plr,
        stderr,
        packets_observed: tally.sent,
        frames_simulated: frames,
        seed,
    })
}

/// Loss rate with a fixed transmitting set: every frame holds one user per
/// entry of `degrees`. Used to compare against
/// [`crate::decoder::enumerate_plr_exact`].
pub fn estimate_plr_fixed(m: u32, degrees: &[u32], frames: u64, seed: u64) -> Result<PlrEstimate, SimError> {
    if frames == 0 {
        return Err(SimError::Domain("at least one frame is required".into()));
    }
    if m == 0 || degrees.iter().any(|&d| d == 0 || d > m) {
        return Err(SimError::Domain(format!("degrees {degrees:?} do not fit in {m} slots")));
    }
    let m_slots = m as usize;
    let sent = degrees.len() as u64;
    let chunks = frames.div_ceil(PLR_CHUNK);
    let tally = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut frame = Frame::new(m_slots).expect("m positive");
            let mut decoder = PeelingDecoder::new();
            let mut tally = LossTally::default();
            let end = ((chunk + 1) * PLR_CHUNK).min(frames);
            for f in chunk * PLR_CHUNK..end {
                let mut rng = substream(seed, tag::PLR_FRAME, f, 0);
                frame.reset(m_slots);
                for (user, &degree) in degrees.iter().enumerate() {
                    place_user(&mut frame, user as UserId, degree, 0, &mut rng).expect("checked");
                }
                tally.record(sent, sent - decoder.run(&frame) as u64);
            }
            tally
        })
        .reduce(LossTally::default, LossTally::merge);
    let (plr, stderr) = tally.ratio();
    Ok(PlrEstimate {
        load: sent as f64 / f64::from(m),
        plr,
        stderr,
        packets_observed: tally.sent,
        frames_simulated: frames,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoiStats {
    /// Mean over observed nodes of each node's time-average age.
    pub network_aoi: f64,
    /// Pooled age: total area over total observed time of all nodes.
    pub per_node_mean: f64,
    /// Batch-means standard error of the pooled age.
    pub per_node_stderr: f64,
    pub horizon_slots: u64,
    pub transient_discarded_slots: u64,
    /// Deliveries per slot inside the observation window.
    pub throughput: f64,
    pub deliveries: u64,
    /// Nodes with no delivery at all during the run; excluded from the averages.
    pub nodes_without_delivery: u32,
    /// No node was ever observed; `network_aoi` is then a lower bound.
    pub diverged: bool,
    pub seed: u64,
}

/// Age state of one node at the sink.
#[derive(Debug, Clone, Default)]
pub struct NodeAgeTracker {
    /// Generation time of the freshest delivered update (0 before any delivery).
    pub last_delivered_timestamp: u64,
    /// Update generated in the previous frame, waiting for transmission.
    pub pending_update_timestamp: Option<u64>,
    /// Twice the integral of the age since the observation started.
    pub area_accumulator: u128,
    /// Time up to which the area has been integrated.
    pub last_reset_time: Option<u64>,
    observed_slots: u64,
    delivered_before_window: bool,
    window_deliveries: u64,
}

/// Observation window `[start, end]` split into equal batches.
#[derive(Debug)]
struct Window {
    start: u64,
    end: u64,
    bounds: Vec<u64>,
    area: Vec<u128>,
    time: Vec<u64>,
}

impl Window {
    fn new(start: u64, end: u64) -> Self {
        let len = end - start;
        let batches = (AGE_BATCHES as u64).min(len).max(1) as usize;
        let bounds = (0..=batches as u64).map(|i| start + len * i / batches as u64).collect();
        Self {
            start,
            end,
            bounds,
            area: vec![0; batches],
            time: vec![0; batches],
        }
    }

    /// Integrates `t - y` over `[a, c]`, returning twice the area.
    fn integrate(&mut self, a: u64, c: u64, y: u64) -> u128 {
        debug_assert!(y <= a && a <= c);
        let mut total = 0u128;
        let first = self.bounds.partition_point(|&b| b <= a).saturating_sub(1);
        for b in first..self.area.len() {
            let lo = a.max(self.bounds[b]);
            let hi = c.min(self.bounds[b + 1]);
            if lo >= hi {
                if self.bounds[b] >= c {
                    break;
                }
                continue;
            }
            let twice = u128::from(hi - lo) * u128::from((hi - y) + (lo - y));
            self.area[b] += twice;
            self.time[b] += hi - lo;
            total += twice;
        }
        total
    }

    fn batch_stderr(&self) -> f64 {
        let values: Vec<f64> = self
            .area
            .iter()
            .zip(&self.time)
            .filter(|(_, &t)| t > 0)
            .map(|(&a, &t)| a as f64 / (2.0 * t as f64))
            .collect();
        let k = values.len();
        if k < 2 {
            return 0.0;
        }
        let mean = values.iter().sum::<f64>() / k as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
        (var / k as f64).sqrt()
    }
}

impl NodeAgeTracker {
    fn deliver(&mut self, window: &mut Window, t: u64, timestamp: u64) {
        debug_assert!(timestamp < t && t <= window.end);
        if t <= window.start {
            self.delivered_before_window = true;
        } else {
            if let Some(from) = self.observation_cursor(window) {
                self.area_accumulator += window.integrate(from, t, self.last_delivered_timestamp);
                self.observed_slots += t - from;
            }
            self.last_reset_time = Some(t);
            self.window_deliveries += 1;
        }
        self.last_delivered_timestamp = timestamp;
    }

    fn observation_cursor(&self, window: &Window) -> Option<u64> {
        match self.last_reset_time {
            Some(t) => Some(t),
            None if self.delivered_before_window => Some(window.start),
            None => None,
        }
    }

    fn close(&mut self, window: &mut Window) {
        if let Some(from) = self.observation_cursor(window) {
            if from < window.end {
                self.area_accumulator += window.integrate(from, window.end, self.last_delivered_timestamp);
                self.observed_slots += window.end - from;
            }
            self.last_reset_time = Some(window.end);
        }
    }

    fn has_delivered(&self) -> bool {
        self.delivered_before_window || self.window_deliveries > 0
    }
}

fn summarize(trackers: &[NodeAgeTracker], window: &Window, horizon: u64, seed: u64) -> AoiStats {
    let observed: Vec<&NodeAgeTracker> = trackers.iter().filter(|t| t.observed_slots > 0).collect();
    let without = trackers.iter().filter(|t| !t.has_delivered()).count() as u32;
    let deliveries: u64 = trackers.iter().map(|t| t.window_deliveries).sum();
    let span = window.end - window.start;
    let throughput = deliveries as f64 / span as f64;
    if observed.is_empty() {
        // every age is at least t over the window
        let lower = (window.start + window.end) as f64 / 2.0;
        return AoiStats {
            network_aoi: lower.max(1.0),
            per_node_mean: lower.max(1.0),
            per_node_stderr: 0.0,
            horizon_slots: horizon,
            transient_discarded_slots: window.start,
            throughput,
            deliveries,
            nodes_without_delivery: without,
            diverged: true,
            seed,
        };
    }
    let network_aoi = observed
        .iter()
        .map(|t| t.area_accumulator as f64 / (2.0 * t.observed_slots as f64))
        .sum::<f64>()
        / observed.len() as f64;
    let total_area: u128 = observed.iter().map(|t| t.area_accumulator).sum();
    let total_time: u64 = observed.iter().map(|t| t.observed_slots).sum();
    AoiStats {
        network_aoi,
        per_node_mean: total_area as f64 / (2.0 * total_time as f64),
        per_node_stderr: window.batch_stderr(),
        horizon_slots: horizon,
        transient_discarded_slots: window.start,
        throughput,
        deliveries,
        nodes_without_delivery: without,
        diverged: false,
        seed,
    }
}

/// Time-domain IRSA run over `frames` frames.
///
/// A node that activates at least once in frame `k` sends its freshest
/// update in frame `k + 1`; activations keep being sampled while it
/// transmits. Decoding happens at the end of the frame, where a decoded
/// node's age drops to `m + X`, `X ∈ [1, m]`. The first
/// `transient_frames` frames are excluded from all statistics.
pub fn simulate_aoi_irsa(
    cfg: &SystemConfig,
    frames: u64,
    seed: u64,
    transient_frames: u64,
) -> Result<AoiStats, SimError> {
    checked(cfg)?;
    if cfg.protocol != Protocol::Irsa {
        return Err(SimError::Domain("simulate_aoi_irsa needs an IRSA config".into()));
    }
    if frames <= transient_frames {
        return Err(SimError::Domain(format!(
            "horizon of {frames} frames does not exceed the transient of {transient_frames}"
        )));
    }
    let m = u64::from(cfg.m);
    let horizon = frames * m;
    let mut window = Window::new(transient_frames * m, horizon);
    let mut streams: Vec<ActivationStream> = (0..cfg.n)
        .map(|u| ActivationStream::new(seed, u64::from(u), cfg.pa))
        .collect();
    let mut trackers = vec![NodeAgeTracker::default(); cfg.n as usize];
    let mut frame = Frame::new(cfg.m as usize).expect("m validated");
    let mut decoder = PeelingDecoder::new();

    for k in 0..frames {
        let frame_end = (k + 1) * m;
        frame.reset(cfg.m as usize);
        for (u, tracker) in trackers.iter().enumerate() {
            if let Some(ts) = tracker.pending_update_timestamp {
                let mut rng = substream(seed, tag::PLACEMENT, k, u as u64);
                let degree = cfg.lambda.sample(&mut rng);
                place_user(&mut frame, u as UserId, degree, ts, &mut rng).expect("degree validated");
            }
        }
        decoder.run(&frame);
        for (idx, &ok) in decoder.decoded_flags().iter().enumerate() {
            if ok {
                let user = frame.entry_user(idx) as usize;
                trackers[user].deliver(&mut window, frame_end, frame.entry_timestamp(idx));
            }
        }
        for (tracker, stream) in trackers.iter_mut().zip(streams.iter_mut()) {
            tracker.pending_update_timestamp = stream.last_before(frame_end);
        }
    }
    for tracker in &mut trackers {
        tracker.close(&mut window);
    }
    Ok(summarize(&trackers, &window, horizon, seed))
}

/// Time-domain slotted ALOHA run over `slots` slots. A node activating in a
/// slot transmits in it; a lone transmission is delivered at the slot end
/// with age one.
pub fn simulate_aoi_sa(
    cfg: &SystemConfig,
    slots: u64,
    seed: u64,
    transient_slots: u64,
) -> Result<AoiStats, SimError> {
    checked(cfg)?;
    if cfg.protocol != Protocol::SlottedAloha {
        return Err(SimError::Domain("simulate_aoi_sa needs a slotted ALOHA config".into()));
    }
    if slots <= transient_slots {
        return Err(SimError::Domain(format!(
            "horizon of {slots} slots does not exceed the transient of {transient_slots}"
        )));
    }
    use crate::rng::ACTIVATION_BLOCK as BLOCK;
    let mut window = Window::new(transient_slots, slots);
    let mut streams: Vec<ActivationStream> = (0..cfg.n)
        .map(|u| ActivationStream::new(seed, u64::from(u), cfg.pa))
        .collect();
    let mut trackers = vec![NodeAgeTracker::default(); cfg.n as usize];
    let mut occupancy = vec![0u32; BLOCK as usize];
    let mut starts = vec![0usize; cfg.n as usize + 1];
    let mut activations: Vec<u64> = Vec::new();

    let mut block_start = 0;
    while block_start < slots {
        let block_end = (block_start + BLOCK).min(slots);
        activations.clear();
        occupancy.iter_mut().for_each(|c| *c = 0);
        for (u, stream) in streams.iter_mut().enumerate() {
            starts[u] = activations.len();
            stream.drain_before(block_end, &mut activations);
        }
        starts[cfg.n as usize] = activations.len();
        for &s in &activations {
            occupancy[(s - block_start) as usize] += 1;
        }
        for (u, tracker) in trackers.iter_mut().enumerate() {
            for &s in &activations[starts[u]..starts[u + 1]] {
                if occupancy[(s - block_start) as usize] == 1 {
                    tracker.deliver(&mut window, s + 1, s);
                }
            }
        }
        block_start = block_end;
    }
    for tracker in &mut trackers {
        tracker.close(&mut window);
    }
    Ok(summarize(&trackers, &window, slots, seed))
}
