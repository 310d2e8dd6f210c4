//! Counter-based random substreams.
//!
//! Every random draw in the simulators comes from a ChaCha8 generator whose
//! 256-bit key is the tuple `(root seed, purpose tag, a, b)`, each word
//! little-endian. The counters `a` and `b` name the unit of work (user and
//! block of slots, or frame and user), so results do not depend on the
//! order in which units are evaluated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Purpose tags, the second word of the substream key.
pub mod tag {
    /// Per-(frame, 0): transmitting set, degrees and placements in `estimate_plr`.
    pub const PLR_FRAME: u64 = 1;
    /// Per-(user, block): activation process of one node.
    pub const ACTIVATION: u64 = 2;
    /// Per-(frame, user): degree and replica placement in the AoI simulator.
    pub const PLACEMENT: u64 = 3;
}

pub fn substream(root: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, word) in key.chunks_exact_mut(8).zip([root, tag, a, b]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one seed.
pub fn derive_seed(root: u64, words: &[u64]) -> u64 {
    words.iter().fold(mix64(root), |h, &w| mix64(h ^ w))
}

/// Slots covered by one activation substream.
pub const ACTIVATION_BLOCK: u64 = 4096;

/// Bernoulli(`pa`) activation process of one node, realised lazily through
/// geometric gaps. Block `b` of [`ACTIVATION_BLOCK`] slots is drawn from
/// `substream(root, ACTIVATION, user, b)`; a gap that crosses a block end is
/// discarded and redrawn from the next block start, which leaves the
/// process unchanged by memorylessness.
#[derive(Debug, Clone)]
pub struct ActivationStream {
    root: u64,
    user: u64,
    pa: f64,
    log_idle: f64,
    block: u64,
    rng: ChaCha8Rng,
    next: u64,
}

impl ActivationStream {
    pub fn new(root: u64, user: u64, pa: f64) -> Self {
        debug_assert!(pa > 0.0 && pa <= 1.0);
        let mut stream = Self {
            root,
            user,
            pa,
            log_idle: (-pa).ln_1p(),
            block: 0,
            rng: substream(root, tag::ACTIVATION, user, 0),
            next: 0,
        };
        stream.next = stream.locate(0);
        stream
    }

    fn gap(&mut self) -> u64 {
        if self.pa >= 1.0 {
            return 0;
        }
        // u in (0, 1]
        let u = 1.0 - self.rng.random::<f64>();
        (u.ln() / self.log_idle).floor() as u64
    }

    /// First activation at or after `from`, which lies in the current block.
    fn locate(&mut self, from: u64) -> u64 {
        let mut candidate = from.saturating_add(self.gap());
        loop {
            let block_end = (self.block + 1) * ACTIVATION_BLOCK;
            if candidate < block_end {
                return candidate;
            }
            self.block += 1;
            self.rng = substream(self.root, tag::ACTIVATION, self.user, self.block);
            candidate = block_end.saturating_add(self.gap());
        }
    }

    /// Slot of the next activation not yet consumed.
    pub fn peek(&self) -> u64 {
        self.next
    }

    fn advance(&mut self) {
        self.next = self.locate(self.next + 1);
    }

    /// Consumes all activations before `end` and returns the last of them.
    pub fn last_before(&mut self, end: u64) -> Option<u64> {
        let mut last = None;
        while self.next < end {
            last = Some(self.next);
            self.advance();
        }
        last
    }

    /// Consumes all activations before `end`, appending them to `out`.
    pub fn drain_before(&mut self, end: u64, out: &mut Vec<u64>) {
        while self.next < end {
            out.push(self.next);
            self.advance();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substreams_differ_by_every_key_word() {
        let base: u64 = substream(1, 2, 3, 4).random();
        assert_eq!(base, substream(1, 2, 3, 4).random::<u64>());
        for other in [substream(0, 2, 3, 4), substream(1, 0, 3, 4), substream(1, 2, 0, 4), substream(1, 2, 3, 0)] {
            let mut other = other;
            assert_ne!(base, other.random::<u64>());
        }
    }

    #[test]
    fn full_activity_fires_every_slot() {
        let mut s = ActivationStream::new(9, 0, 1.0);
        let mut out = Vec::new();
        s.drain_before(10_000, &mut out);
        assert_eq!(out, (0..10_000).collect::<Vec<_>>());
    }

    #[test]
    fn activation_rate_and_independence() {
        // per-slot frequency and lag-one co-occurrence of a Bernoulli(0.3) process
        let pa = 0.3;
        let horizon = 400_000u64;
        let mut s = ActivationStream::new(5, 17, pa);
        let mut out = Vec::new();
        s.drain_before(horizon, &mut out);
        let freq = out.len() as f64 / horizon as f64;
        let sigma = (pa * (1.0 - pa) / horizon as f64).sqrt();
        assert!((freq - pa).abs() < 4.0 * sigma, "freq {freq}");

        let pairs = out.windows(2).filter(|w| w[1] == w[0] + 1).count() as f64;
        let expected = pa * pa * horizon as f64;
        assert!((pairs - expected).abs() < 4.0 * expected.sqrt(), "{pairs} vs {expected}");
        assert!(out.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn last_before_matches_drain() {
        let mut a = ActivationStream::new(3, 1, 0.01);
        let mut b = a.clone();
        let mut all = Vec::new();
        b.drain_before(50_000, &mut all);
        let mut seen = Vec::new();
        for end in (500..=50_000).step_by(500) {
            if let Some(last) = a.last_before(end) {
                seen.push(last);
                assert!(last < end && last + 500 >= end);
            }
        }
        let expected: Vec<u64> = all
            .chunk_by(|x, y| x / 500 == y / 500)
            .map(|chunk| *chunk.last().unwrap())
            .collect();
        assert_eq!(seen, expected);
    }
}
