//! Frame-level IRSA reception under the collision channel.
//!
//! A [`Frame`] records which slots every transmitting user occupies. The
//! [`PeelingDecoder`] repeatedly takes a slot holding exactly one
//! un-cancelled replica, decodes that user and removes all of its replicas,
//! until no singleton slot remains.
//!
//! Frames can be written as text fixtures, one user per line:
//!
//! ```text
//! m 6
//! user 1 slots 0,2 ts 3
//! user 2 slots 0,1,4 ts 5
//! ```
//!
//! The `m <slots>` header must come first; `#` starts a comment.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use itertools::Itertools;
use rand::seq::index;
use rand::Rng;
use thiserror::Error;

pub type UserId = u32;

/// Largest number of joint placements [`enumerate_plr_exact`] will visit.
pub const ENUMERATION_LIMIT: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecoderError {
    #[error("user {user} asks for {degree} replicas in a frame of {m} slots")]
    DegreeTooLarge { user: UserId, degree: u32, m: usize },
    #[error("user {user}: {reason}")]
    BadPlacement { user: UserId, reason: String },
    #[error("user {0} appears twice in the frame")]
    DuplicateUser(UserId),
    #[error("frame must have at least one slot")]
    EmptyFrame,
    #[error("{0} joint placements exceed the enumeration limit")]
    Intractable(u128),
    #[error("fixture line {line}: {reason}")]
    Fixture { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Entry {
    user: UserId,
    timestamp: u64,
    start: u32,
    len: u32,
}

/// Replica placements of one frame. Slot lists are stored sorted.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Frame {
    m: usize,
    entries: Vec<Entry>,
    pool: Vec<u32>,
}

impl Frame {
    pub fn new(m: usize) -> Result<Self, DecoderError> {
        if m == 0 {
            return Err(DecoderError::EmptyFrame);
        }
        Ok(Self {
            m,
            entries: Vec::new(),
            pool: Vec::new(),
        })
    }

    pub fn slots_per_frame(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Empties the frame and resizes it to `m` slots, keeping allocations.
    pub(crate) fn reset(&mut self, m: usize) {
        debug_assert!(m > 0);
        self.m = m;
        self.entries.clear();
        self.pool.clear();
    }

    /// Adds a transmitting user after checking the placement invariants.
    pub fn insert(&mut self, user: UserId, slots: &[u32], timestamp: u64) -> Result<(), DecoderError> {
        let bad = |reason: &str| DecoderError::BadPlacement {
            user,
            reason: reason.to_string(),
        };
        if slots.is_empty() {
            return Err(bad("no replicas"));
        }
        if slots.iter().any(|&s| s as usize >= self.m) {
            return Err(bad("slot index outside the frame"));
        }
        if !slots.iter().all_unique() {
            return Err(bad("replicas must occupy distinct slots"));
        }
        if self.entries.iter().any(|e| e.user == user) {
            return Err(DecoderError::DuplicateUser(user));
        }
        self.push_unchecked(user, slots.iter().copied(), timestamp);
        Ok(())
    }

    pub(crate) fn push_unchecked<I>(&mut self, user: UserId, slots: I, timestamp: u64)
    where
        I: IntoIterator<Item = u32>,
    {
        let start = self.pool.len();
        self.pool.extend(slots);
        self.pool[start..].sort_unstable();
        self.entries.push(Entry {
            user,
            timestamp,
            start: start as u32,
            len: (self.pool.len() - start) as u32,
        });
    }

    /// Users in insertion order.
    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        self.entries.iter().map(|e| e.user)
    }

    pub fn slots_of(&self, user: UserId) -> Option<&[u32]> {
        self.entries
            .iter()
            .position(|e| e.user == user)
            .map(|i| self.entry_slots(i))
    }

    pub fn timestamp_of(&self, user: UserId) -> Option<u64> {
        self.entries.iter().find(|e| e.user == user).map(|e| e.timestamp)
    }

    fn entry_slots(&self, idx: usize) -> &[u32] {
        let e = &self.entries[idx];
        &self.pool[e.start as usize..(e.start + e.len) as usize]
    }

    pub(crate) fn entry_user(&self, idx: usize) -> UserId {
        self.entries[idx].user
    }

    pub(crate) fn entry_timestamp(&self, idx: usize) -> u64 {
        self.entries[idx].timestamp
    }

    /// Number of replicas in every slot.
    pub fn occupancy(&self) -> Vec<u32> {
        let mut counts = vec![0; self.m];
        for &s in &self.pool {
            counts[s as usize] += 1;
        }
        counts
    }

    /// Copy of this frame without `user`.
    pub fn without(&self, user: UserId) -> Frame {
        let mut out = Frame {
            m: self.m,
            entries: Vec::with_capacity(self.entries.len()),
            pool: Vec::with_capacity(self.pool.len()),
        };
        for (i, e) in self.entries.iter().enumerate() {
            if e.user != user {
                out.push_unchecked(e.user, self.entry_slots(i).iter().copied(), e.timestamp);
            }
        }
        out
    }

    pub fn parse_fixture(text: &str) -> Result<Frame, DecoderError> {
        let mut frame: Option<Frame> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let err = |reason: &str| DecoderError::Fixture {
                line: line_no,
                reason: reason.to_string(),
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            match words.as_slice() {
                ["m", m] => {
                    if frame.is_some() {
                        return Err(err("duplicate `m` header"));
                    }
                    let m: usize = m.parse().map_err(|_| err("bad slot count"))?;
                    frame = Some(Frame::new(m)?);
                }
                ["user", id, "slots", slots, "ts", ts] => {
                    let frame = frame.as_mut().ok_or_else(|| err("missing `m` header"))?;
                    let id: UserId = id.parse().map_err(|_| err("bad user id"))?;
                    let slots: Vec<u32> = slots
                        .split(',')
                        .map(|s| s.trim().parse::<u32>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| err("bad slot list"))?;
                    let ts: u64 = ts.parse().map_err(|_| err("bad timestamp"))?;
                    frame.insert(id, &slots, ts)?;
                }
                _ => return Err(err("expected `m <slots>` or `user <id> slots <i,j,..> ts <t>`")),
            }
        }
        frame.ok_or(DecoderError::Fixture {
            line: 0,
            reason: "missing `m` header".to_string(),
        })
    }

    pub fn to_fixture(&self) -> String {
        let mut out = format!("m {}\n", self.m);
        for (i, e) in self.entries.iter().enumerate() {
            let slots = self.entry_slots(i).iter().join(",");
            let _ = writeln!(out, "user {} slots {} ts {}", e.user, slots, e.timestamp);
        }
        out
    }
}

/// Places `degree` replicas of each user in distinct slots drawn uniformly
/// from all `C(m, degree)` subsets. Users are processed in map order.
pub fn build_frame<R: Rng + ?Sized>(
    m: usize,
    users: &std::collections::BTreeMap<UserId, (u32, u64)>,
    rng: &mut R,
) -> Result<Frame, DecoderError> {
    let mut frame = Frame::new(m)?;
    for (&user, &(degree, timestamp)) in users {
        place_user(&mut frame, user, degree, timestamp, rng)?;
    }
    Ok(frame)
}

pub(crate) fn place_user<R: Rng + ?Sized>(
    frame: &mut Frame,
    user: UserId,
    degree: u32,
    timestamp: u64,
    rng: &mut R,
) -> Result<(), DecoderError> {
    let m = frame.m;
    if degree as usize > m || degree == 0 {
        return Err(DecoderError::DegreeTooLarge { user, degree, m });
    }
    if degree as usize == m {
        frame.push_unchecked(user, 0..m as u32, timestamp);
    } else {
        frame.push_unchecked(
            user,
            index::sample(rng, m, degree as usize).into_iter().map(|s| s as u32),
            timestamp,
        );
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodingResult {
    pub decoded: BTreeSet<UserId>,
    /// Users in the order they were peeled.
    pub order: Vec<UserId>,
    /// Number of passes over the singleton slots that decoded someone.
    pub iterations: usize,
}

/// Work-queue peeling decoder with reusable buffers.
///
/// Each slot keeps its replica count and the XOR of the entry indices it
/// holds, so a singleton slot names its user directly.
#[derive(Debug, Default)]
pub struct PeelingDecoder {
    count: Vec<u32>,
    xor: Vec<u32>,
    decoded: Vec<bool>,
    order: Vec<u32>,
    current: Vec<u32>,
    next: Vec<u32>,
    iterations: usize,
}

impl PeelingDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Peels `frame` to the fixpoint and returns the number of decoded users.
    pub fn run(&mut self, frame: &Frame) -> usize {
        self.count.clear();
        self.count.resize(frame.m, 0);
        self.xor.clear();
        self.xor.resize(frame.m, 0);
        self.decoded.clear();
        self.decoded.resize(frame.entries.len(), false);
        self.order.clear();
        self.current.clear();
        self.next.clear();
        self.iterations = 0;

        for idx in 0..frame.entries.len() {
            for &s in frame.entry_slots(idx) {
                self.count[s as usize] += 1;
                self.xor[s as usize] ^= idx as u32;
            }
        }
        self.current
            .extend((0..frame.m as u32).filter(|&s| self.count[s as usize] == 1));

        while !self.current.is_empty() {
            let mut progressed = false;
            for i in 0..self.current.len() {
                let slot = self.current[i] as usize;
                if self.count[slot] != 1 {
                    continue;
                }
                let idx = self.xor[slot];
                debug_assert!(!self.decoded[idx as usize]);
                self.decoded[idx as usize] = true;
                self.order.push(idx);
                progressed = true;
                for &s in frame.entry_slots(idx as usize) {
                    let s = s as usize;
                    self.count[s] -= 1;
                    self.xor[s] ^= idx;
                    if self.count[s] == 1 {
                        self.next.push(s as u32);
                    }
                }
            }
            if progressed {
                self.iterations += 1;
            }
            std::mem::swap(&mut self.current, &mut self.next);
            self.next.clear();
        }
        self.order.len()
    }

    /// Per-entry decoded flags of the last [`PeelingDecoder::run`].
    pub(crate) fn decoded_flags(&self) -> &[bool] {
        &self.decoded
    }

    pub fn decode(&mut self, frame: &Frame) -> DecodingResult {
        self.run(frame);
        let order: Vec<UserId> = self.order.iter().map(|&i| frame.entry_user(i as usize)).collect();
        DecodingResult {
            decoded: order.iter().copied().collect(),
            order,
            iterations: self.iterations,
        }
    }
}

pub fn decode_frame(frame: &Frame) -> DecodingResult {
    PeelingDecoder::new().decode(frame)
}

/// Exact packet loss rate for a fixed set of transmitting users, obtained by
/// decoding every joint placement (each user uniform over its subsets).
pub fn enumerate_plr_exact(m: usize, degrees: &[u32]) -> Result<f64, DecoderError> {
    if m == 0 {
        return Err(DecoderError::EmptyFrame);
    }
    if degrees.is_empty() {
        return Ok(0.0);
    }
    for (user, &d) in degrees.iter().enumerate() {
        if d == 0 || d as usize > m {
            return Err(DecoderError::DegreeTooLarge {
                user: user as UserId,
                degree: d,
                m,
            });
        }
    }
    let subsets: Vec<Vec<Vec<u32>>> = degrees
        .iter()
        .map(|&d| (0..m as u32).combinations(d as usize).collect())
        .collect();
    let total: u128 = subsets.iter().map(|s| s.len() as u128).product();
    if total > u128::from(ENUMERATION_LIMIT) {
        return Err(DecoderError::Intractable(total));
    }

    let mut decoder = PeelingDecoder::new();
    let mut frame = Frame::new(m)?;
    let mut lost: u64 = 0;
    for placement in subsets.iter().map(|s| s.iter()).multi_cartesian_product() {
        frame.reset(m);
        for (user, slots) in placement.into_iter().enumerate() {
            frame.push_unchecked(user as UserId, slots.iter().copied(), 0);
        }
        lost += (degrees.len() - decoder.run(&frame)) as u64;
    }
    Ok(lost as f64 / (total as f64 * degrees.len() as f64))
}
