//! Relay-side buffering and combining.
//!
//! Four schemes are supported:
//!
//! * `ShiftBuffer`: one FIFO of depth `D` per source link; the newest `d_i`
//!   entries of buffer `i` are combined.
//! * `SlotBuffer`: for lossy source links; the symbol of round `n` overwrites
//!   slot `mod(n-1, D) + 1`, erasures leave the slot untouched, and the `d_i`
//!   picks walk backwards from the current round's slot.
//! * `OneBit`: a depth-1 buffer per link holding the last received symbol.
//! * `Conventional`: no buffering; at most one symbol per source from the
//!   current round.
//!
//! Combined symbols record their provenance so the destination knows the
//! exact generator row.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

use crate::dist::{DegreeDistribution, DistKind};
use crate::source::{class_of_round, BitLayout, SourceCodedSymbol};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelayError {
    #[error("buffer operation {op} not valid in {mode:?} mode")]
    ModeMismatch { op: &'static str, mode: BufferMode },
    #[error("symbol from round {symbol} stored in round {round}")]
    RoundMismatch { symbol: u64, round: u64 },
    #[error("relay buffers are not filled yet")]
    BuffersNotFull,
    #[error("no expanding windows configured")]
    WindowsNotConfigured,
    #[error("invalid relay config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BufferMode {
    Shift,
    Slot,
    OneBit,
}

/// Per-link buffer `B_i` at the relay.
#[derive(Debug, Clone)]
pub struct LinkBuffer {
    source_id: usize,
    mode: BufferMode,
    slots: Vec<Option<SourceCodedSymbol>>,
    fill_count: usize,
}

impl LinkBuffer {
    /// `depth` is ignored for [`BufferMode::OneBit`], which always holds one
    /// symbol.
    pub fn new(source_id: usize, depth: usize, mode: BufferMode) -> Self {
        let depth = if mode == BufferMode::OneBit { 1 } else { depth.max(1) };
        Self {
            source_id,
            mode,
            slots: vec![None; depth],
            fill_count: 0,
        }
    }

    pub fn source_id(&self) -> usize {
        self.source_id
    }

    pub fn mode(&self) -> BufferMode {
        self.mode
    }

    pub fn depth(&self) -> usize {
        self.slots.len()
    }

    pub fn fill_count(&self) -> usize {
        self.fill_count
    }

    pub fn is_full(&self) -> bool {
        self.fill_count == self.slots.len()
    }

    /// Entry at 1-based position `slot` (`b_i^slot`).
    pub fn get(&self, slot: usize) -> Option<&SourceCodedSymbol> {
        self.slots.get(slot.checked_sub(1)?)?.as_ref()
    }

    /// Right-shift insert at position 1; returns the evicted slot-`D` entry.
    pub fn push_shift(&mut self, sym: SourceCodedSymbol) -> Result<Option<SourceCodedSymbol>, RelayError> {
        if self.mode != BufferMode::Shift {
            return Err(RelayError::ModeMismatch {
                op: "push_shift",
                mode: self.mode,
            });
        }
        let evicted = self.slots.pop().flatten();
        self.slots.insert(0, Some(sym));
        if evicted.is_none() {
            self.fill_count += 1;
        }
        Ok(evicted)
    }

    /// Overwrite slot `mod(n-1, D) + 1` with the round-`n` symbol. An erased
    /// round (`None`) leaves the buffer untouched and returns `None`.
    pub fn store_slot(
        &mut self,
        sym: Option<SourceCodedSymbol>,
        round: u64,
    ) -> Result<Option<SourceCodedSymbol>, RelayError> {
        if self.mode != BufferMode::Slot {
            return Err(RelayError::ModeMismatch {
                op: "store_slot",
                mode: self.mode,
            });
        }
        let Some(sym) = sym else {
            return Ok(None);
        };
        if sym.round != round {
            return Err(RelayError::RoundMismatch {
                symbol: sym.round,
                round,
            });
        }
        let pos = class_of_round(round, self.slots.len()) - 1;
        let old = self.slots[pos].replace(sym);
        if old.is_none() {
            self.fill_count += 1;
        }
        Ok(old)
    }

    /// Keep the latest received symbol; an erasure keeps the previous one.
    pub fn store_one_bit(
        &mut self,
        sym: Option<SourceCodedSymbol>,
    ) -> Result<Option<SourceCodedSymbol>, RelayError> {
        if self.mode != BufferMode::OneBit {
            return Err(RelayError::ModeMismatch {
                op: "store_one_bit",
                mode: self.mode,
            });
        }
        let Some(sym) = sym else {
            return Ok(None);
        };
        let old = self.slots[0].replace(sym);
        if old.is_none() {
            self.fill_count += 1;
        }
        Ok(old)
    }
}

/// 1-based buffer slots `u_1..u_count` with `u_m = mod(v - m + D, D) + 1`.
pub fn slot_walk(current: usize, depth: usize, count: usize) -> impl Iterator<Item = usize> {
    (1..=count).map(move |m| (current + depth - m) % depth + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelayScheme {
    Conventional,
    ShiftBuffer,
    SlotBuffer,
    OneBit,
}

impl RelayScheme {
    pub fn is_buffered(self) -> bool {
        matches!(self, RelayScheme::ShiftBuffer | RelayScheme::SlotBuffer)
    }

    /// Whether sources must use the class-partitioned encoder.
    pub fn needs_class_partition(self) -> bool {
        self.is_buffered()
    }

    pub fn name(self) -> &'static str {
        match self {
            RelayScheme::Conventional => "conventional",
            RelayScheme::ShiftBuffer => "shift_buffer",
            RelayScheme::SlotBuffer => "slot_buffer",
            RelayScheme::OneBit => "one_bit",
        }
    }
}

impl std::str::FromStr for RelayScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conventional" => Ok(RelayScheme::Conventional),
            "shift_buffer" => Ok(RelayScheme::ShiftBuffer),
            "slot_buffer" => Ok(RelayScheme::SlotBuffer),
            "one_bit" => Ok(RelayScheme::OneBit),
            other => Err(format!("unknown scheme {other:?}")),
        }
    }
}

/// What a conventional relay does when a selected source symbol was erased.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ErasurePolicy {
    /// Defer transmission to the next round.
    #[default]
    Stall,
    /// Combine only among the symbols received this round.
    Reselect,
}

/// Expanding windows `ϖ_1 ⊂ ϖ_2 ⊂ …` over sources.
#[derive(Debug, Clone)]
pub struct WindowSpec {
    /// Sorted 1-based source ids of each window.
    pub members: Vec<Vec<usize>>,
    /// Window-assignment distribution `θ`.
    pub theta: DegreeDistribution,
    /// Node-perspective relay distribution `Γ_jW` for each window.
    pub gammas: Vec<DegreeDistribution>,
}

impl WindowSpec {
    /// Windows from an importance class per source (1-based, class 1 most
    /// important): window `j` holds every source of class `<= j`.
    pub fn from_classes(
        classes: &[usize],
        theta: DegreeDistribution,
        gammas: Vec<DegreeDistribution>,
    ) -> Self {
        let num = classes.iter().copied().max().unwrap_or(0);
        let members = (1..=num)
            .map(|j| {
                classes
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c <= j)
                    .map(|(i, _)| i + 1)
                    .collect()
            })
            .collect();
        Self {
            members,
            theta,
            gammas,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct RelayConfig {
    pub relay_id: usize,
    /// Node-perspective relay-degree distribution `Γ(x)`.
    pub gamma: DegreeDistribution,
    /// Source-selection distribution `q`, one entry per source.
    pub q: DegreeDistribution,
    pub scheme: RelayScheme,
    /// Buffer depth `D`.
    pub depth: usize,
    pub windows: Option<WindowSpec>,
    pub policy: ErasurePolicy,
    pub layout: BitLayout,
}

impl RelayConfig {
    pub fn num_sources(&self) -> usize {
        self.layout.num_sources()
    }

    /// Largest admissible relay degree over a set of `sources` sources.
    fn degree_cap(&self, sources: usize) -> usize {
        if self.scheme.is_buffered() {
            self.depth * sources
        } else {
            sources
        }
    }

    pub fn validate(&self) -> Result<(), RelayError> {
        let s = self.num_sources();
        let bad = |m: String| Err(RelayError::InvalidConfig(m));
        if s == 0 {
            return bad("relay needs at least one source".into());
        }
        if self.depth == 0 {
            return bad("depth must be >= 1".into());
        }
        if self.q.max_degree() != s {
            return bad(format!("q has {} entries for {s} sources", self.q.max_degree()));
        }
        if self.gamma.max_degree() > self.degree_cap(s) {
            return bad(format!(
                "relay max degree {} exceeds {} for scheme {}",
                self.gamma.max_degree(),
                self.degree_cap(s),
                self.scheme.name()
            ));
        }
        if let Some(w) = &self.windows {
            if !self.scheme.is_buffered() {
                return bad("expanding windows need a buffered scheme".into());
            }
            if w.is_empty() || w.gammas.len() != w.len() || w.theta.max_degree() != w.len() {
                return bad("window count, theta and per-window gammas disagree".into());
            }
            for (j, members) in w.members.iter().enumerate() {
                if members.is_empty() || members.iter().any(|&m| m == 0 || m > s) {
                    return bad(format!("window {} has invalid members", j + 1));
                }
                if j > 0 && !w.members[j - 1].iter().all(|m| members.contains(m)) {
                    return bad(format!("window {} does not contain window {}", j + 1, j));
                }
                if w.gammas[j].max_degree() > self.degree_cap(members.len()) {
                    return bad(format!("window {} degree exceeds its capacity", j + 1));
                }
                if members.iter().all(|&m| self.q.mass(m) == 0.0) {
                    return bad(format!("window {} has no selection mass", j + 1));
                }
            }
        }
        Ok(())
    }
}

/// One relay-encoded symbol `z^n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelayCodedSymbol {
    pub relay_id: usize,
    pub round: u64,
    /// Global information-bit ids per source: the symmetric difference of
    /// the combined symbols' neighbor sets.
    pub neighbors_by_source: BTreeMap<usize, Vec<u32>>,
    /// `(source_id, source round)` of every combined symbol.
    pub provenance: Vec<(usize, u64)>,
    /// Sum of the combined symbols' degrees.
    pub component_degree: usize,
    pub payload: Option<bool>,
    /// Window used, for expanding-window combining.
    pub window: Option<usize>,
}

impl RelayCodedSymbol {
    /// Number of information bits in the combined symbol.
    pub fn degree(&self) -> usize {
        self.neighbors_by_source.values().map(Vec::len).sum()
    }

    pub fn neighbors(&self) -> impl Iterator<Item = u32> + '_ {
        self.neighbors_by_source.values().flatten().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RelayOutput {
    Symbol(RelayCodedSymbol),
    Stall,
}

/// Multinomial split of `degree` picks over sources.
///
/// `q` is sampled `degree` times, restricted to sources for which `allowed`
/// holds (the restricted mass is renormalized). With a `cap`, any source drawn
/// more than `cap` times is clamped and the excess redrawn over sources with
/// remaining capacity; if no such source has mass, the excess is dropped.
pub fn sample_source_counts<R, F>(
    q: &DegreeDistribution,
    degree: usize,
    cap: Option<usize>,
    allowed: F,
    rng: &mut R,
) -> Vec<usize>
where
    R: Rng + ?Sized,
    F: Fn(usize) -> bool,
{
    let s = q.max_degree();
    let mut counts = vec![0usize; s];
    for _ in 0..degree {
        match q.sample_restricted(rng, &allowed) {
            Some(i) => counts[i - 1] += 1,
            None => break,
        }
    }
    if let Some(cap) = cap {
        let mut excess = 0;
        for c in counts.iter_mut() {
            if *c > cap {
                excess += *c - cap;
                *c = cap;
            }
        }
        for _ in 0..excess {
            let pick = q.sample_restricted(rng, |i| allowed(i) && counts[i - 1] < cap);
            match pick {
                Some(i) => counts[i - 1] += 1,
                None => break,
            }
        }
    }
    counts
}

/// A relay with its per-link buffers.
#[derive(Debug, Clone)]
pub struct Relay {
    cfg: RelayConfig,
    buffers: Vec<LinkBuffer>,
    /// Current-round arrivals for the conventional scheme.
    arrivals: Vec<Option<SourceCodedSymbol>>,
}

impl Relay {
    pub fn new(cfg: RelayConfig) -> Result<Self, RelayError> {
        cfg.validate()?;
        let s = cfg.num_sources();
        let mode = match cfg.scheme {
            RelayScheme::ShiftBuffer => BufferMode::Shift,
            RelayScheme::SlotBuffer => BufferMode::Slot,
            RelayScheme::OneBit | RelayScheme::Conventional => BufferMode::OneBit,
        };
        let buffers = (1..=s).map(|i| LinkBuffer::new(i, cfg.depth, mode)).collect();
        Ok(Self {
            cfg,
            buffers,
            arrivals: vec![None; s],
        })
    }

    pub fn config(&self) -> &RelayConfig {
        &self.cfg
    }

    pub fn buffers(&self) -> &[LinkBuffer] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [LinkBuffer] {
        &mut self.buffers
    }

    /// Source phase of round `round`: `sym` is what arrived from `source_id`
    /// (`None` if the link erased it).
    pub fn receive(
        &mut self,
        source_id: usize,
        sym: Option<SourceCodedSymbol>,
        round: u64,
    ) -> Result<(), RelayError> {
        let buf = &mut self.buffers[source_id - 1];
        match self.cfg.scheme {
            RelayScheme::ShiftBuffer => {
                if let Some(sym) = sym {
                    buf.push_shift(sym)?;
                }
            }
            RelayScheme::SlotBuffer => {
                buf.store_slot(sym, round)?;
            }
            RelayScheme::OneBit => {
                buf.store_one_bit(sym)?;
            }
            RelayScheme::Conventional => {
                self.arrivals[source_id - 1] = sym;
            }
        }
        Ok(())
    }

    /// True once every buffer is filled (always true for the conventional
    /// scheme, which has no fill delay).
    pub fn is_ready(&self) -> bool {
        self.cfg.scheme == RelayScheme::Conventional || self.buffers.iter().all(LinkBuffer::is_full)
    }

    /// Relay phase of round `round`, dispatching on the configured scheme.
    pub fn produce<R: Rng + ?Sized>(&self, round: u64, rng: &mut R) -> Result<RelayOutput, RelayError> {
        if self.cfg.windows.is_some() {
            return self.combine_expanding_window(round, rng).map(RelayOutput::Symbol);
        }
        match self.cfg.scheme {
            RelayScheme::ShiftBuffer => self.combine_shift(round, rng).map(RelayOutput::Symbol),
            RelayScheme::SlotBuffer => self.combine_slot(round, rng).map(RelayOutput::Symbol),
            RelayScheme::OneBit => self.combine_one_bit(round, rng).map(RelayOutput::Symbol),
            RelayScheme::Conventional => Ok(self.combine_conventional(round, rng)),
        }
    }

    fn require_full(&self) -> Result<(), RelayError> {
        if self.buffers.iter().all(LinkBuffer::is_full) {
            Ok(())
        } else {
            Err(RelayError::BuffersNotFull)
        }
    }

    /// Lossless combining: `d ~ Γ`, counts `d_i` from `q`, then the newest
    /// `d_i` entries of each buffer.
    pub fn combine_shift<R: Rng + ?Sized>(&self, round: u64, rng: &mut R) -> Result<RelayCodedSymbol, RelayError> {
        self.require_full()?;
        let degree = self.cfg.gamma.sample(rng);
        let counts = sample_source_counts(&self.cfg.q, degree, Some(self.cfg.depth), |_| true, rng);
        Ok(self.take_shift(round, &counts, None))
    }

    /// Lossy combining: as [`Relay::combine_shift`] but the picks of buffer
    /// `i` are slots `u_1..u_{d_i}` walking back from this round's slot.
    pub fn combine_slot<R: Rng + ?Sized>(&self, round: u64, rng: &mut R) -> Result<RelayCodedSymbol, RelayError> {
        self.require_full()?;
        let degree = self.cfg.gamma.sample(rng);
        let counts = sample_source_counts(&self.cfg.q, degree, Some(self.cfg.depth), |_| true, rng);
        Ok(self.take_slot(round, &counts, None))
    }

    /// One-bit buffers: `d ~ Γ` distinct sources drawn from `q` without
    /// replacement, each contributing its buffered symbol.
    pub fn combine_one_bit<R: Rng + ?Sized>(&self, round: u64, rng: &mut R) -> Result<RelayCodedSymbol, RelayError> {
        self.require_full()?;
        let degree = self.cfg.gamma.sample(rng);
        let mut chosen = vec![false; self.cfg.num_sources()];
        for _ in 0..degree {
            match self.cfg.q.sample_restricted(rng, |i| !chosen[i - 1]) {
                Some(i) => chosen[i - 1] = true,
                None => break,
            }
        }
        let picks = chosen
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .filter_map(|(i, _)| self.buffers[i].get(1));
        Ok(self.assemble(round, picks, None))
    }

    /// Bufferless combining of the current round's arrivals: `d ~ Γ` distinct
    /// sources chosen uniformly. An erased pick either stalls the relay or,
    /// under [`ErasurePolicy::Reselect`], the choice is made among the
    /// received symbols only.
    pub fn combine_conventional<R: Rng + ?Sized>(&self, round: u64, rng: &mut R) -> RelayOutput {
        let s = self.cfg.num_sources();
        let degree = self.cfg.gamma.sample(rng).min(s);
        let chosen: Vec<usize> = match self.cfg.policy {
            ErasurePolicy::Stall => {
                let picks: Vec<usize> = index::sample(rng, s, degree).into_vec();
                if picks.iter().any(|&i| self.arrivals[i].is_none()) {
                    return RelayOutput::Stall;
                }
                picks
            }
            ErasurePolicy::Reselect => {
                let received: Vec<usize> = (0..s).filter(|&i| self.arrivals[i].is_some()).collect();
                if received.is_empty() {
                    return RelayOutput::Stall;
                }
                let take = degree.min(received.len());
                index::sample(rng, received.len(), take)
                    .into_iter()
                    .map(|k| received[k])
                    .collect()
            }
        };
        let mut chosen = chosen;
        chosen.sort_unstable();
        let picks = chosen.iter().filter_map(|&i| self.arrivals[i].as_ref());
        RelayOutput::Symbol(self.assemble(round, picks, None))
    }

    /// Expanding-window combining: window `j ~ θ`, `d ~ Γ_jW`, counts from `q`
    /// restricted to `ϖ_j`, then buffer picks as for the configured scheme.
    pub fn combine_expanding_window<R: Rng + ?Sized>(
        &self,
        round: u64,
        rng: &mut R,
    ) -> Result<RelayCodedSymbol, RelayError> {
        let w = self.cfg.windows.as_ref().ok_or(RelayError::WindowsNotConfigured)?;
        self.require_full()?;
        let window = w.theta.sample(rng);
        let members = &w.members[window - 1];
        let degree = w.gammas[window - 1].sample(rng);
        let counts = sample_source_counts(
            &self.cfg.q,
            degree,
            Some(self.cfg.depth),
            |i| members.binary_search(&i).is_ok(),
            rng,
        );
        Ok(match self.cfg.scheme {
            RelayScheme::SlotBuffer => self.take_slot(round, &counts, Some(window)),
            _ => self.take_shift(round, &counts, Some(window)),
        })
    }

    fn take_shift(&self, round: u64, counts: &[usize], window: Option<usize>) -> RelayCodedSymbol {
        let picks = counts
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| (1..=c).filter_map(move |m| self.buffers[i].get(m)));
        self.assemble(round, picks, window)
    }

    fn take_slot(&self, round: u64, counts: &[usize], window: Option<usize>) -> RelayCodedSymbol {
        let depth = self.cfg.depth;
        let current = class_of_round(round, depth);
        let picks = counts.iter().enumerate().flat_map(move |(i, &c)| {
            slot_walk(current, depth, c).filter_map(move |u| self.buffers[i].get(u))
        });
        self.assemble(round, picks, window)
    }

    fn assemble<'a>(
        &self,
        round: u64,
        picks: impl Iterator<Item = &'a SourceCodedSymbol>,
        window: Option<usize>,
    ) -> RelayCodedSymbol {
        let layout = &self.cfg.layout;
        let mut neighbors_by_source: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
        let mut provenance = Vec::new();
        let mut component_degree = 0;
        let mut payload = Some(false);
        for sym in picks {
            provenance.push((sym.source_id, sym.round));
            component_degree += sym.neighbors.len();
            payload = match (payload, sym.payload) {
                (Some(a), Some(b)) => Some(a ^ b),
                _ => None,
            };
            let offset = layout.offset(sym.source_id) as u32;
            let entry = neighbors_by_source.entry(sym.source_id).or_default();
            let incoming = sym.neighbors.iter().map(|&b| b + offset);
            *entry = symmetric_difference(entry, incoming);
        }
        neighbors_by_source.retain(|_, v| !v.is_empty());
        if provenance.is_empty() {
            payload = None;
        }
        RelayCodedSymbol {
            relay_id: self.cfg.relay_id,
            round,
            neighbors_by_source,
            provenance,
            component_degree,
            payload,
            window,
        }
    }
}

/// Merge of two sorted id lists keeping ids present in exactly one.
fn symmetric_difference(a: &[u32], b: impl Iterator<Item = u32>) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len());
    let mut a = a.iter().copied().peekable();
    let mut b = b.peekable();
    loop {
        match (a.peek(), b.peek()) {
            (Some(&x), Some(&y)) if x == y => {
                a.next();
                b.next();
            }
            (Some(&x), Some(&y)) if x < y => {
                out.push(x);
                a.next();
            }
            (Some(_), Some(&y)) => {
                out.push(y);
                b.next();
            }
            (Some(&x), None) => {
                out.push(x);
                a.next();
            }
            (None, Some(&y)) => {
                out.push(y);
                b.next();
            }
            (None, None) => break,
        }
    }
    out
}

/// Uniform selection vector over `s` sources.
pub fn uniform_selection(s: usize) -> DegreeDistribution {
    DegreeDistribution::uniform(s, crate::dist::Perspective::Node, DistKind::Selection)
}
