//! Destination-side decoding graph and peeling decoder.
//!
//! Checks can be added at any time; [`DecodingGraph::peel`] resumes from the
//! current state, so a single trial produces a whole erasure-rate curve.

use std::collections::VecDeque;

use rand::Rng;
use thiserror::Error;

use crate::relay::RelayCodedSymbol;
use crate::source::BitLayout;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecoderError {
    #[error("unknown scope {0}")]
    UnknownScope(Scope),
    #[error("payload tracking is disabled")]
    PayloadDisabled,
    #[error("truth vector has {got} bits, graph has {expected}")]
    TruthLength { expected: usize, got: usize },
}

/// Subset of variables an erasure rate refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scope {
    Overall,
    /// 1-based source id.
    Source(usize),
    /// 1-based importance class.
    Class(usize),
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scope::Overall => write!(f, "overall"),
            Scope::Source(i) => write!(f, "source:{i}"),
            Scope::Class(i) => write!(f, "class:{i}"),
        }
    }
}

impl std::str::FromStr for Scope {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let index = |v: &str| v.parse::<usize>().map_err(|e| format!("bad scope {s:?}: {e}"));
        match s.split_once(':') {
            None if s == "overall" => Ok(Scope::Overall),
            Some(("source", v)) => Ok(Scope::Source(index(v)?)),
            Some(("class", v)) => Ok(Scope::Class(index(v)?)),
            _ => Err(format!("bad scope {s:?}")),
        }
    }
}

#[derive(Debug, Clone)]
struct Check {
    neighbors: Vec<u32>,
    residual: u32,
    /// XOR of the ids of still-unrecovered neighbors; equals the last one
    /// once `residual == 1`.
    pending: u32,
    value: bool,
}

/// Snapshot of recovery state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeReport {
    pub k: usize,
    pub unrecovered: usize,
    pub per_source_unrecovered: Vec<usize>,
    pub per_source_size: Vec<usize>,
    pub per_class_unrecovered: Vec<usize>,
    pub per_class_size: Vec<usize>,
    /// Variables released by peeling so far.
    pub peeling_steps: usize,
    pub checks: usize,
}

impl DecodeReport {
    pub fn erasure_rate(&self, scope: Scope) -> Result<f64, DecoderError> {
        let ratio = |u: usize, n: usize| if n == 0 { 0.0 } else { u as f64 / n as f64 };
        let pick = |unrec: &[usize], size: &[usize], i: usize| {
            i.checked_sub(1)
                .and_then(|x| Some(ratio(*unrec.get(x)?, size[x])))
                .ok_or(DecoderError::UnknownScope(scope))
        };
        match scope {
            Scope::Overall => Ok(ratio(self.unrecovered, self.k)),
            Scope::Source(i) => pick(&self.per_source_unrecovered, &self.per_source_size, i),
            Scope::Class(i) => pick(&self.per_class_unrecovered, &self.per_class_size, i),
        }
    }

    /// Every scope the report covers: overall, then sources, then classes.
    pub fn scopes(&self) -> Vec<Scope> {
        let mut out = vec![Scope::Overall];
        out.extend((1..=self.per_source_size.len()).map(Scope::Source));
        out.extend((1..=self.per_class_size.len()).map(Scope::Class));
        out
    }
}

#[derive(Debug, Clone)]
pub struct DecodingGraph {
    layout: BitLayout,
    /// Importance class per source (1-based).
    source_class: Vec<usize>,
    num_classes: usize,
    checks: Vec<Check>,
    var_checks: Vec<Vec<u32>>,
    /// Number of checks ever connected to each variable.
    connections: Vec<u32>,
    recovered: Vec<bool>,
    values: Vec<bool>,
    queue: VecDeque<u32>,
    track_payload: bool,
    steps: usize,
    unrecovered: usize,
}

impl DecodingGraph {
    /// Graph over the bits of `layout`. Every source is in class 1.
    pub fn new(layout: BitLayout, track_payload: bool) -> Self {
        let classes = vec![1; layout.num_sources()];
        Self::with_classes(layout, classes, track_payload)
    }

    /// Graph with an importance class (1-based) per source.
    pub fn with_classes(layout: BitLayout, source_class: Vec<usize>, track_payload: bool) -> Self {
        assert_eq!(source_class.len(), layout.num_sources(), "one class per source");
        assert!(source_class.iter().all(|&c| c >= 1), "classes are 1-based");
        let k = layout.total();
        let num_classes = source_class.iter().copied().max().unwrap_or(0);
        Self {
            layout,
            source_class,
            num_classes,
            checks: Vec::new(),
            var_checks: vec![Vec::new(); k],
            connections: vec![0; k],
            recovered: vec![false; k],
            values: vec![false; k],
            queue: VecDeque::new(),
            track_payload,
            steps: 0,
            unrecovered: k,
        }
    }

    pub fn k(&self) -> usize {
        self.recovered.len()
    }

    pub fn num_checks(&self) -> usize {
        self.checks.len()
    }

    pub fn is_recovered(&self, id: u32) -> bool {
        self.recovered[id as usize]
    }

    pub fn recovered(&self) -> &[bool] {
        &self.recovered
    }

    pub fn is_complete(&self) -> bool {
        self.unrecovered == 0
    }

    /// Class of global variable `id`.
    pub fn class_of(&self, id: u32) -> usize {
        self.source_class[self.layout.source_of(id) - 1]
    }

    pub fn add_check(&mut self, sym: &RelayCodedSymbol) {
        let neighbors: Vec<u32> = sym.neighbors().collect();
        self.add_check_ids(&neighbors, sym.payload);
    }

    /// Inserts a check over distinct global ids. Recovered neighbors are
    /// folded in immediately; a residual degree-1 check is queued but not
    /// released until the next [`DecodingGraph::peel`].
    pub fn add_check_ids(&mut self, neighbors: &[u32], payload: Option<bool>) {
        let id = self.checks.len() as u32;
        let mut value = payload.unwrap_or(false);
        let mut residual = 0;
        let mut pending = 0;
        for &v in neighbors {
            let vi = v as usize;
            self.connections[vi] += 1;
            if self.recovered[vi] {
                value ^= self.values[vi];
            } else {
                residual += 1;
                pending ^= v;
                self.var_checks[vi].push(id);
            }
        }
        if residual == 1 {
            self.queue.push_back(id);
        }
        self.checks.push(Check {
            neighbors: neighbors.to_vec(),
            residual,
            pending,
            value,
        });
    }

    fn release(&mut self, c: u32) {
        let check = &self.checks[c as usize];
        if check.residual != 1 {
            return;
        }
        let v = check.pending;
        let value = check.value;
        let vi = v as usize;
        self.recovered[vi] = true;
        self.values[vi] = value;
        self.unrecovered -= 1;
        self.steps += 1;
        for &other in &std::mem::take(&mut self.var_checks[vi]) {
            let ch = &mut self.checks[other as usize];
            ch.residual -= 1;
            ch.pending ^= v;
            ch.value ^= value;
            if ch.residual == 1 {
                self.queue.push_back(other);
            }
        }
    }

    /// Releases degree-1 checks in FIFO order until none remain.
    pub fn peel(&mut self) -> DecodeReport {
        while let Some(c) = self.queue.pop_front() {
            self.release(c);
        }
        self.report()
    }

    /// As [`DecodingGraph::peel`], but each step picks a uniformly random
    /// pending degree-1 check.
    pub fn peel_random_order<R: Rng + ?Sized>(&mut self, rng: &mut R) -> DecodeReport {
        while !self.queue.is_empty() {
            let i = rng.gen_range(0..self.queue.len());
            let c = self.queue.swap_remove_back(i).expect("index in range");
            self.release(c);
        }
        self.report()
    }

    pub fn report(&self) -> DecodeReport {
        let s = self.layout.num_sources();
        let mut per_source_unrecovered = vec![0; s];
        let mut per_class_unrecovered = vec![0; self.num_classes];
        let mut per_class_size = vec![0; self.num_classes];
        for src in 1..=s {
            let off = self.layout.offset(src);
            let len = self.layout.block_len(src);
            let unrec = self.recovered[off..off + len].iter().filter(|r| !**r).count();
            per_source_unrecovered[src - 1] = unrec;
            let class = self.source_class[src - 1] - 1;
            per_class_unrecovered[class] += unrec;
            per_class_size[class] += len;
        }
        DecodeReport {
            k: self.k(),
            unrecovered: self.unrecovered,
            per_source_unrecovered,
            per_source_size: (1..=s).map(|i| self.layout.block_len(i)).collect(),
            per_class_unrecovered,
            per_class_size,
            peeling_steps: self.steps,
            checks: self.checks.len(),
        }
    }

    /// Variables in `scope` that no check has ever touched.
    pub fn unconnected(&self, scope: Scope) -> Result<(usize, usize), DecoderError> {
        let in_scope: Box<dyn Fn(u32) -> bool + '_> = match scope {
            Scope::Overall => Box::new(|_| true),
            Scope::Source(i) if (1..=self.layout.num_sources()).contains(&i) => {
                Box::new(move |v| self.layout.source_of(v) == i)
            }
            Scope::Class(i) if (1..=self.num_classes).contains(&i) => Box::new(move |v| self.class_of(v) == i),
            _ => return Err(DecoderError::UnknownScope(scope)),
        };
        let mut total = 0;
        let mut zero = 0;
        for (v, &c) in self.connections.iter().enumerate() {
            if in_scope(v as u32) {
                total += 1;
                if c == 0 {
                    zero += 1;
                }
            }
        }
        Ok((zero, total))
    }

    /// Whether every recovered variable's decoded value matches `truth`
    /// (global bit order).
    pub fn verify_payload(&self, truth: &[bool]) -> Result<bool, DecoderError> {
        if !self.track_payload {
            return Err(DecoderError::PayloadDisabled);
        }
        if truth.len() != self.k() {
            return Err(DecoderError::TruthLength {
                expected: self.k(),
                got: truth.len(),
            });
        }
        Ok(self
            .recovered
            .iter()
            .zip(&self.values)
            .zip(truth)
            .all(|((&r, &v), &t)| !r || v == t))
    }

    /// Original neighbor list of check `index`.
    pub fn check_neighbors(&self, index: usize) -> &[u32] {
        &self.checks[index].neighbors
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::DegreeDistribution;
    use crate::source::{SourceConfig, SourceEncoder};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn graph(k: usize) -> DecodingGraph {
        DecodingGraph::new(BitLayout::new(&[k]), false)
    }

    /// Variables recoverable by GF(2) elimination: those whose unit vector
    /// lies in the row space, i.e. appears as a row of the reduced form.
    fn gf2_recoverable(k: usize, rows: &[Vec<u32>]) -> Vec<bool> {
        let mut m: Vec<u32> = rows.iter().map(|r| r.iter().fold(0, |a, &v| a | 1 << v)).collect();
        let mut rank = 0;
        for col in 0..k {
            let Some(p) = (rank..m.len()).find(|&r| m[r] >> col & 1 == 1) else {
                continue;
            };
            m.swap(rank, p);
            for r in 0..m.len() {
                if r != rank && m[r] >> col & 1 == 1 {
                    m[r] ^= m[rank];
                }
            }
            rank += 1;
        }
        (0..k).map(|v| m[..rank].contains(&(1 << v))).collect()
    }

    fn random_rows(rng: &mut ChaCha8Rng, k: usize, n: usize) -> Vec<Vec<u32>> {
        (0..n)
            .map(|_| {
                let d = rng.gen_range(1..=3.min(k));
                let mut r = rand::seq::index::sample(rng, k, d).into_vec();
                r.sort_unstable();
                r.into_iter().map(|x| x as u32).collect()
            })
            .collect()
    }

    #[test]
    fn hand_traced_examples() {
        let mut g = graph(2);
        g.add_check_ids(&[0], None);
        g.add_check_ids(&[0, 1], None);
        let r = g.peel();
        assert_eq!(r.unrecovered, 0);
        assert_eq!(r.peeling_steps, 2);

        let mut g = graph(2);
        g.add_check_ids(&[0, 1], None);
        assert_eq!(g.peel().unrecovered, 2);

        let rows = vec![vec![0], vec![0, 1], vec![1, 2], vec![2, 3]];
        let mut g = graph(4);
        for r in &rows {
            g.add_check_ids(r, None);
        }
        assert_eq!(g.peel().unrecovered, 0);
        assert_eq!(gf2_recoverable(4, &rows), vec![true; 4]);
    }

    #[test]
    fn inert_and_duplicate_checks() {
        let mut g = graph(3);
        g.add_check_ids(&[1], None);
        g.peel();
        g.add_check_ids(&[1], None);
        let r = g.peel();
        assert_eq!(r.checks, 2);
        assert_eq!(r.unrecovered, 2);
        assert_eq!(r.peeling_steps, 1);
        // A new check whose other neighbors are known is degree 1 at insertion.
        g.add_check_ids(&[1, 2], None);
        assert_eq!(g.peel().unrecovered, 1);
        assert!(g.is_recovered(2));
    }

    #[test]
    fn scopes_and_rates() {
        let layout = BitLayout::new(&[2, 4, 2]);
        let mut g = DecodingGraph::with_classes(layout, vec![1, 2, 2], false);
        let r = g.peel();
        assert_eq!(r.erasure_rate(Scope::Overall).unwrap(), 1.0);
        for id in [0u32, 2, 3] {
            g.add_check_ids(&[id], None);
        }
        let r = g.peel();
        assert_eq!(r.erasure_rate(Scope::Source(1)).unwrap(), 0.5);
        assert_eq!(r.erasure_rate(Scope::Source(2)).unwrap(), 0.5);
        assert_eq!(r.erasure_rate(Scope::Source(3)).unwrap(), 1.0);
        assert_eq!(r.erasure_rate(Scope::Class(2)).unwrap(), 4.0 / 6.0);
        assert_eq!(r.erasure_rate(Scope::Source(4)), Err(DecoderError::UnknownScope(Scope::Source(4))));
        assert!(r.erasure_rate(Scope::Class(0)).is_err());
        // Size-weighted per-source rates average to the overall rate.
        let weighted: f64 = (1..=3)
            .map(|i| r.erasure_rate(Scope::Source(i)).unwrap() * r.per_source_size[i - 1] as f64 / 8.0)
            .sum();
        assert!((weighted - r.erasure_rate(Scope::Overall).unwrap()).abs() < 1e-15);
        assert_eq!(g.unconnected(Scope::Source(3)).unwrap(), (2, 2));
        assert_eq!(g.unconnected(Scope::Class(1)).unwrap(), (1, 2));
        for s in r.scopes() {
            assert_eq!(s.to_string().parse::<Scope>().unwrap(), s);
        }
        for id in 0..8 {
            g.add_check_ids(&[id], None);
        }
        assert_eq!(g.peel().erasure_rate(Scope::Overall).unwrap(), 0.0);
    }

    #[test]
    fn payload_round_trip() {
        let k = 64;
        let omega = DegreeDistribution::robust_soliton(k, 0.1, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let bits: Vec<bool> = (0..k).map(|_| rng.gen()).collect();
        let enc = SourceEncoder::with_payload(SourceConfig::new(1, k, 1, omega).unwrap(), bits.clone()).unwrap();
        let mut g = DecodingGraph::new(BitLayout::new(&[k]), true);
        let mut n = 0;
        while !g.is_complete() {
            n += 1;
            let c = enc.encode_conventional(n, &mut rng).unwrap();
            g.add_check_ids(&c.neighbors, c.payload);
            g.peel();
            assert!(n < 10_000);
        }
        assert!(g.verify_payload(&bits).unwrap());
        let mut corrupt = bits.clone();
        corrupt[5] ^= true;
        assert!(!g.verify_payload(&corrupt).unwrap());
        assert!(matches!(graph(4).verify_payload(&[false; 4]), Err(DecoderError::PayloadDisabled)));
    }

    #[test]
    fn peeling_within_gf2_and_order_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let k = rng.gen_range(1..=16);
            let n = rng.gen_range(0..=2 * k);
            let rows = random_rows(&mut rng, k, n);
            let mut fifo = graph(k);
            let mut shuffled = graph(k);
            for r in &rows {
                fifo.add_check_ids(r, None);
                shuffled.add_check_ids(r, None);
            }
            fifo.peel();
            shuffled.peel_random_order(&mut rng);
            assert_eq!(fifo.recovered(), shuffled.recovered());
            let ml = gf2_recoverable(k, &rows);
            assert!(fifo.recovered().iter().zip(&ml).all(|(&p, &m)| !p || m));
        }
    }

    proptest! {
        #[test]
        fn adding_checks_is_monotone(seed in any::<u64>(), k in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = random_rows(&mut rng, k, 3 * k);
            let mut g = graph(k);
            let mut before = vec![false; k];
            for r in &rows {
                g.add_check_ids(r, None);
                g.peel();
                prop_assert!(before.iter().zip(g.recovered()).all(|(&b, &a)| !b || a));
                before = g.recovered().to_vec();
            }
        }

        #[test]
        fn incremental_equals_batch(seed in any::<u64>(), k in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = random_rows(&mut rng, k, 2 * k);
            let mut inc = graph(k);
            let mut batch = graph(k);
            for r in &rows {
                inc.add_check_ids(r, None);
                inc.peel();
                batch.add_check_ids(r, None);
            }
            batch.peel();
            prop_assert_eq!(inc.recovered(), batch.recovered());
        }
    }
}
