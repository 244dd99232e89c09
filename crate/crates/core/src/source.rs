//! LT encoding at the sources.
//!
//! The class-partitioned encoder splits a block of `K_i` bits into `D`
//! contiguous classes of `ξ_i = K_i / D` bits and, in round `n`, draws every
//! neighbor from class `mod(n-1, D) + 1`. Symbols from `D` consecutive rounds
//! therefore never share information bits, which is what lets a relay XOR
//! several of them without cancellation.

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

use crate::dist::DegreeDistribution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SourceError {
    #[error("invalid source config: {0}")]
    InvalidConfig(String),
    #[error("sampled degree {degree} exceeds class size {class_size}")]
    DegreeExceedsClass { degree: usize, class_size: usize },
    #[error("payload of {got} bits does not match block length {expected}")]
    PayloadLength { expected: usize, got: usize },
}

#[derive(Debug, Clone)]
pub struct SourceConfig {
    /// 1-based source id.
    pub source_id: usize,
    /// Information block length `K_i`.
    pub block_len: usize,
    /// Number of classes, equal to the relay buffer depth `D`.
    pub depth: usize,
    /// Check-node degree distribution `Ω(x)`, node perspective.
    pub omega: DegreeDistribution,
}

impl SourceConfig {
    pub fn new(
        source_id: usize,
        block_len: usize,
        depth: usize,
        omega: DegreeDistribution,
    ) -> Result<Self, SourceError> {
        let cfg = Self {
            source_id,
            block_len,
            depth,
            omega,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SourceError> {
        if self.source_id == 0 {
            return Err(SourceError::InvalidConfig("source ids start at 1".into()));
        }
        if self.depth == 0 {
            return Err(SourceError::InvalidConfig("depth must be >= 1".into()));
        }
        if self.block_len == 0 {
            return Err(SourceError::InvalidConfig("block length must be >= 1".into()));
        }
        if self.block_len % self.depth != 0 {
            return Err(SourceError::InvalidConfig(format!(
                "block length {} is not divisible by depth {}",
                self.block_len, self.depth
            )));
        }
        Ok(())
    }

    /// `ξ_i`, bits per class.
    pub fn class_size(&self) -> usize {
        self.block_len / self.depth
    }

    /// Local id range `[(ℓ-1)ξ, ℓξ)` owned by 1-based class `class`.
    pub fn class_range(&self, class: usize) -> std::ops::Range<usize> {
        let xi = self.class_size();
        (class - 1) * xi..class * xi
    }
}

/// One source-encoded symbol `c_i^n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceCodedSymbol {
    pub source_id: usize,
    pub round: u64,
    /// Class `v_ℓ` in `1..=D`; 0 for unpartitioned (conventional) encoding.
    pub class_index: usize,
    /// Sorted local information-bit ids.
    pub neighbors: Vec<u32>,
    pub payload: Option<bool>,
}

impl SourceCodedSymbol {
    pub fn degree(&self) -> usize {
        self.neighbors.len()
    }
}

/// Placement of every source's local bit ids in one global id space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitLayout {
    offsets: Vec<usize>,
    lens: Vec<usize>,
}

impl BitLayout {
    /// Source `i` (1-based) owns global ids `[Σ_{s<i} K_s, Σ_{s<=i} K_s)`.
    pub fn new(block_lens: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(block_lens.len());
        let mut acc = 0;
        for &k in block_lens {
            offsets.push(acc);
            acc += k;
        }
        Self {
            offsets,
            lens: block_lens.to_vec(),
        }
    }

    pub fn num_sources(&self) -> usize {
        self.lens.len()
    }

    /// `K = Σ K_i`.
    pub fn total(&self) -> usize {
        self.lens.iter().sum()
    }

    pub fn block_len(&self, source_id: usize) -> usize {
        self.lens[source_id - 1]
    }

    pub fn offset(&self, source_id: usize) -> usize {
        self.offsets[source_id - 1]
    }

    pub fn global(&self, source_id: usize, local: u32) -> u32 {
        (self.offsets[source_id - 1] + local as usize) as u32
    }

    /// 1-based source owning global id `id`.
    pub fn source_of(&self, id: u32) -> usize {
        self.offsets.partition_point(|&o| o <= id as usize)
    }
}

/// `mod(n - 1, D) + 1`.
pub fn class_of_round(round: u64, depth: usize) -> usize {
    debug_assert!(round >= 1 && depth >= 1);
    ((round - 1) % depth as u64) as usize + 1
}

/// Per-source LT encoder.
#[derive(Debug, Clone)]
pub struct SourceEncoder {
    cfg: SourceConfig,
    bits: Option<Vec<bool>>,
    clamp_degree: bool,
}

impl SourceEncoder {
    /// Graph-only encoder: symbols carry neighbor sets but no payload.
    pub fn new(cfg: SourceConfig) -> Result<Self, SourceError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            bits: None,
            clamp_degree: true,
        })
    }

    /// Encoder that also XORs the given information bits into each symbol.
    pub fn with_payload(cfg: SourceConfig, bits: Vec<bool>) -> Result<Self, SourceError> {
        cfg.validate()?;
        if bits.len() != cfg.block_len {
            return Err(SourceError::PayloadLength {
                expected: cfg.block_len,
                got: bits.len(),
            });
        }
        Ok(Self {
            cfg,
            bits: Some(bits),
            clamp_degree: true,
        })
    }

    /// When disabled, a degree above the class size is an error instead of
    /// being clamped.
    pub fn clamp_degree(mut self, clamp: bool) -> Self {
        self.clamp_degree = clamp;
        self
    }

    pub fn config(&self) -> &SourceConfig {
        &self.cfg
    }

    pub fn bits(&self) -> Option<&[bool]> {
        self.bits.as_deref()
    }

    /// Class-partitioned encoding for round `n`.
    pub fn encode_round<R: Rng + ?Sized>(
        &self,
        round: u64,
        rng: &mut R,
    ) -> Result<SourceCodedSymbol, SourceError> {
        let class = class_of_round(round, self.cfg.depth);
        let range = self.cfg.class_range(class);
        let degree = self.draw_degree(range.len(), rng)?;
        let neighbors = pick(range.start, range.len(), degree, rng);
        Ok(self.finish(round, class, neighbors))
    }

    /// Unpartitioned LT encoding over the whole block.
    pub fn encode_conventional<R: Rng + ?Sized>(
        &self,
        round: u64,
        rng: &mut R,
    ) -> Result<SourceCodedSymbol, SourceError> {
        let k = self.cfg.block_len;
        let degree = self.draw_degree(k, rng)?;
        let neighbors = pick(0, k, degree, rng);
        Ok(self.finish(round, 0, neighbors))
    }

    fn draw_degree<R: Rng + ?Sized>(&self, limit: usize, rng: &mut R) -> Result<usize, SourceError> {
        let degree = self.cfg.omega.sample(rng);
        if degree > limit {
            if self.clamp_degree {
                return Ok(limit);
            }
            return Err(SourceError::DegreeExceedsClass {
                degree,
                class_size: limit,
            });
        }
        Ok(degree)
    }

    fn finish(&self, round: u64, class_index: usize, neighbors: Vec<u32>) -> SourceCodedSymbol {
        let payload = self
            .bits
            .as_ref()
            .map(|bits| neighbors.iter().fold(false, |acc, &b| acc ^ bits[b as usize]));
        SourceCodedSymbol {
            source_id: self.cfg.source_id,
            round,
            class_index,
            neighbors,
            payload,
        }
    }
}

fn pick<R: Rng + ?Sized>(start: usize, len: usize, amount: usize, rng: &mut R) -> Vec<u32> {
    let mut out: Vec<u32> = index::sample(rng, len, amount)
        .into_iter()
        .map(|i| (start + i) as u32)
        .collect();
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{DistKind, Perspective};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn omega(c: &[f64]) -> DegreeDistribution {
        DegreeDistribution::from_coefficients(c, Perspective::Node, DistKind::Check).unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn class_schedule() {
        assert_eq!(class_of_round(1, 4), 1);
        assert_eq!(class_of_round(5, 4), 1);
        assert_eq!(class_of_round(4, 4), 4);
        assert_eq!(class_of_round(6, 4), 2);
        assert_eq!(class_of_round(17, 1), 1);
    }

    #[test]
    fn layout_maps_ids() {
        let l = BitLayout::new(&[4, 2, 6]);
        assert_eq!(l.total(), 12);
        assert_eq!(l.global(2, 1), 5);
        assert_eq!(l.global(3, 0), 6);
        assert_eq!(l.source_of(0), 1);
        assert_eq!(l.source_of(3), 1);
        assert_eq!(l.source_of(4), 2);
        assert_eq!(l.source_of(11), 3);
    }

    #[test]
    fn rejects_bad_configs() {
        let o = omega(&[1.0]);
        assert!(SourceConfig::new(1, 10, 4, o.clone()).is_err());
        assert!(SourceConfig::new(0, 8, 4, o.clone()).is_err());
        assert!(SourceConfig::new(1, 8, 0, o.clone()).is_err());
        assert!(SourceConfig::new(1, 8, 4, o).is_ok());
    }

    #[test]
    fn forced_single_bit_classes() {
        let cfg = SourceConfig::new(1, 4, 4, omega(&[0.2, 0.3, 0.5])).unwrap();
        let enc = SourceEncoder::new(cfg).unwrap();
        let mut r = rng();
        for n in 1..=12u64 {
            let s = enc.encode_round(n, &mut r).unwrap();
            let class = class_of_round(n, 4);
            assert_eq!(s.class_index, class);
            assert_eq!(s.neighbors, vec![(class - 1) as u32]);
        }
    }

    #[test]
    fn degree_one_draws_from_round_class() {
        let cfg = SourceConfig::new(1, 8, 4, omega(&[1.0])).unwrap();
        let enc = SourceEncoder::new(cfg).unwrap();
        let mut r = rng();
        let mut seen = [0usize; 8];
        for _ in 0..2000 {
            let s = enc.encode_round(3, &mut r).unwrap();
            assert_eq!(s.neighbors.len(), 1);
            seen[s.neighbors[0] as usize] += 1;
        }
        assert_eq!(&seen[..4], &[0, 0, 0, 0]);
        assert!(seen[4] > 800 && seen[5] > 800);
        assert_eq!(&seen[6..], &[0, 0]);
    }

    #[test]
    fn clamp_or_reject_overflow() {
        let cfg = SourceConfig::new(1, 8, 4, omega(&[0.0, 0.0, 1.0])).unwrap();
        let enc = SourceEncoder::new(cfg.clone()).unwrap();
        let s = enc.encode_round(1, &mut rng()).unwrap();
        assert_eq!(s.neighbors, vec![0, 1]);
        let strict = SourceEncoder::new(cfg).unwrap().clamp_degree(false);
        assert_eq!(
            strict.encode_round(1, &mut rng()),
            Err(SourceError::DegreeExceedsClass { degree: 3, class_size: 2 })
        );
    }

    #[test]
    fn uniform_selection_within_class() {
        // ξ = 10, Ω uniform on {1,2,3}: each bit of the class is hit with
        // probability h̄/ξ = 0.2 per symbol.
        let cfg = SourceConfig::new(1, 40, 4, DegreeDistribution::uniform(3, Perspective::Node, DistKind::Check)).unwrap();
        let enc = SourceEncoder::new(cfg).unwrap();
        let mut r = rng();
        let trials = 100_000;
        let mut hits = [0usize; 40];
        for _ in 0..trials {
            for b in enc.encode_round(2, &mut r).unwrap().neighbors {
                hits[b as usize] += 1;
            }
        }
        let p = 0.2;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for (b, &h) in hits.iter().enumerate() {
            if (10..20).contains(&b) {
                assert!((h as f64 - trials as f64 * p).abs() < 3.0 * sigma + 1.0, "bit {b}: {h}");
            } else {
                assert_eq!(h, 0);
            }
        }
    }

    #[test]
    fn conventional_encoding() {
        let mut r = rng();
        let enc = SourceEncoder::new(SourceConfig::new(2, 1, 1, omega(&[1.0])).unwrap()).unwrap();
        let s = enc.encode_conventional(1, &mut r).unwrap();
        assert_eq!((s.neighbors.clone(), s.class_index, s.source_id), (vec![0], 0, 2));

        let enc = SourceEncoder::new(SourceConfig::new(1, 2, 1, omega(&[0.0, 1.0])).unwrap()).unwrap();
        assert_eq!(enc.encode_conventional(1, &mut r).unwrap().neighbors, vec![0, 1]);

        let o = omega(&[0.1, 0.5, 0.15, 0.25]);
        let enc = SourceEncoder::new(SourceConfig::new(1, 64, 1, o.clone()).unwrap()).unwrap();
        let n = 1_000_000;
        let mut hist = [0usize; 5];
        for _ in 0..n {
            hist[enc.encode_conventional(1, &mut r).unwrap().degree()] += 1;
        }
        for d in 1..=4 {
            let p = o.mass(d);
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((hist[d] as f64 - n as f64 * p).abs() < 3.0 * sigma, "degree {d}");
        }
    }

    #[test]
    fn classes_partition_block_and_payload_matches() {
        let o = DegreeDistribution::robust_soliton(20, 0.1, 0.5).unwrap();
        let cfg = SourceConfig::new(1, 80, 4, o).unwrap();
        let mut r = rng();
        let bits: Vec<bool> = (0..80).map(|_| r.gen()).collect();
        let enc = SourceEncoder::with_payload(cfg.clone(), bits.clone()).unwrap();
        for start in 1..20u64 {
            let syms: Vec<_> = (start..start + 4).map(|n| enc.encode_round(n, &mut r).unwrap()).collect();
            let mut classes: Vec<_> = syms.iter().map(|s| s.class_index).collect();
            classes.sort();
            assert_eq!(classes, vec![1, 2, 3, 4]);
            for (a, sa) in syms.iter().enumerate() {
                let range = cfg.class_range(sa.class_index);
                assert!(sa.neighbors.iter().all(|&b| range.contains(&(b as usize))));
                let xor = sa.neighbors.iter().fold(false, |acc, &b| acc ^ bits[b as usize]);
                assert_eq!(sa.payload, Some(xor));
                for sb in &syms[a + 1..] {
                    assert!(sa.neighbors.iter().all(|b| !sb.neighbors.contains(b)));
                }
            }
        }
        assert!(SourceEncoder::with_payload(cfg, vec![false; 3]).is_err());
    }
}
