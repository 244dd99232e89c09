//! Degree, selection and window-assignment distributions.
//!
//! A [`DegreeDistribution`] stores probability mass densely from index 1 up to
//! `d_max`. The same representation backs check-node distributions, relay
//! distributions, source-selection vectors and window assignments; the
//! [`Perspective`] decides how the polynomial is evaluated.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

/// Absolute tolerance on the total mass accepted at construction.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("distribution has no coefficients")]
    Empty,
    #[error("negative probability mass {value} at index {index}")]
    NegativeMass { index: usize, value: f64 },
    #[error("coefficients sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("zero mass at maximum index {0}")]
    ZeroTail(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("expected {expected:?} perspective, got {actual:?}")]
    WrongPerspective {
        expected: Perspective,
        actual: Perspective,
    },
    #[error("argument {0} outside [0, 1]")]
    DomainError(f64),
    #[error("cannot parse distribution: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Perspective {
    /// `Σ d_j x^j`
    Node,
    /// `Σ d_j x^(j-1)`
    Edge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistKind {
    Check,
    Relay,
    Selection,
    WindowAssignment,
    Importance,
}

/// Probability mass over indices `1..=d_max`, immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeDistribution {
    coeffs: Vec<f64>,
    cdf: Vec<f64>,
    perspective: Perspective,
    kind: DistKind,
}

impl DegreeDistribution {
    /// Validates `coeffs` (entry `k` is the mass at index `k + 1`).
    ///
    /// The mass at the last index must be positive; use
    /// [`DegreeDistribution::with_zero_tail`] for vectors with trailing zeros.
    pub fn from_coefficients(
        coeffs: &[f64],
        perspective: Perspective,
        kind: DistKind,
    ) -> Result<Self, DistError> {
        Self::build(coeffs, perspective, kind, false)
    }

    /// Same as [`DegreeDistribution::from_coefficients`] but keeps trailing
    /// zero mass, so that e.g. a selection vector keeps one entry per source.
    pub fn with_zero_tail(
        coeffs: &[f64],
        perspective: Perspective,
        kind: DistKind,
    ) -> Result<Self, DistError> {
        Self::build(coeffs, perspective, kind, true)
    }

    /// Normalizes arbitrary non-negative weights. Intended for published
    /// coefficients that were rounded to a few digits.
    pub fn from_weights(
        weights: &[f64],
        perspective: Perspective,
        kind: DistKind,
    ) -> Result<Self, DistError> {
        check_entries(weights)?;
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(DistError::NotNormalized { sum: total });
        }
        let scaled: Vec<f64> = weights.iter().map(|w| w / total).collect();
        Self::build(&scaled, perspective, kind, true)
    }

    fn build(
        coeffs: &[f64],
        perspective: Perspective,
        kind: DistKind,
        allow_zero_tail: bool,
    ) -> Result<Self, DistError> {
        check_entries(coeffs)?;
        let sum: f64 = coeffs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(DistError::NotNormalized { sum });
        }
        if !allow_zero_tail && coeffs[coeffs.len() - 1] == 0.0 {
            return Err(DistError::ZeroTail(coeffs.len()));
        }
        let coeffs: Vec<f64> = coeffs.iter().map(|c| c / sum).collect();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = coeffs
            .iter()
            .map(|c| {
                acc += c;
                acc
            })
            .collect();
        // Guard the inverse-CDF lookup against rounding in the last partial sum.
        // Zero-mass trailing entries share the value and are never selected.
        if let Some(last_positive) = coeffs.iter().rposition(|c| *c > 0.0) {
            cdf[last_positive..].iter_mut().for_each(|c| *c = 1.0);
        }
        Ok(Self {
            coeffs,
            cdf,
            perspective,
            kind,
        })
    }

    /// Point mass at `degree`.
    pub fn point_mass(degree: usize, perspective: Perspective, kind: DistKind) -> Self {
        assert!(degree >= 1, "degrees start at 1");
        let mut coeffs = vec![0.0; degree];
        coeffs[degree - 1] = 1.0;
        Self::build(&coeffs, perspective, kind, false).expect("point mass is valid")
    }

    /// Uniform mass over `1..=n`.
    pub fn uniform(n: usize, perspective: Perspective, kind: DistKind) -> Self {
        assert!(n >= 1);
        Self::from_weights(&vec![1.0; n], perspective, kind).expect("uniform is valid")
    }

    /// Robust Soliton distribution for block length `k`.
    ///
    /// Uses `R = c ln(k/δ) √k` and a spike at `⌊k/R⌋` (clamped to `1..=k`).
    /// The spike term is clamped at zero when `R < δ`, which happens for tiny
    /// `k`.
    pub fn robust_soliton(k: usize, c: f64, delta: f64) -> Result<Self, DistError> {
        if k == 0 {
            return Err(DistError::InvalidParameter("K must be >= 1".into()));
        }
        if !(c > 0.0) || !c.is_finite() {
            return Err(DistError::InvalidParameter(format!("c = {c} must be > 0")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(DistError::InvalidParameter(format!(
                "delta = {delta} must lie in (0, 1)"
            )));
        }
        let kf = k as f64;
        let r = c * (kf / delta).ln() * kf.sqrt();
        let pivot = ((kf / r).floor() as usize).clamp(1, k);
        let mut mass = vec![0.0; k];
        mass[0] = 1.0 / kf;
        for (i, m) in mass.iter_mut().enumerate().skip(1) {
            let d = (i + 1) as f64;
            *m = 1.0 / (d * (d - 1.0));
        }
        for (i, m) in mass.iter_mut().enumerate().take(pivot - 1) {
            *m += r / ((i + 1) as f64 * kf);
        }
        mass[pivot - 1] += (r * (r / delta).ln() / kf).max(0.0);
        // Drop the vanishing tail above the largest positive entry.
        while mass.len() > 1 && mass[mass.len() - 1] == 0.0 {
            mass.pop();
        }
        Self::from_weights(&mass, Perspective::Node, DistKind::Check)
    }

    pub fn perspective(&self) -> Perspective {
        self.perspective
    }

    pub fn kind(&self) -> DistKind {
        self.kind
    }

    /// Largest stored index.
    pub fn max_degree(&self) -> usize {
        self.coeffs.len()
    }

    /// Mass at `degree` (0 outside the support).
    pub fn mass(&self, degree: usize) -> f64 {
        if degree == 0 {
            return 0.0;
        }
        self.coeffs.get(degree - 1).copied().unwrap_or(0.0)
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn with_kind(mut self, kind: DistKind) -> Self {
        self.kind = kind;
        self
    }

    /// `ω_j = j Ω_j / Ω'(1)`.
    pub fn to_edge_perspective(&self) -> Result<Self, DistError> {
        self.expect(Perspective::Node)?;
        let mean = self.node_mean();
        let coeffs: Vec<f64> = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| (i + 1) as f64 * c / mean)
            .collect();
        Self::from_weights(&coeffs, Perspective::Edge, self.kind)
    }

    /// `Ω_j ∝ ω_j / j`.
    pub fn to_node_perspective(&self) -> Result<Self, DistError> {
        self.expect(Perspective::Edge)?;
        let coeffs: Vec<f64> = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c / (i + 1) as f64)
            .collect();
        Self::from_weights(&coeffs, Perspective::Node, self.kind)
    }

    fn expect(&self, p: Perspective) -> Result<(), DistError> {
        if self.perspective != p {
            return Err(DistError::WrongPerspective {
                expected: p,
                actual: self.perspective,
            });
        }
        Ok(())
    }

    /// Polynomial value at `x ∈ [0, 1]`.
    pub fn evaluate(&self, x: f64) -> Result<f64, DistError> {
        check_domain(x)?;
        Ok(self.eval(x))
    }

    /// Derivative of the polynomial at `x ∈ [0, 1]`.
    pub fn derivative(&self, x: f64) -> Result<f64, DistError> {
        check_domain(x)?;
        Ok(self.deriv(x))
    }

    /// Average node degree, `Ω'(1)` for node distributions. For an edge
    /// distribution the node-perspective mean `1 / Σ ω_j / j` is returned.
    pub fn mean_degree(&self) -> f64 {
        match self.perspective {
            Perspective::Node => self.node_mean(),
            Perspective::Edge => {
                let inv: f64 = self
                    .coeffs
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c / (i + 1) as f64)
                    .sum();
                1.0 / inv
            }
        }
    }

    fn node_mean(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| (i + 1) as f64 * c)
            .sum()
    }

    /// Unchecked evaluation, used in inner loops where `x` is known to lie in
    /// `[0, 1]`. Horner form.
    pub(crate) fn eval(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for c in self.coeffs.iter().rev() {
            acc = acc * x + c;
        }
        match self.perspective {
            Perspective::Node => acc * x,
            Perspective::Edge => acc,
        }
    }

    pub(crate) fn deriv(&self, x: f64) -> f64 {
        let shift = match self.perspective {
            Perspective::Node => 0,
            Perspective::Edge => 1,
        };
        // Horner over the terms with power >= 1; the power-0 edge term
        // (index 0) drops out of the derivative.
        let mut acc = 0.0;
        for (i, c) in self.coeffs.iter().enumerate().skip(shift).rev() {
            acc = acc * x + (i + 1 - shift) as f64 * c;
        }
        acc
    }

    /// Inverse-CDF draw of an index in `1..=d_max`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1) + 1
    }

    /// Draw restricted to the indices for which `allowed(index)` holds. Mass
    /// is renormalized over the allowed set. Returns `None` if that set has
    /// no mass.
    pub fn sample_restricted<R, F>(&self, rng: &mut R, allowed: F) -> Option<usize>
    where
        R: Rng + ?Sized,
        F: Fn(usize) -> bool,
    {
        let total: f64 = self
            .coeffs
            .iter()
            .enumerate()
            .filter(|(i, _)| allowed(i + 1))
            .map(|(_, c)| c)
            .sum();
        if total <= 0.0 {
            return None;
        }
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut last = None;
        for (i, c) in self.coeffs.iter().enumerate() {
            if !allowed(i + 1) || *c <= 0.0 {
                continue;
            }
            acc += c;
            last = Some(i + 1);
            if target < acc {
                return last;
            }
        }
        last
    }
}

fn check_entries(coeffs: &[f64]) -> Result<(), DistError> {
    if coeffs.is_empty() {
        return Err(DistError::Empty);
    }
    for (i, &c) in coeffs.iter().enumerate() {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(DistError::NegativeMass {
                index: i + 1,
                value: c,
            });
        }
    }
    Ok(())
}

fn check_domain(x: f64) -> Result<(), DistError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(DistError::DomainError(x));
    }
    Ok(())
}

/// Text form: one `degree:probability` line per non-zero entry, sorted by
/// degree.
impl fmt::Display for DegreeDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.coeffs.iter().enumerate() {
            if *c > 0.0 {
                writeln!(f, "{}:{}", i + 1, c)?;
            }
        }
        Ok(())
    }
}

/// Parses the `degree:probability` text form into a node-perspective check
/// distribution. Blank lines and `#` comments are ignored; degrees may appear
/// in any order but not twice. Mass is renormalized only within tolerance.
impl FromStr for DegreeDistribution {
    type Err = DistError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let coeffs = parse_text(s)?;
        Self::with_zero_tail(&coeffs, Perspective::Node, DistKind::Check)
    }
}

/// Parses the text form into a dense coefficient vector.
pub fn parse_text(s: &str) -> Result<Vec<f64>, DistError> {
    let mut entries: Vec<(usize, f64)> = Vec::new();
    for (lineno, raw) in s.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (d, p) = line
            .split_once(':')
            .ok_or_else(|| DistError::Parse(format!("line {}: expected degree:prob", lineno + 1)))?;
        let d: usize = d
            .trim()
            .parse()
            .map_err(|_| DistError::Parse(format!("line {}: bad degree {d:?}", lineno + 1)))?;
        let p: f64 = p
            .trim()
            .parse()
            .map_err(|_| DistError::Parse(format!("line {}: bad probability {p:?}", lineno + 1)))?;
        if d == 0 {
            return Err(DistError::Parse(format!("line {}: degree 0", lineno + 1)));
        }
        if entries.iter().any(|(e, _)| *e == d) {
            return Err(DistError::Parse(format!("degree {d} listed twice")));
        }
        entries.push((d, p));
    }
    let d_max = entries.iter().map(|(d, _)| *d).max().ok_or(DistError::Empty)?;
    let mut coeffs = vec![0.0; d_max];
    for (d, p) in entries {
        coeffs[d - 1] = p;
    }
    Ok(coeffs)
}
