//! Density evolution and related asymptotic quantities.
//!
//! All recursions start from `P_0 = 1` and iterate until the largest
//! componentwise change drops below `tol` or `max_iters` is reached.

use thiserror::Error;

use crate::dist::{DegreeDistribution, DistError};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("argument out of range: {0}")]
    ArgumentOutOfRange(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// How much is received: either the reception overhead `ε_r` or the average
/// decoder variable degree `μ̄ = Γ'(1) Ω'(1) ε_r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Load {
    EpsilonR(f64),
    MuBar(f64),
}

/// Reading of the expanding-window recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DewltForm {
    /// `exp[-ε_r Σ_{j≥i} θ_j/Π_wj Γ'_jW(Φ_j)]`, which is the printed
    /// two-class expansion.
    #[default]
    Literal,
    /// The literal form with the extra `Ω'(1) ω(1-P_i)` variable-side factor;
    /// with one window it coincides with the EEP recursion.
    EdgeConsistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultiRelayMode {
    /// Weighted selection at every relay, per-relay `Γ_j`.
    Weighted,
    /// Every relay uses the same expanding windows.
    Dewlt,
    /// Window `j` is served by relay `j` alone (requires `R = I`).
    WindowPerRelay,
}

/// Inputs to the recursions.
#[derive(Debug, Clone)]
pub struct DEParams {
    /// Node-perspective check-degree distribution `Ω(x)`.
    pub omega: DegreeDistribution,
    /// Node-perspective relay-degree distribution `Γ(x)`.
    pub gamma: DegreeDistribution,
    pub load: Load,
    /// Selection probabilities `q_i` (empty for EEP).
    pub q: Vec<f64>,
    /// Source size fractions `α_i` (empty for EEP).
    pub alpha: Vec<f64>,
    /// Importance class per source, 1-based.
    pub classes: Vec<usize>,
    /// Window-assignment probabilities `θ_j`.
    pub theta: Vec<f64>,
    /// Node-perspective `Γ_jW` per window.
    pub window_gammas: Vec<DegreeDistribution>,
    /// Per-relay `Γ_j`; empty means every relay uses `gamma`.
    pub relay_gammas: Vec<DegreeDistribution>,
    /// Per-relay reception overheads `ε_{r,j}`.
    pub relay_overheads: Vec<f64>,
    pub dewlt_form: DewltForm,
    pub max_iters: usize,
    pub tol: f64,
}

impl DEParams {
    pub fn new(omega: DegreeDistribution, gamma: DegreeDistribution, load: Load) -> Self {
        Self {
            omega,
            gamma,
            load,
            q: Vec::new(),
            alpha: Vec::new(),
            classes: Vec::new(),
            theta: Vec::new(),
            window_gammas: Vec::new(),
            relay_gammas: Vec::new(),
            relay_overheads: Vec::new(),
            dewlt_form: DewltForm::Literal,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
        }
    }

    pub fn with_selection(mut self, q: Vec<f64>, alpha: Vec<f64>) -> Self {
        self.q = q;
        self.alpha = alpha;
        self
    }

    pub fn with_windows(mut self, classes: Vec<usize>, theta: Vec<f64>, gammas: Vec<DegreeDistribution>) -> Self {
        self.classes = classes;
        self.theta = theta;
        self.window_gammas = gammas;
        self
    }

    pub fn with_relays(mut self, gammas: Vec<DegreeDistribution>, overheads: Vec<f64>) -> Self {
        self.relay_gammas = gammas;
        self.relay_overheads = overheads;
        self
    }

    pub fn with_load(mut self, load: Load) -> Self {
        self.load = load;
        self
    }

    fn cost(&self) -> f64 {
        self.gamma.mean_degree() * self.omega.mean_degree()
    }

    pub fn epsilon_r(&self) -> f64 {
        match self.load {
            Load::EpsilonR(e) => e,
            Load::MuBar(m) => m / self.cost(),
        }
    }

    pub fn mu_bar(&self) -> f64 {
        match self.load {
            Load::EpsilonR(e) => self.cost() * e,
            Load::MuBar(m) => m,
        }
    }

    /// Bias factors `w_i = q_i / α_i`.
    pub fn w(&self) -> Vec<f64> {
        self.q.iter().zip(&self.alpha).map(|(q, a)| q / a).collect()
    }

    fn check_selection(&self) -> Result<(), AnalysisError> {
        let bad = |m: &str| Err(AnalysisError::InvalidParams(m.into()));
        if self.q.is_empty() || self.q.len() != self.alpha.len() {
            return bad("q and alpha must be non-empty and of equal length");
        }
        if self.q.iter().chain(&self.alpha).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("q and alpha must be non-negative");
        }
        if self.alpha.iter().any(|a| *a == 0.0) {
            return bad("alpha entries must be positive");
        }
        for (name, v) in [("q", &self.q), ("alpha", &self.alpha)] {
            let s: f64 = v.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(AnalysisError::InvalidParams(format!("{name} sums to {s}")));
            }
        }
        Ok(())
    }

    fn check_windows(&self) -> Result<usize, AnalysisError> {
        self.check_selection()?;
        let bad = |m: &str| Err(AnalysisError::InvalidParams(m.into()));
        if self.classes.len() != self.q.len() {
            return bad("one class per source required");
        }
        let num = self.classes.iter().copied().max().unwrap_or(0);
        if num == 0 || self.classes.contains(&0) {
            return bad("classes are 1-based");
        }
        if (1..=num).any(|c| !self.classes.contains(&c)) {
            return bad("every class needs at least one source");
        }
        if self.window_gammas.len() != num {
            return bad("one window relay distribution per class required");
        }
        Ok(num)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DEResult {
    /// `trajectory[l][i]`, starting with `P_0 = 1`.
    pub trajectory: Vec<Vec<f64>>,
    pub fixed_point: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs `step` from the all-ones state. Each new iterate is capped by the
/// previous one: the exact maps are monotone, so this only removes
/// last-ulp rounding noise.
fn iterate<F>(dim: usize, max_iters: usize, tol: f64, mut step: F) -> DEResult
where
    F: FnMut(&[f64], &mut [f64]),
{
    let mut trajectory = vec![vec![1.0; dim]];
    let mut next = vec![0.0; dim];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        let prev = trajectory.last().expect("non-empty");
        step(prev, &mut next);
        let mut change: f64 = 0.0;
        for (n, p) in next.iter_mut().zip(prev) {
            *n = n.clamp(0.0, *p);
            change = change.max(p - *n);
        }
        trajectory.push(next.clone());
        iterations += 1;
        if change < tol {
            converged = true;
            break;
        }
    }
    DEResult {
        fixed_point: trajectory.last().expect("non-empty").clone(),
        trajectory,
        iterations,
        converged,
    }
}

/// `μ̄_g γ_g(x)` terms for groups of relays sharing a distribution.
struct RelayMix {
    terms: Vec<(DegreeDistribution, f64)>,
}

impl RelayMix {
    /// `scale · Σ_g Γ'_g(1) Ω'(1) ε_g γ_g(x)`; relays with identical `Γ`
    /// have their overheads summed first.
    fn new(p: &DEParams, gammas: &[DegreeDistribution], overheads: &[f64]) -> Result<Self, AnalysisError> {
        let omega_mean = p.omega.mean_degree();
        let mut groups: Vec<(DegreeDistribution, f64)> = Vec::new();
        for (g, e) in gammas.iter().zip(overheads) {
            match groups.iter_mut().find(|(h, _)| h.coefficients() == g.coefficients()) {
                Some((_, total)) => *total += e,
                None => groups.push((g.clone(), *e)),
            }
        }
        let terms = groups
            .into_iter()
            .map(|(g, e)| {
                let mu = g.mean_degree() * omega_mean * e;
                Ok((g.to_edge_perspective()?, mu))
            })
            .collect::<Result<_, DistError>>()?;
        Ok(Self { terms })
    }

    fn single(p: &DEParams) -> Result<Self, AnalysisError> {
        Ok(Self {
            terms: vec![(p.gamma.to_edge_perspective()?, p.mu_bar())],
        })
    }

    fn eval(&self, x: f64) -> f64 {
        self.terms.iter().map(|(g, mu)| mu * g.eval(x)).sum()
    }
}

fn weighted_core(p: &DEParams, w: &[f64], mix: &RelayMix) -> Result<DEResult, AnalysisError> {
    let omega_edge = p.omega.to_edge_perspective()?;
    let omega = &p.omega;
    let q = &p.q;
    Ok(iterate(w.len(), p.max_iters, p.tol, |prev, next| {
        let phi: f64 = q.iter().zip(prev).map(|(qm, pm)| qm * omega.eval(1.0 - pm)).sum();
        let relay = mix.eval(phi);
        for i in 0..next.len() {
            next[i] = (-w[i] * omega_edge.eval(1.0 - prev[i]) * relay).exp();
        }
    }))
}

/// Single-class recursion `P_l = exp[-μ̄ ω(1-P) γ(Ω(1-P))]`.
pub fn de_eep(p: &DEParams) -> Result<DEResult, AnalysisError> {
    let omega_edge = p.omega.to_edge_perspective()?;
    let gamma_edge = p.gamma.to_edge_perspective()?;
    let mu = p.mu_bar();
    let omega = &p.omega;
    Ok(iterate(1, p.max_iters, p.tol, |prev, next| {
        let x = 1.0 - prev[0];
        next[0] = (-mu * omega_edge.eval(x) * gamma_edge.eval(omega.eval(x))).exp();
    }))
}

/// Weighted-selection recursion, one probability per source:
/// `P_i = exp[-w_i μ̄ ω(1-P_i) γ(Σ_m q_m Ω(1-P_m))]`.
pub fn de_uep_weighted(p: &DEParams) -> Result<DEResult, AnalysisError> {
    p.check_selection()?;
    weighted_core(p, &p.w(), &RelayMix::single(p)?)
}

/// Per-window selection weights over classes: `q` restricted to the classes
/// of window `j` and renormalized.
fn window_weights(p: &DEParams, num: usize) -> Vec<Vec<f64>> {
    let mut class_q = vec![0.0; num];
    for (c, q) in p.classes.iter().zip(&p.q) {
        class_q[c - 1] += q;
    }
    (1..=num)
        .map(|j| {
            let total: f64 = class_q[..j].iter().sum();
            (0..num)
                .map(|c| if c < j && total > 0.0 { class_q[c] / total } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Cumulative class fractions `Π_w1 ≤ Π_w2 ≤ …`.
fn window_fractions(p: &DEParams, num: usize) -> Vec<f64> {
    let mut pi = vec![0.0; num];
    for (c, a) in p.classes.iter().zip(&p.alpha) {
        pi[c - 1] += a;
    }
    pi.iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// Shared expanding-window recursion; `load[j]` multiplies window `j`'s
/// term (`ε_r θ_j` or a per-relay overhead).
fn windows_core(p: &DEParams, num: usize, load: &[f64]) -> Result<DEResult, AnalysisError> {
    let weights = window_weights(p, num);
    let pi_w = window_fractions(p, num);
    let omega = &p.omega;
    let edge = match p.dewlt_form {
        DewltForm::Literal => None,
        DewltForm::EdgeConsistent => Some((p.omega.to_edge_perspective()?, p.omega.mean_degree())),
    };
    let gammas = &p.window_gammas;
    Ok(iterate(num, p.max_iters, p.tol, |prev, next| {
        let omega_vals: Vec<f64> = prev.iter().map(|pc| omega.eval(1.0 - pc)).collect();
        let terms: Vec<f64> = (0..num)
            .map(|j| {
                let phi: f64 = weights[j].iter().zip(&omega_vals).map(|(w, o)| w * o).sum();
                load[j] / pi_w[j] * gammas[j].deriv(phi)
            })
            .collect();
        for i in 0..num {
            let mut exponent: f64 = terms[i..].iter().sum();
            if let Some((omega_edge, mean)) = &edge {
                exponent *= mean * omega_edge.eval(1.0 - prev[i]);
            }
            next[i] = (-exponent).exp();
        }
    }))
}

/// Expanding-window recursion, one probability per importance class:
/// `P_i = exp[-ε_r Σ_{j≥i} θ_j / Π_wj · Γ'_jW(Φ_j)]` with
/// `Π_wj = Σ_{t≤j} Π_t` and `Φ_j` the window-`j` mixture of `Ω(1-P)`.
pub fn de_dewlt(p: &DEParams) -> Result<DEResult, AnalysisError> {
    let num = p.check_windows()?;
    if p.theta.len() != num {
        return Err(AnalysisError::InvalidParams("theta needs one entry per window".into()));
    }
    let eps = p.epsilon_r();
    let load: Vec<f64> = p.theta.iter().map(|t| eps * t).collect();
    windows_core(p, num, &load)
}

/// Multi-relay recursions with per-relay overheads `ε_{r,j}`.
pub fn de_multirelay(p: &DEParams, mode: MultiRelayMode) -> Result<DEResult, AnalysisError> {
    let r = p.relay_overheads.len();
    if r == 0 {
        return Err(AnalysisError::InvalidParams("no relay overheads".into()));
    }
    if p.relay_overheads.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(AnalysisError::InvalidParams("relay overheads must be non-negative".into()));
    }
    let total: f64 = p.relay_overheads.iter().sum();
    match mode {
        MultiRelayMode::Weighted => {
            p.check_selection()?;
            let gammas = if p.relay_gammas.is_empty() {
                vec![p.gamma.clone(); r]
            } else if p.relay_gammas.len() == r {
                p.relay_gammas.clone()
            } else {
                return Err(AnalysisError::InvalidParams("one relay distribution per relay".into()));
            };
            weighted_core(p, &p.w(), &RelayMix::new(p, &gammas, &p.relay_overheads)?)
        }
        MultiRelayMode::Dewlt => de_dewlt(&p.clone().with_load(Load::EpsilonR(total))),
        MultiRelayMode::WindowPerRelay => {
            let num = p.check_windows()?;
            if num != r {
                return Err(AnalysisError::InvalidParams(format!(
                    "{r} relays for {num} windows; one relay per window required"
                )));
            }
            windows_core(p, num, &p.relay_overheads)
        }
    }
}

/// Probability that a class-`class` variable is untouched by all
/// `K ε_r` received checks: `(1 - Σ_{j≥i} θ_j ρ_j / κ_wj)^{K ε_r}`.
pub fn ml_lower_bound(
    theta: &[f64],
    rho: &[f64],
    kappa_w: &[f64],
    k: f64,
    epsilon_r: f64,
    class: usize,
) -> Result<f64, AnalysisError> {
    if theta.len() != rho.len() || rho.len() != kappa_w.len() {
        return Err(AnalysisError::ArgumentOutOfRange("theta, rho and kappa_w differ in length".into()));
    }
    if class == 0 || class > theta.len() {
        return Err(AnalysisError::ArgumentOutOfRange(format!("class {class}")));
    }
    let hit: f64 = (class - 1..theta.len()).map(|j| theta[j] * rho[j] / kappa_w[j]).sum();
    if !(0.0..=1.0).contains(&hit) {
        return Err(AnalysisError::ArgumentOutOfRange(format!(
            "per-check connection probability {hit}"
        )));
    }
    Ok((1.0 - hit).powf(k * epsilon_r))
}

/// Asymptotic probability `e^{-μ}` that a variable has no edges.
pub fn unconnected_fraction(mu: f64) -> Result<f64, AnalysisError> {
    if !(mu >= 0.0) {
        return Err(AnalysisError::ArgumentOutOfRange(format!("mu = {mu}")));
    }
    Ok((-mu).exp())
}
