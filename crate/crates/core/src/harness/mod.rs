//! Full-network Monte-Carlo experiments.
//!
//! A trial runs transmission rounds until the relays have sent enough
//! symbols for the last overhead grid point. Each round has a source phase
//! (every source encodes one symbol and sends it over each source-relay
//! link) and a relay phase (the scheduled relays combine and send over their
//! relay-destination links). The destination adds surviving checks to one
//! decoding graph and peels whenever a grid point is reached.
//!
//! The transmission overhead is `ε = N/K` with `N` the number of relay-phase
//! transmissions and `K = Σ K_i`. Rounds spent filling relay buffers are
//! reported separately and do not count towards `N`.

mod config;
mod csv;

pub use config::{load_config, parse_config, parse_dist, parse_grid, ConfigFile, DeMode};
pub use csv::{emit_csv, format_float, parse_csv, write_csv};

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::analysis::{self, AnalysisError, DEParams, Load, MultiRelayMode};
use crate::channel::{ErasureLink, NodeId};
use crate::decoder::{DecodeReport, DecodingGraph, Scope};
use crate::dist::{DegreeDistribution, DistKind, Perspective};
use crate::relay::{ErasurePolicy, Relay, RelayConfig, RelayError, RelayOutput, RelayScheme, WindowSpec};
use crate::seed::{self, streams, SimRng};
use crate::source::{BitLayout, SourceConfig, SourceEncoder, SourceError};

/// Target erasure rates used by [`compare_to_de`].
pub const COMPARISON_TARGETS: [f64; 3] = [1e-1, 3e-2, 1e-2];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Relay(#[from] RelayError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("round limit {0} reached before the last overhead point")]
    RoundLimit(u64),
    #[error("decoded payload does not match the transmitted bits")]
    PayloadMismatch,
    #[error("{which} curve never reaches erasure rate {target}")]
    NoCrossing { target: f64, which: &'static str },
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

/// Which relays transmit in a relay phase. Only relays whose buffers are
/// full take part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    /// One relay per round, cycling through the ready relays.
    RoundRobin,
    /// One ready relay per round, chosen uniformly.
    #[default]
    RandomOne,
    /// Every ready relay.
    All,
}

impl std::str::FromStr for Schedule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "round_robin" => Ok(Schedule::RoundRobin),
            "random_one" => Ok(Schedule::RandomOne),
            "all" => Ok(Schedule::All),
            other => Err(format!("unknown schedule {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RelaySpec {
    /// Node-perspective relay-degree distribution.
    pub gamma: DegreeDistribution,
    /// Selection probabilities, one per source.
    pub q: Vec<f64>,
    /// Relay-destination erasure probability.
    pub delta_d: f64,
}

/// Expanding windows built from the per-source importance classes.
#[derive(Debug, Clone)]
pub struct WindowConfig {
    pub theta: DegreeDistribution,
    pub gammas: Vec<DegreeDistribution>,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub block_lengths: Vec<usize>,
    /// Buffer depth; ignored by the one-bit and conventional schemes.
    pub depth: usize,
    pub omega: DegreeDistribution,
    pub relays: Vec<RelaySpec>,
    /// `source_delta[i][j]`: erasure probability from source `i+1` to relay `j+1`.
    pub source_delta: Vec<Vec<f64>>,
    pub scheme: RelayScheme,
    pub policy: ErasurePolicy,
    pub schedule: Schedule,
    /// Strictly increasing transmission overheads `N/K`.
    pub overheads: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub payload: bool,
    /// Importance class per source, 1-based.
    pub classes: Vec<usize>,
    pub windows: Option<WindowConfig>,
    pub max_rounds: Option<u64>,
}

impl ExperimentConfig {
    /// Single-relay, lossless configuration with size-proportional
    /// selection; the remaining fields take their defaults.
    pub fn new(
        block_lengths: Vec<usize>,
        depth: usize,
        omega: DegreeDistribution,
        gamma: DegreeDistribution,
        scheme: RelayScheme,
    ) -> Self {
        let s = block_lengths.len();
        let total: usize = block_lengths.iter().sum();
        let q = block_lengths.iter().map(|&k| k as f64 / total.max(1) as f64).collect();
        Self {
            block_lengths,
            depth,
            omega,
            relays: vec![RelaySpec { gamma, q, delta_d: 0.0 }],
            source_delta: vec![vec![0.0]; s],
            scheme,
            policy: ErasurePolicy::Stall,
            schedule: Schedule::RandomOne,
            overheads: Vec::new(),
            trials: 1,
            seed: 0,
            payload: false,
            classes: vec![1; s],
            windows: None,
            max_rounds: None,
        }
    }

    pub fn num_sources(&self) -> usize {
        self.block_lengths.len()
    }

    pub fn k(&self) -> usize {
        self.block_lengths.iter().sum()
    }

    /// Size fractions `α_i = K_i / K`.
    pub fn alpha(&self) -> Vec<f64> {
        let k = self.k() as f64;
        self.block_lengths.iter().map(|&b| b as f64 / k).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.iter().copied().max().unwrap_or(0)
    }

    fn source_depth(&self) -> usize {
        if self.scheme.needs_class_partition() {
            self.depth
        } else {
            1
        }
    }

    /// Number of relay transmissions at which each grid point is evaluated.
    pub fn transmission_targets(&self) -> Vec<u64> {
        let k = self.k() as f64;
        self.overheads.iter().map(|g| (g * k).round() as u64).collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let s = self.num_sources();
        if s == 0 || self.block_lengths.contains(&0) {
            return bad("need at least one source with a positive block length".into());
        }
        if self.depth == 0 {
            return bad("depth must be >= 1".into());
        }
        if self.scheme.needs_class_partition() {
            if let Some(k) = self.block_lengths.iter().find(|&&k| k % self.depth != 0) {
                return bad(format!("block length {k} is not divisible by depth {}", self.depth));
            }
        }
        if self.relays.is_empty() {
            return bad("need at least one relay".into());
        }
        for (j, r) in self.relays.iter().enumerate() {
            if r.q.len() != s {
                return bad(format!("relay {} has {} selection probabilities for {s} sources", j + 1, r.q.len()));
            }
            let sum: f64 = r.q.iter().sum();
            if r.q.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
                return bad(format!("relay {} selection probabilities must be >= 0 and sum to 1", j + 1));
            }
            if !(0.0..=1.0).contains(&r.delta_d) {
                return bad(format!("relay {} erasure probability {} outside [0, 1]", j + 1, r.delta_d));
            }
        }
        if self.source_delta.len() != s || self.source_delta.iter().any(|row| row.len() != self.relays.len()) {
            return bad("source_delta must be an S x R matrix".into());
        }
        if self.source_delta.iter().flatten().any(|d| !(0.0..=1.0).contains(d)) {
            return bad("source erasure probabilities must lie in [0, 1]".into());
        }
        if self.overheads.is_empty() {
            return bad("overhead grid is empty".into());
        }
        if self.overheads.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return bad("overheads must be finite and non-negative".into());
        }
        if self.overheads.windows(2).any(|w| w[1] <= w[0]) {
            return bad("overhead grid must be strictly increasing".into());
        }
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.classes.len() != s || self.classes.contains(&0) {
            return bad("need one 1-based class per source".into());
        }
        let num = self.num_classes();
        if (1..=num).any(|c| !self.classes.contains(&c)) {
            return bad("every class up to the largest needs a source".into());
        }
        if let Some(w) = &self.windows {
            if w.gammas.len() != num || w.theta.coefficients().len() != num {
                return bad(format!("{num} classes need {num} window distributions and theta entries"));
            }
        }
        Ok(())
    }

    fn relay_config(&self, j: usize, layout: &BitLayout) -> Result<RelayConfig, HarnessError> {
        let spec = &self.relays[j];
        let q = DegreeDistribution::from_weights(&spec.q, Perspective::Node, DistKind::Selection)
            .map_err(|e| HarnessError::Config(format!("relay {} q: {e}", j + 1)))?;
        let windows = self
            .windows
            .as_ref()
            .map(|w| WindowSpec::from_classes(&self.classes, w.theta.clone(), w.gammas.clone()));
        let cfg = RelayConfig {
            relay_id: j + 1,
            gamma: spec.gamma.clone(),
            q,
            scheme: self.scheme,
            depth: self.source_depth(),
            windows,
            policy: self.policy,
            layout: layout.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn round_cap(&self, last_target: u64) -> u64 {
        self.max_rounds
            .unwrap_or_else(|| 1000 + 100 * (last_target + self.source_depth() as u64))
    }
}

/// Everything observed in one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    /// One report per overhead grid point.
    pub reports: Vec<DecodeReport>,
    /// Checks received by the destination at each grid point.
    pub received: Vec<usize>,
    /// `(untouched, total)` variables per class at each grid point.
    pub unconnected: Vec<Vec<(usize, usize)>>,
    /// Round after whose source phase each relay's buffers were first full
    /// (0 for the conventional scheme).
    pub fill_rounds: Vec<u64>,
    /// Rounds in which a scheduled, ready relay sent nothing.
    pub stalls: Vec<u64>,
    /// First round in which each relay transmitted.
    pub first_transmission: Vec<Option<u64>>,
    pub rounds: u64,
}

/// Runs one trial; every random stream is derived from `trial_seed`.
pub fn run_trial(cfg: &ExperimentConfig, trial_seed: u64) -> Result<TrialOutcome, HarnessError> {
    cfg.validate()?;
    let s = cfg.num_sources();
    let r = cfg.relays.len();
    let layout = BitLayout::new(&cfg.block_lengths);
    let partitioned = cfg.scheme.needs_class_partition();

    let mut truth = Vec::new();
    let mut encoders = Vec::with_capacity(s);
    let mut source_rngs: Vec<SimRng> = Vec::with_capacity(s);
    for (i, &k) in cfg.block_lengths.iter().enumerate() {
        let sc = SourceConfig::new(i + 1, k, cfg.source_depth(), cfg.omega.clone())?;
        let enc = if cfg.payload {
            let mut rng = seed::stream_rng(trial_seed, streams::payload(i + 1));
            let bits: Vec<bool> = (0..k).map(|_| rng.gen()).collect();
            truth.extend_from_slice(&bits);
            SourceEncoder::with_payload(sc, bits)?
        } else {
            SourceEncoder::new(sc)?
        };
        encoders.push(enc);
        source_rngs.push(seed::stream_rng(trial_seed, streams::source(i + 1)));
    }

    let mut relays = Vec::with_capacity(r);
    let mut relay_rngs: Vec<SimRng> = Vec::with_capacity(r);
    let mut down_links = Vec::with_capacity(r);
    for j in 0..r {
        relays.push(Relay::new(cfg.relay_config(j, &layout)?)?);
        relay_rngs.push(seed::stream_rng(trial_seed, streams::relay(j + 1)));
        down_links.push(link(NodeId::Relay(j + 1), NodeId::Destination, cfg.relays[j].delta_d, trial_seed)?);
    }
    let mut up_links = Vec::with_capacity(s);
    for i in 0..s {
        let row = (0..r)
            .map(|j| link(NodeId::Source(i + 1), NodeId::Relay(j + 1), cfg.source_delta[i][j], trial_seed))
            .collect::<Result<Vec<_>, _>>()?;
        up_links.push(row);
    }
    let mut scheduler = seed::stream_rng(trial_seed, streams::scheduler());
    let mut graph = DecodingGraph::with_classes(layout, cfg.classes.clone(), cfg.payload);

    let targets = cfg.transmission_targets();
    let last = *targets.last().expect("validated non-empty grid");
    let cap = cfg.round_cap(last);
    let num_classes = cfg.num_classes();

    let conventional = cfg.scheme == RelayScheme::Conventional;
    let mut fill_rounds: Vec<Option<u64>> = vec![if conventional { Some(0) } else { None }; r];
    let mut first_transmission = vec![None; r];
    let mut stalls = vec![0u64; r];
    let mut out = TrialOutcome {
        reports: Vec::with_capacity(targets.len()),
        received: Vec::with_capacity(targets.len()),
        unconnected: Vec::with_capacity(targets.len()),
        fill_rounds: Vec::new(),
        stalls: Vec::new(),
        first_transmission: Vec::new(),
        rounds: 0,
    };
    let mut sent: u64 = 0;
    let mut next_point = 0;
    let mut robin = 0usize;

    let capture = |graph: &mut DecodingGraph, out: &mut TrialOutcome, sent: u64, next: &mut usize| {
        while *next < targets.len() && targets[*next] <= sent {
            let report = graph.peel();
            out.received.push(report.checks);
            out.reports.push(report);
            out.unconnected.push(
                (1..=num_classes)
                    .map(|c| graph.unconnected(Scope::Class(c)).expect("class in range"))
                    .collect(),
            );
            *next += 1;
        }
    };
    capture(&mut graph, &mut out, sent, &mut next_point);

    let mut round: u64 = 0;
    while next_point < targets.len() {
        round += 1;
        if round > cap {
            return Err(HarnessError::RoundLimit(cap));
        }
        for i in 0..s {
            let rng = &mut source_rngs[i];
            let sym = if partitioned {
                encoders[i].encode_round(round, rng)?
            } else {
                encoders[i].encode_conventional(round, rng)?
            };
            for j in 0..r {
                let arrived = up_links[i][j].transmit(&sym).cloned();
                relays[j].receive(i + 1, arrived, round)?;
            }
        }

        // A relay whose buffers filled in this source phase starts in the
        // next round.
        let ready: Vec<usize> = (0..r).filter(|&j| matches!(fill_rounds[j], Some(f) if f < round)).collect();
        for (j, relay) in relays.iter().enumerate() {
            if fill_rounds[j].is_none() && relay.is_ready() {
                fill_rounds[j] = Some(round);
            }
        }
        let scheduled: Vec<usize> = if ready.is_empty() {
            Vec::new()
        } else {
            match cfg.schedule {
                Schedule::All => ready,
                Schedule::RoundRobin => {
                    let pick = ready[robin % ready.len()];
                    robin += 1;
                    vec![pick]
                }
                Schedule::RandomOne => vec![ready[scheduler.gen_range(0..ready.len())]],
            }
        };

        for j in scheduled {
            match relays[j].produce(round, &mut relay_rngs[j])? {
                RelayOutput::Stall => stalls[j] += 1,
                RelayOutput::Symbol(sym) => {
                    first_transmission[j].get_or_insert(round);
                    sent += 1;
                    if let Some(sym) = down_links[j].transmit(sym) {
                        graph.add_check(&sym);
                    }
                    capture(&mut graph, &mut out, sent, &mut next_point);
                    if next_point == targets.len() {
                        break;
                    }
                }
            }
        }
    }

    if cfg.payload {
        let ok = graph
            .verify_payload(&truth)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if !ok {
            return Err(HarnessError::PayloadMismatch);
        }
    }
    out.fill_rounds = fill_rounds.into_iter().map(|f| f.unwrap_or(round)).collect();
    out.stalls = stalls;
    out.first_transmission = first_transmission;
    out.rounds = round;
    Ok(out)
}

fn link(from: NodeId, to: NodeId, delta: f64, seed: u64) -> Result<ErasureLink, HarnessError> {
    ErasureLink::new(from, to, delta, seed)
        .map_err(|e| HarnessError::Config(format!("erasure probability {} outside [0, 1]", e.0)))
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub overhead: f64,
    pub scope: Scope,
    pub erasure_rate: f64,
    pub trials: usize,
    pub k: usize,
    pub scheme: String,
    pub seed: u64,
}

/// Sample mean with a normal-approximation confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    /// Sample standard deviation (0 for a single trial).
    pub sd: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: 0.0, sd: 0.0, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, sd, n }
    }

    /// `1.96 · sd / √n`.
    pub fn ci95(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            1.96 * self.sd / (self.n as f64).sqrt()
        }
    }

    pub fn interval(&self) -> (f64, f64) {
        let h = self.ci95();
        (self.mean - h, self.mean + h)
    }
}

/// Per-relay delay observations, indexed `[relay][trial]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DelayStats {
    pub fill_rounds: Vec<Vec<u64>>,
    pub stalls: Vec<Vec<u64>>,
    pub first_transmission: Vec<Vec<Option<u64>>>,
}

impl DelayStats {
    pub fn total_stalls(&self) -> u64 {
        self.stalls.iter().flatten().sum()
    }

    pub fn mean_fill_round(&self, relay: usize) -> f64 {
        let v = &self.fill_rounds[relay];
        v.iter().sum::<u64>() as f64 / v.len().max(1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    /// Sorted by `(scope, overhead)`.
    pub rows: Vec<Row>,
    /// Trial spread of each row, aligned with `rows`.
    pub estimates: Vec<Estimate>,
    pub delay: DelayStats,
    /// Raw per-trial outcomes in trial order.
    pub outcomes: Vec<TrialOutcome>,
    pub overheads: Vec<f64>,
}

impl ExperimentResult {
    /// `(overhead, mean erasure rate)` points of one scope.
    pub fn curve(&self, scope: Scope) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.scope == scope)
            .map(|r| (r.overhead, r.erasure_rate))
            .collect()
    }

    /// Estimates of one scope, in overhead order.
    pub fn scope_estimates(&self, scope: Scope) -> Vec<Estimate> {
        self.rows
            .iter()
            .zip(&self.estimates)
            .filter(|(r, _)| r.scope == scope)
            .map(|(_, e)| *e)
            .collect()
    }

    /// Received checks at grid point `point`, across trials.
    pub fn received(&self, point: usize) -> Estimate {
        let xs: Vec<f64> = self.outcomes.iter().map(|o| o.received[point] as f64).collect();
        Estimate::from_samples(&xs)
    }
}

/// Runs `cfg.trials` trials in parallel. Trial `t` uses
/// `trial_seed(cfg.seed, t)` and results are combined in trial order, so the
/// output does not depend on thread scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let outcomes: Vec<TrialOutcome> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| run_trial(cfg, seed::trial_seed(cfg.seed, t)))
        .collect::<Result<_, _>>()?;
    Ok(aggregate(cfg, outcomes))
}

fn aggregate(cfg: &ExperimentConfig, outcomes: Vec<TrialOutcome>) -> ExperimentResult {
    let first = &outcomes[0].reports[0];
    let mut scopes = first.scopes();
    scopes.sort();
    let mut rows = Vec::new();
    let mut estimates = Vec::new();
    for &scope in &scopes {
        for (p, &overhead) in cfg.overheads.iter().enumerate() {
            let xs: Vec<f64> = outcomes
                .iter()
                .map(|o| o.reports[p].erasure_rate(scope).expect("scope taken from report"))
                .collect();
            let est = Estimate::from_samples(&xs);
            rows.push(Row {
                overhead,
                scope,
                erasure_rate: est.mean,
                trials: outcomes.len(),
                k: cfg.k(),
                scheme: cfg.scheme.name().to_string(),
                seed: cfg.seed,
            });
            estimates.push(est);
        }
    }
    let r = cfg.relays.len();
    let per_relay = |f: &dyn Fn(&TrialOutcome, usize) -> u64| -> Vec<Vec<u64>> {
        (0..r).map(|j| outcomes.iter().map(|o| f(o, j)).collect()).collect()
    };
    let delay = DelayStats {
        fill_rounds: per_relay(&|o, j| o.fill_rounds[j]),
        stalls: per_relay(&|o, j| o.stalls[j]),
        first_transmission: (0..r)
            .map(|j| outcomes.iter().map(|o| o.first_transmission[j]).collect())
            .collect(),
    };
    ExperimentResult {
        rows,
        estimates,
        delay,
        outcomes,
        overheads: cfg.overheads.clone(),
    }
}

/// Overhead at which a decreasing curve first reaches `target`, interpolated
/// linearly in `log(rate)` (linearly in rate when the lower end is 0).
pub fn crossing(curve: &[(f64, f64)], target: f64) -> Option<f64> {
    let idx = curve.iter().position(|&(_, y)| y <= target)?;
    if idx == 0 {
        return Some(curve[0].0);
    }
    let (x0, y0) = curve[idx - 1];
    let (x1, y1) = curve[idx];
    let t = if y1 > 0.0 {
        (y0.ln() - target.ln()) / (y0.ln() - y1.ln())
    } else {
        (y0 - target) / (y0 - y1)
    };
    Some(x0 + t * (x1 - x0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossingGap {
    pub target: f64,
    pub simulated: f64,
    pub predicted: f64,
    /// `simulated - predicted`.
    pub gap: f64,
}

/// Crossing overheads of a simulated curve and a DE curve (both against
/// transmission overhead) at each of `targets`.
pub fn compare_curves(
    simulated: &[(f64, f64)],
    predicted: &[(f64, f64)],
    targets: &[f64],
) -> Result<Vec<CrossingGap>, HarnessError> {
    targets
        .iter()
        .map(|&target| {
            let s = crossing(simulated, target).ok_or(HarnessError::NoCrossing {
                target,
                which: "simulated",
            })?;
            let p = crossing(predicted, target).ok_or(HarnessError::NoCrossing {
                target,
                which: "density-evolution",
            })?;
            Ok(CrossingGap {
                target,
                simulated: s,
                predicted: p,
                gap: s - p,
            })
        })
        .collect()
}

/// [`compare_curves`] for one scope of `result` at [`COMPARISON_TARGETS`].
pub fn compare_to_de(
    result: &ExperimentResult,
    scope: Scope,
    de_curve: &[(f64, f64)],
) -> Result<Vec<CrossingGap>, HarnessError> {
    compare_curves(&result.curve(scope), de_curve, &COMPARISON_TARGETS)
}

/// Average relay-destination erasure probability seen by the destination
/// under the configured schedule (relays equally likely to transmit).
pub fn effective_delta(cfg: &ExperimentConfig) -> f64 {
    cfg.relays.iter().map(|r| r.delta_d).sum::<f64>() / cfg.relays.len() as f64
}

/// One `de` output row.
#[derive(Debug, Clone, PartialEq)]
pub struct DeRow {
    pub epsilon_r: f64,
    pub scope: Scope,
    pub fixed_point: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn default_mode(cfg: &ExperimentConfig) -> DeMode {
    let r = cfg.relays.len();
    match (&cfg.windows, r) {
        (Some(_), 1) => DeMode::Dewlt,
        (Some(_), _) => DeMode::MultiRelayDewlt,
        (None, 1) if cfg.num_sources() == 1 => DeMode::Eep,
        (None, 1) => DeMode::Weighted,
        (None, _) => DeMode::MultiRelayWeighted,
    }
}

/// Density-evolution parameters at reception overhead `epsilon_r`. Multi-relay
/// modes split it over relays in proportion to `1 - δ_jd`.
pub fn de_params(file: &ConfigFile, epsilon_r: f64) -> Result<(DeMode, DEParams), HarnessError> {
    let cfg = &file.experiment;
    let mode = file.de_mode.unwrap_or_else(|| default_mode(cfg));
    let q = cfg.relays[0].q.clone();
    if cfg.relays.iter().any(|r| r.q != q) && mode != DeMode::Eep {
        return Err(HarnessError::Config("density evolution needs the same q at every relay".into()));
    }
    let mut p = DEParams::new(cfg.omega.clone(), cfg.relays[0].gamma.clone(), Load::EpsilonR(epsilon_r))
        .with_selection(q, cfg.alpha());
    p.dewlt_form = file.de_form;
    if let Some(w) = &cfg.windows {
        p = p.with_windows(cfg.classes.clone(), w.theta.coefficients().to_vec(), w.gammas.clone());
    }
    if matches!(mode, DeMode::MultiRelayWeighted | DeMode::MultiRelayDewlt | DeMode::WindowPerRelay) {
        let keep: Vec<f64> = cfg.relays.iter().map(|r| 1.0 - r.delta_d).collect();
        let total: f64 = keep.iter().sum();
        let shares = keep
            .iter()
            .map(|k| if total > 0.0 { epsilon_r * k / total } else { 0.0 })
            .collect();
        p = p.with_relays(cfg.relays.iter().map(|r| r.gamma.clone()).collect(), shares);
    }
    Ok((mode, p))
}

/// Fixed points over the config's `epsilon_r` grid.
pub fn de_rows(file: &ConfigFile) -> Result<Vec<DeRow>, HarnessError> {
    let grid = file
        .epsilon_r
        .as_ref()
        .ok_or_else(|| HarnessError::Config("missing key \"epsilon_r\"".into()))?;
    let mut rows = Vec::new();
    for &eps in grid {
        let (mode, p) = de_params(file, eps)?;
        let res = match mode {
            DeMode::Eep => analysis::de_eep(&p)?,
            DeMode::Weighted => analysis::de_uep_weighted(&p)?,
            DeMode::Dewlt => analysis::de_dewlt(&p)?,
            DeMode::MultiRelayWeighted => analysis::de_multirelay(&p, MultiRelayMode::Weighted)?,
            DeMode::MultiRelayDewlt => analysis::de_multirelay(&p, MultiRelayMode::Dewlt)?,
            DeMode::WindowPerRelay => analysis::de_multirelay(&p, MultiRelayMode::WindowPerRelay)?,
        };
        let scope = |i: usize| match mode {
            DeMode::Eep => Scope::Overall,
            DeMode::Weighted | DeMode::MultiRelayWeighted => Scope::Source(i + 1),
            _ => Scope::Class(i + 1),
        };
        for (i, &v) in res.fixed_point.iter().enumerate() {
            rows.push(DeRow {
                epsilon_r: eps,
                scope: scope(i),
                fixed_point: v,
                iterations: res.iterations,
                converged: res.converged,
            });
        }
    }
    rows.sort_by(|a, b| a.scope.cmp(&b.scope).then(a.epsilon_r.total_cmp(&b.epsilon_r)));
    Ok(rows)
}

/// EEP fixed points against transmission overhead:
/// `ε_r = (1 - δ_eff) ε` at each point of the overhead grid.
pub fn de_eep_curve(cfg: &ExperimentConfig) -> Result<Vec<(f64, f64)>, HarnessError> {
    let keep = 1.0 - effective_delta(cfg);
    cfg.overheads
        .iter()
        .map(|&g| {
            let p = DEParams::new(cfg.omega.clone(), cfg.relays[0].gamma.clone(), Load::EpsilonR(keep * g));
            Ok((g, analysis::de_eep(&p)?.fixed_point[0]))
        })
        .collect()
}

/// Parameters of the degree-0 bound for one configuration: per window `j`,
/// `θ_j`, `ρ_j = Γ'_jW(1) Ω'(1)` and `κ_wj` (bits in window `j`). Without
/// windows there is one window holding everything.
pub fn bound_params(cfg: &ExperimentConfig) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mean_omega = cfg.omega.mean_degree();
    match &cfg.windows {
        None => (
            vec![1.0],
            vec![cfg.relays[0].gamma.mean_degree() * mean_omega],
            vec![cfg.k() as f64],
        ),
        Some(w) => {
            let num = cfg.num_classes();
            let mut class_bits = vec![0.0; num];
            for (c, &k) in cfg.classes.iter().zip(&cfg.block_lengths) {
                class_bits[c - 1] += k as f64;
            }
            let kappa_w = class_bits
                .iter()
                .scan(0.0, |acc, x| {
                    *acc += x;
                    Some(*acc)
                })
                .collect();
            let rho = w.gammas.iter().map(|g| g.mean_degree() * mean_omega).collect();
            (w.theta.coefficients().to_vec(), rho, kappa_w)
        }
    }
}

/// One `bound` output row.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub epsilon_r: f64,
    pub scope: Scope,
    pub bound: f64,
}

/// Degree-0 lower bound per class over the config's `epsilon_r` grid.
pub fn bound_rows(file: &ConfigFile) -> Result<Vec<BoundRow>, HarnessError> {
    let grid = file
        .epsilon_r
        .as_ref()
        .ok_or_else(|| HarnessError::Config("missing key \"epsilon_r\"".into()))?;
    let cfg = &file.experiment;
    let (theta, rho, kappa_w) = bound_params(cfg);
    let k = cfg.k() as f64;
    let mut rows = Vec::new();
    for class in 1..=theta.len() {
        for &eps in grid {
            rows.push(BoundRow {
                epsilon_r: eps,
                scope: Scope::Class(class),
                bound: analysis::ml_lower_bound(&theta, &rho, &kappa_w, k, eps, class)?,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rsd() -> DegreeDistribution {
        DegreeDistribution::robust_soliton(100, 0.05, 0.5).unwrap()
    }

    fn rdd() -> DegreeDistribution {
        DegreeDistribution::from_weights(&[0.7520, 0.1685, 0.0455, 0.0340], Perspective::Node, DistKind::Relay)
            .unwrap()
    }

    fn point(d: usize) -> DegreeDistribution {
        DegreeDistribution::point_mass(d, Perspective::Node, DistKind::Relay)
    }

    fn small(scheme: RelayScheme) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(vec![200, 200, 200, 400], 4, rsd(), rdd(), scheme);
        c.overheads = vec![0.5, 1.0, 1.5];
        c.trials = 4;
        c.seed = 11;
        c
    }

    /// Plain LT code: one source, one relay forwarding every symbol.
    fn plain_lt(k: usize, overheads: Vec<f64>) -> ExperimentConfig {
        let omega = DegreeDistribution::robust_soliton(k, 0.05, 0.5).unwrap();
        let mut c = ExperimentConfig::new(vec![k], 1, omega, point(1), RelayScheme::ShiftBuffer);
        c.overheads = overheads;
        c
    }

    /// Independent LT simulation with the same Ω: Gaussian elimination is
    /// not needed, a direct peeling loop over explicit neighbor sets.
    fn standalone_lt(k: usize, n: usize, omega: &DegreeDistribution, seed: u64) -> f64 {
        use rand::seq::index::sample;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let mut checks: Vec<Vec<usize>> = (0..n)
            .map(|_| {
                let d = omega.sample(&mut rng).min(k);
                sample(&mut rng, k, d).into_vec()
            })
            .collect();
        let mut known = vec![false; k];
        loop {
            let mut progress = false;
            for c in checks.iter_mut() {
                c.retain(|v| !known[*v]);
                if c.len() == 1 {
                    known[c[0]] = true;
                    progress = true;
                }
            }
            if !progress {
                break;
            }
        }
        known.iter().filter(|b| !**b).count() as f64 / k as f64
    }

    #[test]
    fn plain_lt_matches_standalone_oracle() {
        let k = 1000;
        let mut c = plain_lt(k, vec![1.1, 1.3]);
        c.trials = 40;
        let res = run_experiment(&c).unwrap();
        let sim = res.curve(Scope::Overall);
        assert!(sim[1].1 < 1e-2, "{sim:?}");
        let omega = c.omega.clone();
        for (p, &g) in c.overheads.iter().enumerate() {
            let n = (g * k as f64).round() as usize;
            let xs: Vec<f64> = (0..40).map(|t| standalone_lt(k, n, &omega, 1000 + t)).collect();
            let oracle = Estimate::from_samples(&xs);
            let est = res.scope_estimates(Scope::Overall)[p];
            let tol = 3.0 * (oracle.ci95() + est.ci95()) + 1e-3;
            assert!((oracle.mean - est.mean).abs() < tol, "{g}: {} vs {}", est.mean, oracle.mean);
        }
    }

    #[test]
    fn lossless_shift_starts_at_depth_plus_one() {
        for depth in [1, 2, 4, 8] {
            let mut c = ExperimentConfig::new(vec![64; 4], depth, rsd(), rdd(), RelayScheme::ShiftBuffer);
            c.overheads = vec![0.5];
            let o = run_trial(&c, 5).unwrap();
            assert_eq!(o.fill_rounds, vec![depth as u64]);
            assert_eq!(o.first_transmission, vec![Some(depth as u64 + 1)]);
            assert_eq!(o.received[0], 128);
        }
    }

    #[test]
    fn one_bit_never_stalls_after_fill() {
        let mut c = small(RelayScheme::OneBit);
        c.source_delta = vec![vec![0.3]; 4];
        let res = run_experiment(&c).unwrap();
        assert_eq!(res.delay.total_stalls(), 0);
        assert!(res.delay.fill_rounds[0].iter().all(|&f| f >= 1));
    }

    #[test]
    fn slot_buffer_fill_delay_and_no_stalls() {
        let mut c = small(RelayScheme::SlotBuffer);
        c.source_delta = vec![vec![0.2]; 4];
        let res = run_experiment(&c).unwrap();
        assert_eq!(res.delay.total_stalls(), 0);
        assert!(res.delay.fill_rounds[0].iter().all(|&f| f >= c.depth as u64));
    }

    #[test]
    fn conventional_stalls_are_counted() {
        let mut c = small(RelayScheme::Conventional);
        c.source_delta = vec![vec![0.3]; 4];
        let res = run_experiment(&c).unwrap();
        assert!(res.delay.total_stalls() > 0);
        c.policy = ErasurePolicy::Reselect;
        let res = run_experiment(&c).unwrap();
        assert_eq!(res.delay.fill_rounds[0], vec![0; 4]);
    }

    #[test]
    fn deterministic_and_trial_one_matches_run_trial() {
        let c = small(RelayScheme::ShiftBuffer);
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        write_csv(&a, &mut ca).unwrap();
        write_csv(&b, &mut cb).unwrap();
        assert_eq!(ca, cb);

        let mut one = c.clone();
        one.trials = 1;
        let res = run_experiment(&one).unwrap();
        let trial = run_trial(&one, seed::trial_seed(one.seed, 0)).unwrap();
        for row in &res.rows {
            let p = one.overheads.iter().position(|g| *g == row.overhead).unwrap();
            assert_eq!(row.erasure_rate, trial.reports[p].erasure_rate(row.scope).unwrap());
        }
    }

    #[test]
    fn rows_sorted_and_in_range() {
        let mut c = small(RelayScheme::ShiftBuffer);
        c.classes = vec![1, 2, 2, 2];
        let res = run_experiment(&c).unwrap();
        assert_eq!(res.rows.len(), (1 + 4 + 2) * 3);
        for w in res.rows.windows(2) {
            assert!((w[0].scope, w[0].overhead) < (w[1].scope, w[1].overhead));
        }
        assert!(res.rows.iter().all(|r| (0.0..=1.0).contains(&r.erasure_rate)));
        let overall = res.curve(Scope::Overall);
        assert!(overall.windows(2).all(|w| w[1].1 <= w[0].1));
    }

    #[test]
    fn payload_tracking_decodes_correct_bits() {
        for scheme in [RelayScheme::ShiftBuffer, RelayScheme::SlotBuffer, RelayScheme::OneBit, RelayScheme::Conventional] {
            let mut c = small(scheme);
            c.payload = true;
            c.source_delta = vec![vec![0.1]; 4];
            c.relays[0].delta_d = 0.1;
            run_experiment(&c).unwrap();
        }
    }

    #[test]
    fn received_checks_track_relay_erasures() {
        let mut c = small(RelayScheme::ShiftBuffer);
        c.relays[0].delta_d = 0.25;
        c.overheads = vec![2.0];
        c.trials = 30;
        let res = run_experiment(&c).unwrap();
        let n = (2.0 * c.k() as f64).round();
        let est = res.received(0);
        let expected = 0.75 * n;
        let sigma = (n * 0.25 * 0.75).sqrt() / (c.trials as f64).sqrt();
        assert!((est.mean - expected).abs() < 3.0 * sigma, "{} vs {expected}", est.mean);
    }

    #[test]
    fn multi_relay_schedules() {
        let mut c = small(RelayScheme::ShiftBuffer);
        c.relays = vec![c.relays[0].clone(); 3];
        c.source_delta = vec![vec![0.0; 3]; 4];
        for schedule in [Schedule::RoundRobin, Schedule::RandomOne, Schedule::All] {
            c.schedule = schedule;
            let o = run_trial(&c, 3).unwrap();
            let first: Vec<_> = o.first_transmission.iter().map(|f| f.unwrap()).collect();
            match schedule {
                Schedule::RoundRobin => assert_eq!(first, vec![5, 6, 7]),
                Schedule::All => assert_eq!(first, vec![5, 5, 5]),
                Schedule::RandomOne => assert!(first.iter().all(|&f| f >= 5)),
            }
        }
    }

    #[test]
    fn round_limit() {
        let mut c = small(RelayScheme::ShiftBuffer);
        c.source_delta = vec![vec![1.0]; 4];
        c.max_rounds = Some(50);
        assert!(matches!(run_trial(&c, 1), Err(HarnessError::RoundLimit(50))));
    }

    #[test]
    fn invalid_configs() {
        let base = small(RelayScheme::ShiftBuffer);
        let mut bad = Vec::new();
        let mut c = base.clone();
        c.overheads = vec![1.0, 1.0];
        bad.push(c);
        let mut c = base.clone();
        c.trials = 0;
        bad.push(c);
        let mut c = base.clone();
        c.relays[0].delta_d = -0.1;
        bad.push(c);
        let mut c = base.clone();
        c.block_lengths[0] = 202;
        bad.push(c);
        let mut c = base.clone();
        c.relays[0].q = vec![0.5, 0.5];
        bad.push(c);
        for c in bad {
            assert!(matches!(run_experiment(&c), Err(HarnessError::Config(_))));
        }
    }

    #[test]
    fn crossings() {
        let curve = vec![(1.0, 1e-1), (2.0, 1e-3), (3.0, 0.0)];
        assert!((crossing(&curve, 1e-2).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(crossing(&curve, 0.5), Some(1.0));
        assert!((crossing(&curve, 5e-4).unwrap() - 2.5).abs() < 1e-12);
        let gaps = compare_curves(&curve, &curve, &COMPARISON_TARGETS).unwrap();
        assert!(gaps.iter().all(|g| g.gap == 0.0));
        let floor = vec![(1.0, 0.2), (2.0, 0.05), (3.0, 0.04)];
        assert!(matches!(
            compare_curves(&floor, &curve, &COMPARISON_TARGETS),
            Err(HarnessError::NoCrossing { which: "simulated", .. })
        ));
    }

    #[test]
    fn eep_curve_is_shifted_by_erasures() {
        let mut c = small(RelayScheme::ShiftBuffer);
        c.overheads = vec![2.0];
        let lossless = de_eep_curve(&c).unwrap();
        c.relays[0].delta_d = 0.5;
        let lossy = de_eep_curve(&c).unwrap();
        let mut half = c.clone();
        half.relays[0].delta_d = 0.0;
        half.overheads = vec![1.0];
        assert_eq!(lossy[0].1, de_eep_curve(&half).unwrap()[0].1);
        assert!(lossy[0].1 > lossless[0].1);
    }

    #[test]
    fn de_and_bound_rows() {
        let text = "block_lengths = 100,100,200,400\ndepth = 4\nomega = rsd:100,0.05,0.5\n\
                    gamma = 0.7520,0.1685,0.0455,0.0340\nq = 0.4,0.3,0.2,0.1\nepsilon_r = 1.5,2.0\n";
        let file = parse_config(text, std::path::Path::new(".")).unwrap();
        let rows = de_rows(&file).unwrap();
        assert_eq!(rows.len(), 8);
        assert_eq!(rows[0].scope, Scope::Source(1));
        let at = |i: usize| rows.iter().find(|r| r.scope == Scope::Source(i) && r.epsilon_r == 2.0).unwrap();
        assert!(at(1).fixed_point <= at(4).fixed_point);

        let bounds = bound_rows(&file).unwrap();
        assert_eq!(bounds.len(), 2);
        let mu = file.experiment.relays[0].gamma.mean_degree() * file.experiment.omega.mean_degree() * 2.0;
        assert!((bounds[1].bound - (-mu).exp()).abs() < 1e-3);
    }
}
