//! Experiment config files.
//!
//! Flat UTF-8 text. Each non-empty line is `key = value`; `#` starts a
//! comment. List values are comma-separated. Ranges `a:b:step` expand to
//! `a, a+step, …` up to `b` inclusive (with a small tolerance). The optional
//! `[deltas]` section holds one row per source with one erasure
//! probability per relay.
//!
//! | key | value |
//! |-----|-------|
//! | `block_lengths` | `K_1, …, K_S` |
//! | `sources`, `block_length` | alternative to `block_lengths`: `S` equal blocks |
//! | `depth` | buffer depth `D` (default 1) |
//! | `omega` | `rsd:K,c,delta`, a probability list, or `file:<path>` |
//! | `relays` | `R` (default 1) |
//! | `gamma`, `gamma.<j>` | relay-degree distribution (all relays / relay `j`) |
//! | `q`, `q.<j>` | selection probabilities (default: block-size fractions) |
//! | `scheme` | `shift_buffer`, `slot_buffer`, `one_bit`, `conventional` |
//! | `conventional_policy` | `stall` (default) or `reselect` |
//! | `schedule` | `random_one` (default), `round_robin`, `all` |
//! | `relay_delta` | one value or one per relay |
//! | `source_delta` | one value for every source-relay link |
//! | `overheads` | transmission-overhead grid |
//! | `trials`, `seed`, `payload` | Monte-Carlo controls |
//! | `classes` | importance class per source (default all 1) |
//! | `theta`, `window_gamma.<j>` | expanding windows |
//! | `epsilon_r` | reception-overhead grid for `de` and `bound` |
//! | `de_mode` | `eep`, `weighted`, `dewlt`, `multirelay_weighted`, `multirelay_dewlt`, `window_per_relay` |
//! | `de_form` | `literal` (default) or `edge_consistent` |
//! | `max_rounds` | safety cap on simulated rounds |

use std::collections::BTreeMap;
use std::path::Path;

use crate::analysis::DewltForm;
use crate::dist::{DegreeDistribution, DistKind, Perspective};
use crate::relay::{ErasurePolicy, RelayScheme};

use super::{ExperimentConfig, HarnessError, RelaySpec, Schedule, WindowConfig};

/// Which recursion the `de` command evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeMode {
    Eep,
    Weighted,
    Dewlt,
    MultiRelayWeighted,
    MultiRelayDewlt,
    WindowPerRelay,
}

impl std::str::FromStr for DeMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "eep" => DeMode::Eep,
            "weighted" => DeMode::Weighted,
            "dewlt" => DeMode::Dewlt,
            "multirelay_weighted" => DeMode::MultiRelayWeighted,
            "multirelay_dewlt" => DeMode::MultiRelayDewlt,
            "window_per_relay" => DeMode::WindowPerRelay,
            other => return Err(format!("unknown de_mode {other:?}")),
        })
    }
}

const KNOWN_KEYS: &[&str] = &[
    "sources",
    "block_length",
    "block_lengths",
    "depth",
    "omega",
    "relays",
    "gamma",
    "q",
    "scheme",
    "conventional_policy",
    "schedule",
    "relay_delta",
    "source_delta",
    "overheads",
    "trials",
    "seed",
    "payload",
    "classes",
    "theta",
    "epsilon_r",
    "de_mode",
    "de_form",
    "max_rounds",
];
const INDEXED_KEYS: &[&str] = &["gamma", "q", "window_gamma"];

struct Raw {
    values: BTreeMap<String, (usize, String)>,
    deltas: Vec<(usize, String)>,
}

fn err(line: usize, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(format!("line {line}: {msg}"))
}

fn missing(key: &str) -> HarnessError {
    HarnessError::Config(format!("missing key {key:?}"))
}

fn split_lines(text: &str) -> Result<Raw, HarnessError> {
    let mut values = BTreeMap::new();
    let mut deltas = Vec::new();
    let mut in_deltas = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if line != "[deltas]" {
                return Err(err(line_no, format!("unknown section {line}")));
            }
            in_deltas = true;
            continue;
        }
        if in_deltas {
            deltas.push((line_no, line.to_string()));
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(line_no, "expected `key = value`"))?;
        let key = key.trim().to_string();
        let base = key.split('.').next().unwrap_or("");
        let known = if key.contains('.') {
            INDEXED_KEYS.contains(&base) && key[base.len() + 1..].parse::<usize>().map(|j| j >= 1).unwrap_or(false)
        } else {
            KNOWN_KEYS.contains(&key.as_str())
        };
        if !known {
            return Err(err(line_no, format!("unknown key {key:?}")));
        }
        if values.insert(key.clone(), (line_no, value.trim().to_string())).is_some() {
            return Err(err(line_no, format!("duplicate key {key:?}")));
        }
    }
    Ok(Raw { values, deltas })
}

impl Raw {
    fn get(&self, key: &str) -> Option<&(usize, String)> {
        self.values.get(key)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, HarnessError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|(line, v)| v.parse::<T>().map_err(|e| err(*line, format!("{key}: {e}"))))
            .transpose()
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, HarnessError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key).map(|(line, v)| parse_list(v).map_err(|e| err(*line, format!("{key}: {e}")))).transpose()
    }

    fn grid(&self, key: &str) -> Result<Option<Vec<f64>>, HarnessError> {
        self.get(key)
            .map(|(line, v)| parse_grid(v).map_err(|e| err(*line, format!("{key}: {e}"))))
            .transpose()
    }

    fn dist(&self, key: &str, kind: DistKind, base: &Path) -> Result<Option<DegreeDistribution>, HarnessError> {
        self.get(key)
            .map(|(line, v)| parse_dist(v, kind, base).map_err(|e| err(*line, format!("{key}: {e}"))))
            .transpose()
    }
}

pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|t| t.trim().parse::<T>().map_err(|e| format!("{:?}: {e}", t.trim())))
        .collect()
}

/// `a:b:step` or a comma list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 1 {
        return parse_list(s);
    }
    if parts.len() != 3 {
        return Err(format!("range {s:?} must be start:stop:step"));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let (a, b, step) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0) || b < a {
        return Err(format!("range {s:?} needs step > 0 and stop >= start"));
    }
    let count = ((b - a) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|i| a + step * i as f64).collect())
}

/// `rsd:K,c,delta`, `file:<path>`, or probabilities indexed from degree 1.
/// Listed probabilities may be rounded; they are renormalized if they sum
/// to within 1e-3 of one.
pub fn parse_dist(s: &str, kind: DistKind, base: &Path) -> Result<DegreeDistribution, String> {
    if let Some(args) = s.strip_prefix("rsd:") {
        let p: Vec<f64> = parse_list(args)?;
        if p.len() != 3 || p[0] < 1.0 || p[0].fract() != 0.0 {
            return Err("rsd needs K,c,delta with integer K".into());
        }
        return DegreeDistribution::robust_soliton(p[0] as usize, p[1], p[2])
            .map(|d| d.with_kind(kind))
            .map_err(|e| e.to_string());
    }
    if let Some(path) = s.strip_prefix("file:") {
        let path = base.join(path.trim());
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        return text
            .parse::<DegreeDistribution>()
            .map(|d| d.with_kind(kind))
            .map_err(|e| e.to_string());
    }
    let w: Vec<f64> = parse_list(s)?;
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > 1e-3 {
        return Err(format!("probabilities sum to {sum}"));
    }
    DegreeDistribution::from_weights(&w, Perspective::Node, kind).map_err(|e| e.to_string())
}

fn check_prob(v: f64, what: &str) -> Result<(), HarnessError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(HarnessError::Config(format!("{what} = {v} outside [0, 1]")));
    }
    Ok(())
}

/// Parsed config plus the `de`/`bound` extras.
#[derive(Debug, Clone)]
pub struct ConfigFile {
    pub experiment: ExperimentConfig,
    pub epsilon_r: Option<Vec<f64>>,
    pub de_mode: Option<DeMode>,
    pub de_form: DewltForm,
}

pub fn load_config(path: &Path) -> Result<ConfigFile, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Parses config text; `file:` references resolve against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<ConfigFile, HarnessError> {
    let raw = split_lines(text)?;

    let block_lengths: Vec<usize> = match raw.list::<usize>("block_lengths")? {
        Some(b) => {
            if let Some(s) = raw.parse::<usize>("sources")? {
                if s != b.len() {
                    return Err(HarnessError::Config(format!("sources = {s} but {} block lengths", b.len())));
                }
            }
            b
        }
        None => {
            let s = raw.parse::<usize>("sources")?.ok_or_else(|| missing("block_lengths"))?;
            let k = raw.parse::<usize>("block_length")?.ok_or_else(|| missing("block_length"))?;
            vec![k; s]
        }
    };
    let s = block_lengths.len();
    if s == 0 || block_lengths.contains(&0) {
        return Err(HarnessError::Config("block lengths must be positive".into()));
    }
    let total: usize = block_lengths.iter().sum();
    let alpha: Vec<f64> = block_lengths.iter().map(|&k| k as f64 / total as f64).collect();

    let depth = raw.parse::<usize>("depth")?.unwrap_or(1);
    let omega = raw
        .dist("omega", DistKind::Check, base)?
        .ok_or_else(|| missing("omega"))?;
    let r = raw.parse::<usize>("relays")?.unwrap_or(1);
    if r == 0 {
        return Err(HarnessError::Config("relays must be >= 1".into()));
    }

    let scheme: RelayScheme = raw.parse("scheme")?.unwrap_or(RelayScheme::ShiftBuffer);
    let policy = match raw.get("conventional_policy").map(|(l, v)| (*l, v.as_str())) {
        None | Some((_, "stall")) => ErasurePolicy::Stall,
        Some((_, "reselect")) => ErasurePolicy::Reselect,
        Some((l, other)) => return Err(err(l, format!("unknown conventional_policy {other:?}"))),
    };
    let schedule: Schedule = raw.parse("schedule")?.unwrap_or(Schedule::RandomOne);

    let relay_delta: Vec<f64> = raw.list::<f64>("relay_delta")?.unwrap_or_else(|| vec![0.0]);
    let relay_delta = match relay_delta.len() {
        1 => vec![relay_delta[0]; r],
        n if n == r => relay_delta,
        n => return Err(HarnessError::Config(format!("relay_delta has {n} values for {r} relays"))),
    };

    let mut source_delta = vec![vec![raw.parse::<f64>("source_delta")?.unwrap_or(0.0); r]; s];
    if !raw.deltas.is_empty() {
        if raw.get("source_delta").is_some() {
            return Err(HarnessError::Config("give either source_delta or [deltas], not both".into()));
        }
        if raw.deltas.len() != s {
            return Err(err(raw.deltas[0].0, format!("[deltas] has {} rows for {s} sources", raw.deltas.len())));
        }
        for (i, (line, row)) in raw.deltas.iter().enumerate() {
            let vals: Vec<f64> = parse_list(row).map_err(|e| err(*line, e))?;
            if vals.len() != r {
                return Err(err(*line, format!("{} values for {r} relays", vals.len())));
            }
            source_delta[i] = vals;
        }
    }
    for v in source_delta.iter().flatten().chain(&relay_delta) {
        check_prob(*v, "erasure probability")?;
    }

    let classes = raw.list::<usize>("classes")?.unwrap_or_else(|| vec![1; s]);
    if classes.len() != s || classes.contains(&0) {
        return Err(HarnessError::Config("classes needs one 1-based class per source".into()));
    }
    let theta = raw.list::<f64>("theta")?;
    let windows = match theta {
        None => None,
        Some(theta) => {
            let gammas = (1..=theta.len())
                .map(|j| {
                    raw.dist(&format!("window_gamma.{j}"), DistKind::Relay, base)?
                        .ok_or_else(|| missing(&format!("window_gamma.{j}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let theta = DegreeDistribution::with_zero_tail(&theta, Perspective::Node, DistKind::WindowAssignment)
                .map_err(|e| HarnessError::Config(format!("theta: {e}")))?;
            Some(WindowConfig { theta, gammas })
        }
    };

    let default_gamma = raw.dist("gamma", DistKind::Relay, base)?;
    let default_q = match raw.list::<f64>("q")? {
        Some(q) => q,
        None => alpha.clone(),
    };
    let mut relays = Vec::with_capacity(r);
    for j in 1..=r {
        let gamma = match raw.dist(&format!("gamma.{j}"), DistKind::Relay, base)? {
            Some(g) => g,
            None => default_gamma.clone().ok_or_else(|| missing("gamma"))?,
        };
        let q = raw.list::<f64>(&format!("q.{j}"))?.unwrap_or_else(|| default_q.clone());
        relays.push(RelaySpec {
            gamma,
            q,
            delta_d: relay_delta[j - 1],
        });
    }
    for key in raw.values.keys() {
        if let Some((_, idx)) = key.split_once('.') {
            let j: usize = idx.parse().unwrap_or(0);
            let limit = if key.starts_with("window_gamma") {
                windows.as_ref().map_or(0, |w| w.gammas.len())
            } else {
                r
            };
            if j > limit {
                return Err(HarnessError::Config(format!("{key} refers to a missing relay or window")));
            }
        }
    }

    let overheads = raw.grid("overheads")?.unwrap_or_default();
    let experiment = ExperimentConfig {
        block_lengths,
        depth,
        omega,
        relays,
        source_delta,
        scheme,
        policy,
        schedule,
        overheads,
        trials: raw.parse("trials")?.unwrap_or(1),
        seed: raw.parse("seed")?.unwrap_or(0),
        payload: raw.parse("payload")?.unwrap_or(false),
        classes,
        windows,
        max_rounds: raw.parse("max_rounds")?,
    };
    let de_form = match raw.get("de_form").map(|(l, v)| (*l, v.as_str())) {
        None | Some((_, "literal")) => DewltForm::Literal,
        Some((_, "edge_consistent")) => DewltForm::EdgeConsistent,
        Some((l, other)) => return Err(err(l, format!("unknown de_form {other:?}"))),
    };
    Ok(ConfigFile {
        experiment,
        epsilon_r: raw.grid("epsilon_r")?,
        de_mode: raw.parse("de_mode")?,
        de_form,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = "
# four sources
block_lengths = 100, 100, 200, 400
depth = 4
omega = rsd:50,0.1,0.5
gamma = 0.7520,0.1685,0.0455,0.0340
relay_delta = 0.1
overheads = 0.5:1.0:0.25
trials = 3
seed = 7
";

    fn parse(text: &str) -> Result<ConfigFile, HarnessError> {
        parse_config(text, Path::new("."))
    }

    #[test]
    fn basic_config() {
        let c = parse(BASIC).unwrap().experiment;
        assert_eq!(c.block_lengths, vec![100, 100, 200, 400]);
        assert_eq!(c.depth, 4);
        assert_eq!(c.overheads, vec![0.5, 0.75, 1.0]);
        assert_eq!(c.relays.len(), 1);
        assert_eq!(c.relays[0].delta_d, 0.1);
        assert_eq!(c.relays[0].q, vec![0.125, 0.125, 0.25, 0.5]);
        assert_eq!(c.scheme, RelayScheme::ShiftBuffer);
        assert_eq!(c.schedule, Schedule::RandomOne);
        assert_eq!(c.trials, 3);
        assert_eq!(c.seed, 7);
        assert_eq!(c.source_delta, vec![vec![0.0]; 4]);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn deltas_section_and_per_relay_keys() {
        let text = "
sources = 2
block_length = 40
omega = 0.5,0.5
relays = 3
gamma = 1
gamma.2 = 0,1
q.3 = 0.9,0.1
relay_delta = 0.1, 0.08, 0.05
schedule = round_robin
[deltas]
0.1, 0.2, 0.3
0, 0, 1
";
        let c = parse(text).unwrap().experiment;
        assert_eq!(c.source_delta, vec![vec![0.1, 0.2, 0.3], vec![0.0, 0.0, 1.0]]);
        assert_eq!(c.relays[1].gamma.mass(2), 1.0);
        assert_eq!(c.relays[2].q, vec![0.9, 0.1]);
        assert_eq!(c.relays[0].q, vec![0.5, 0.5]);
        assert_eq!(c.relays[2].delta_d, 0.05);
        assert_eq!(c.schedule, Schedule::RoundRobin);
    }

    #[test]
    fn windows() {
        let text = format!("{BASIC}classes = 1,1,2,2\ntheta = 0.3,0.7\nwindow_gamma.1 = 1\nwindow_gamma.2 = 0.5,0.5\n");
        let c = parse(&text).unwrap().experiment;
        let w = c.windows.unwrap();
        assert_eq!(w.gammas.len(), 2);
        assert_eq!(c.classes, vec![1, 1, 2, 2]);
        let text = format!("{BASIC}classes = 1,1,2,2\ntheta = 0.3,0.7\nwindow_gamma.1 = 1\n");
        assert!(parse(&text).is_err());
    }

    #[test]
    fn rejects_bad_input() {
        let bad = [
            format!("{BASIC}colour = red\n"),
            format!("{BASIC}depth = 2\n"),
            format!("{BASIC}relay_delta = 1.5\n").replace("relay_delta = 0.1\n", ""),
            format!("{BASIC}[other]\n"),
            format!("{BASIC}scheme = teleport\n"),
            format!("{BASIC}gamma.2 = 1\n"),
            BASIC.replace("omega = rsd:50,0.1,0.5\n", ""),
            BASIC.replace("overheads = 0.5:1.0:0.25", "overheads = 1.0:0.5:0.25"),
            format!("{BASIC}no equals sign\n"),
            BASIC.replace("0.0340", "0.5"),
        ];
        for text in &bad {
            assert!(matches!(parse(text), Err(HarnessError::Config(_))), "{text}");
        }
    }

    #[test]
    fn grid_forms() {
        assert_eq!(parse_grid("1,2,3").unwrap(), vec![1.0, 2.0, 3.0]);
        let g = parse_grid("0.1:0.3:0.1").unwrap();
        assert_eq!(g.len(), 3);
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("0:1:0").is_err());
    }

    #[test]
    fn dist_from_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("g.txt"), "# relay\n1:0.25\n3:0.75\n").unwrap();
        let d = parse_dist("file:g.txt", DistKind::Relay, dir.path()).unwrap();
        assert_eq!(d.mass(3), 0.75);
        assert_eq!(d.kind(), DistKind::Relay);
        assert!(parse_dist("file:missing.txt", DistKind::Relay, dir.path()).is_err());
    }
}
