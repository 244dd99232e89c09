//! Linear programs for relay-degree design and a small dense simplex solver.
//!
//! The variables are the edge-perspective coefficients `γ_1..γ_dmax`. The
//! objective `(μ̄/Ω'(1)) Σ γ_j/j` is the reception overhead `ε_r`, and each
//! grid row asks the density-evolution update to make progress at that
//! point.

use thiserror::Error;

use crate::analysis::{de_eep, de_uep_weighted, AnalysisError, DEParams, Load};
use crate::dist::{DegreeDistribution, DistError, DistKind, Perspective};

/// Tolerance for accepting a row as satisfied.
pub const FEASIBILITY_TOL: f64 = 1e-7;
/// DE validation runs at this multiple of the optimal overhead.
pub const VALIDATION_MARGIN: f64 = 1.02;

const PIVOT_TOL: f64 = 1e-11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("linear program is {0:?}")]
    Solver(LpStatus),
    #[error("validation failed: fixed point {fixed_point:e} exceeds target {target:e} for {scope} at epsilon_r = {epsilon_r}")]
    ValidationFailed {
        scope: String,
        fixed_point: f64,
        target: f64,
        epsilon_r: f64,
    },
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Ge,
    Le,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(coeffs: Vec<f64>, relation: Relation, rhs: f64) -> Self {
        Self { coeffs, relation, rhs }
    }

    /// Signed slack: non-negative when satisfied (for `Eq`, minus the
    /// absolute violation).
    pub fn residual(&self, x: &[f64]) -> f64 {
        let lhs: f64 = self.coeffs.iter().zip(x).map(|(a, b)| a * b).sum();
        match self.relation {
            Relation::Ge => lhs - self.rhs,
            Relation::Le => self.rhs - lhs,
            Relation::Eq => -(lhs - self.rhs).abs(),
        }
    }
}

/// Minimize `objective · x` subject to `constraints` and `x ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    /// Discretization grid (`x_i` for LP1, `z_k` for LP2); empty for
    /// hand-built problems.
    pub grid: Vec<f64>,
    /// Target erasure rate.
    pub eps: f64,
}

impl LpProblem {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    /// Smallest residual over all constraints and bounds.
    pub fn min_residual(&self, x: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.residual(x))
            .chain(x.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal solution; empty unless optimal.
    pub x: Vec<f64>,
    pub objective_value: f64,
}

impl LpSolution {
    /// The solution read as an edge-perspective relay distribution. Tiny
    /// negative round-off is clipped before renormalizing.
    pub fn gamma_edge(&self) -> Result<DegreeDistribution, OptimizerError> {
        if self.status != LpStatus::Optimal {
            return Err(OptimizerError::Solver(self.status));
        }
        let clipped: Vec<f64> = self.x.iter().map(|v| v.max(0.0)).collect();
        Ok(DegreeDistribution::from_weights(&clipped, Perspective::Edge, DistKind::Relay)?)
    }
}

/// Dense tableau; column `n` of each row is the right-hand side.
struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        self.rows[r].iter_mut().for_each(|v| *v /= p);
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        self.basis[r] = c;
    }

    /// Minimizes `cost · x` over the current basis using Bland's rule.
    /// Columns with `allowed[c] == false` never enter.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool]) -> Result<(), LpStatus> {
        let rhs = self.cols;
        loop {
            // Reduced costs c_j - c_B B^-1 A_j.
            let mut reduced = cost[..self.cols].to_vec();
            for (row, &b) in self.rows.iter().zip(&self.basis) {
                if cost[b] != 0.0 {
                    for (rj, a) in reduced.iter_mut().zip(row) {
                        *rj -= cost[b] * a;
                    }
                }
            }
            let entering =
                (0..self.cols).find(|&j| allowed[j] && !self.basis.contains(&j) && reduced[j] < -1e-10);
            let Some(c) = entering else {
                return Ok(());
            };
            let mut best: Option<(usize, f64)> = None;
            for (r, row) in self.rows.iter().enumerate() {
                if row[c] > PIVOT_TOL {
                    let ratio = row[rhs] / row[c];
                    let better = match best {
                        None => true,
                        Some((br, bv)) => {
                            ratio < bv - 1e-12 || (ratio <= bv + 1e-12 && self.basis[r] < self.basis[br])
                        }
                    };
                    if better {
                        best = Some((r, ratio));
                    }
                }
            }
            match best {
                Some((r, _)) => self.pivot(r, c),
                None => return Err(LpStatus::Unbounded),
            }
        }
    }
}

/// Two-phase dense simplex with Bland's anti-cycling rule.
pub fn solve_lp(p: &LpProblem) -> LpSolution {
    let n = p.num_vars();
    let m = p.constraints.len();
    let failed = |status| LpSolution {
        status,
        x: Vec::new(),
        objective_value: f64::NAN,
    };
    // Normalize to non-negative right-hand sides.
    let rows: Vec<(Vec<f64>, Relation, f64)> = p
        .constraints
        .iter()
        .map(|c| {
            let mut coeffs = c.coeffs.clone();
            coeffs.resize(n, 0.0);
            if c.rhs < 0.0 {
                let flipped = match c.relation {
                    Relation::Ge => Relation::Le,
                    Relation::Le => Relation::Ge,
                    Relation::Eq => Relation::Eq,
                };
                (coeffs.iter().map(|v| -v).collect(), flipped, -c.rhs)
            } else {
                (coeffs, c.relation, c.rhs)
            }
        })
        .collect();
    let num_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let num_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let cols = n + num_slack + num_art;
    let mut tab = Tableau {
        rows: Vec::with_capacity(m),
        basis: Vec::with_capacity(m),
        cols,
    };
    let (mut slack, mut art) = (n, n + num_slack);
    for (coeffs, rel, rhs) in &rows {
        let mut row = vec![0.0; cols + 1];
        row[..n].copy_from_slice(coeffs);
        row[cols] = *rhs;
        match rel {
            Relation::Le => {
                row[slack] = 1.0;
                tab.basis.push(slack);
                slack += 1;
            }
            Relation::Ge => {
                row[slack] = -1.0;
                slack += 1;
                row[art] = 1.0;
                tab.basis.push(art);
                art += 1;
            }
            Relation::Eq => {
                row[art] = 1.0;
                tab.basis.push(art);
                art += 1;
            }
        }
        tab.rows.push(row);
    }

    let is_art = |j: usize| j >= n + num_slack;
    let phase1_cost: Vec<f64> = (0..cols).map(|j| if is_art(j) { 1.0 } else { 0.0 }).collect();
    let all = vec![true; cols];
    if let Err(status) = tab.optimize(&phase1_cost, &all) {
        return failed(status);
    }
    let infeasibility: f64 = tab
        .rows
        .iter()
        .zip(&tab.basis)
        .filter(|(_, &b)| is_art(b))
        .map(|(row, _)| row[cols])
        .sum();
    if infeasibility > 1e-9 {
        return failed(LpStatus::Infeasible);
    }
    // Drive zero-level artificials out of the basis where possible.
    for r in 0..tab.rows.len() {
        if is_art(tab.basis[r]) {
            if let Some(c) = (0..n + num_slack).find(|&j| tab.rows[r][j].abs() > PIVOT_TOL) {
                tab.pivot(r, c);
            }
        }
    }
    let mut cost = vec![0.0; cols];
    cost[..n].copy_from_slice(&p.objective);
    let allowed: Vec<bool> = (0..cols).map(|j| !is_art(j)).collect();
    if let Err(status) = tab.optimize(&cost, &allowed) {
        return failed(status);
    }
    let mut x = vec![0.0; n];
    for (row, &b) in tab.rows.iter().zip(&tab.basis) {
        if b < n {
            x[b] = row[cols];
        }
    }
    LpSolution {
        status: LpStatus::Optimal,
        objective_value: p.objective.iter().zip(&x).map(|(c, v)| c * v).sum(),
        x,
    }
}

/// Which version of the second program's constraint to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Lp2Form {
    /// `Φ(z) = Σ_i q_i Ω(1 - z^{w_i})` and the smallest per-source `ω(1 - z^{w_i})`
    /// on the right, matching the weighted DE recursion.
    #[default]
    DeConsistent,
    /// `Φ(z) = Ω(1 - Σ_i q_i z^{w_i})` with `ω(z)` on the right, as printed.
    Literal,
}

fn check_inputs(omega: &DegreeDistribution, mu_bar: f64, d_max: usize, eps: f64, m: usize) -> Result<(), OptimizerError> {
    if m < 2 {
        return Err(OptimizerError::InvalidGrid(format!("need at least 2 grid points, got {m}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(OptimizerError::InvalidGrid(format!("target erasure rate {eps} outside (0, 1)")));
    }
    if d_max == 0 {
        return Err(OptimizerError::InvalidInput("d_max must be >= 1".into()));
    }
    if !(mu_bar > 0.0 && mu_bar.is_finite()) {
        return Err(OptimizerError::InvalidInput(format!("mu_bar = {mu_bar}")));
    }
    if omega.perspective() != Perspective::Node {
        return Err(OptimizerError::InvalidInput("omega must be node-perspective".into()));
    }
    Ok(())
}

fn objective(omega: &DegreeDistribution, mu_bar: f64, d_max: usize) -> Vec<f64> {
    let scale = mu_bar / omega.mean_degree();
    (1..=d_max).map(|j| scale / j as f64).collect()
}

fn design_row(y: f64, d_max: usize, rhs: f64) -> Constraint {
    let coeffs = (0..d_max).map(|e| if e == 0 { 1.0 } else { y.powi(e as i32) }).collect();
    Constraint::new(coeffs, Relation::Ge, rhs)
}

fn normalization(d_max: usize) -> Constraint {
    Constraint::new(vec![1.0; d_max], Relation::Eq, 1.0)
}

/// Equidistant points from `a` to `b` inclusive.
fn equidistant(a: f64, b: f64, m: usize) -> Vec<f64> {
    (0..m)
        .map(|i| if i + 1 == m { b } else { a + (b - a) * (i as f64 / (m - 1) as f64) })
        .collect()
}

/// EEP design program: rows `Σ_j γ_j Ω(x_i)^{j-1} ≥ -ln(1-x_i) / (μ̄ ω(x_i))`
/// on `0 = x_1 < … < x_m = 1 - ε`. The `x = 0` row uses its limit, 0.
pub fn build_lp1(
    omega: &DegreeDistribution,
    mu_bar: f64,
    d_max: usize,
    eps: f64,
    m: usize,
) -> Result<LpProblem, OptimizerError> {
    check_inputs(omega, mu_bar, d_max, eps, m)?;
    let omega_edge = omega.to_edge_perspective()?;
    let grid = equidistant(0.0, 1.0 - eps, m);
    let mut constraints: Vec<Constraint> = grid
        .iter()
        .map(|&x| {
            let rhs = if x == 0.0 {
                0.0
            } else {
                -(1.0 - x).ln() / (mu_bar * omega_edge.eval(x))
            };
            design_row(omega.eval(x), d_max, rhs)
        })
        .collect();
    constraints.push(normalization(d_max));
    Ok(LpProblem {
        objective: objective(omega, mu_bar, d_max),
        constraints,
        grid,
        eps,
    })
}

/// UEP design program over `1 = z_1 > … > z_m = ε`; see [`Lp2Form`] for
/// the two constraint readings. The `z = 1` row uses its limit, 0.
#[allow(clippy::too_many_arguments)]
pub fn build_lp2(
    omega: &DegreeDistribution,
    mu_bar: f64,
    d_max: usize,
    eps: f64,
    m: usize,
    q: &[f64],
    alpha: &[f64],
    form: Lp2Form,
) -> Result<LpProblem, OptimizerError> {
    check_inputs(omega, mu_bar, d_max, eps, m)?;
    if q.is_empty() || q.len() != alpha.len() || alpha.iter().any(|a| !(*a > 0.0)) || q.iter().any(|v| !(*v >= 0.0)) {
        return Err(OptimizerError::InvalidInput("q and alpha must be equal-length, alpha positive".into()));
    }
    let omega_edge = omega.to_edge_perspective()?;
    let w: Vec<f64> = q.iter().zip(alpha).map(|(q, a)| q / a).collect();
    let grid = equidistant(1.0, eps, m);
    let mut constraints: Vec<Constraint> = grid
        .iter()
        .map(|&z| {
            let (phi, var_side) = match form {
                Lp2Form::DeConsistent => {
                    let phi = q.iter().zip(&w).map(|(qi, wi)| qi * omega.eval(1.0 - z.powf(*wi))).sum();
                    let weakest = w
                        .iter()
                        .map(|wi| omega_edge.eval(1.0 - z.powf(*wi)))
                        .fold(f64::INFINITY, f64::min);
                    (phi, weakest)
                }
                Lp2Form::Literal => {
                    let inner: f64 = q.iter().zip(&w).map(|(qi, wi)| qi * z.powf(*wi)).sum();
                    (omega.eval(1.0 - inner), omega_edge.eval(z))
                }
            };
            let rhs = if z == 1.0 { 0.0 } else { -z.ln() / (mu_bar * var_side) };
            design_row(phi, d_max, rhs)
        })
        .collect();
    constraints.push(normalization(d_max));
    Ok(LpProblem {
        objective: objective(omega, mu_bar, d_max),
        constraints,
        grid,
        eps,
    })
}

/// Selection for the UEP program.
#[derive(Debug, Clone, PartialEq)]
pub struct UepSpec {
    pub q: Vec<f64>,
    pub alpha: Vec<f64>,
    pub form: Lp2Form,
}

#[derive(Debug, Clone)]
pub struct OptimizedRelay {
    pub gamma_node: DegreeDistribution,
    pub gamma_edge: DegreeDistribution,
    /// Optimal reception overhead `ε_r*`.
    pub epsilon_r_star: f64,
    pub solution: LpSolution,
    pub problem: LpProblem,
}

/// Build, solve, convert to node perspective, then check with density
/// evolution at `1.02 ε_r*`: the EEP fixed point must be at most `ε`, or,
/// for UEP, source `i`'s fixed point at most `ε^{w_i}`.
pub fn optimize_relay_distribution(
    omega: &DegreeDistribution,
    mu_bar: f64,
    d_max: usize,
    eps: f64,
    m: usize,
    uep: Option<&UepSpec>,
) -> Result<OptimizedRelay, OptimizerError> {
    let problem = match uep {
        None => build_lp1(omega, mu_bar, d_max, eps, m)?,
        Some(u) => build_lp2(omega, mu_bar, d_max, eps, m, &u.q, &u.alpha, u.form)?,
    };
    let solution = solve_lp(&problem);
    if solution.status != LpStatus::Optimal {
        return Err(OptimizerError::Solver(solution.status));
    }
    let gamma_edge = solution.gamma_edge()?;
    let gamma_node = gamma_edge.to_node_perspective()?;
    let epsilon_r_star = solution.objective_value;
    let check_at = VALIDATION_MARGIN * epsilon_r_star;
    let params = DEParams::new(omega.clone(), gamma_node.clone(), Load::EpsilonR(check_at));
    let fail = |scope: String, fixed_point: f64, target: f64| OptimizerError::ValidationFailed {
        scope,
        fixed_point,
        target,
        epsilon_r: check_at,
    };
    match uep {
        None => {
            let fp = de_eep(&params)?.fixed_point[0];
            if fp > eps {
                return Err(fail("overall".into(), fp, eps));
            }
        }
        Some(u) => {
            let params = params.with_selection(u.q.clone(), u.alpha.clone());
            let w = params.w();
            let fp = de_uep_weighted(&params)?.fixed_point;
            for (i, (p, wi)) in fp.iter().zip(&w).enumerate() {
                let target = eps.powf(*wi);
                if *p > target {
                    return Err(fail(format!("source:{}", i + 1), *p, target));
                }
            }
        }
    }
    Ok(OptimizedRelay {
        gamma_node,
        gamma_edge,
        epsilon_r_star,
        solution,
        problem,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rsd() -> DegreeDistribution {
        DegreeDistribution::robust_soliton(100, 0.05, 0.5).unwrap()
    }

    fn lp(objective: Vec<f64>, constraints: Vec<Constraint>) -> LpProblem {
        LpProblem {
            objective,
            constraints,
            grid: Vec::new(),
            eps: 0.5,
        }
    }

    #[test]
    fn simplex_small_cases() {
        let s = solve_lp(&lp(vec![1.0], vec![Constraint::new(vec![1.0], Relation::Ge, 3.0)]));
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] - 3.0).abs() < 1e-12);

        let s = solve_lp(&lp(
            vec![1.0, 1.0],
            vec![
                Constraint::new(vec![1.0, 0.0], Relation::Ge, 2.0),
                Constraint::new(vec![1.0, 1.0], Relation::Eq, 1.0),
            ],
        ));
        assert_eq!(s.status, LpStatus::Infeasible);

        let s = solve_lp(&lp(vec![-1.0, 0.0], vec![Constraint::new(vec![1.0, -1.0], Relation::Le, 1.0)]));
        assert_eq!(s.status, LpStatus::Unbounded);

        // max 3a + 5b s.t. a ≤ 4, 2b ≤ 12, 3a + 2b ≤ 18 → (2, 6), value 36.
        let s = solve_lp(&lp(
            vec![-3.0, -5.0],
            vec![
                Constraint::new(vec![1.0, 0.0], Relation::Le, 4.0),
                Constraint::new(vec![0.0, 2.0], Relation::Le, 12.0),
                Constraint::new(vec![3.0, 2.0], Relation::Le, 18.0),
            ],
        ));
        assert!((s.x[0] - 2.0).abs() < 1e-9 && (s.x[1] - 6.0).abs() < 1e-9);
        assert!((s.objective_value + 36.0).abs() < 1e-9);

        // Negative right-hand side and a redundant equality.
        let s = solve_lp(&lp(
            vec![1.0, 2.0],
            vec![
                Constraint::new(vec![-1.0, -1.0], Relation::Le, -2.0),
                Constraint::new(vec![1.0, 1.0], Relation::Eq, 3.0),
                Constraint::new(vec![2.0, 2.0], Relation::Eq, 6.0),
            ],
        ));
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] - 3.0).abs() < 1e-9 && s.x[1].abs() < 1e-9);
    }

    #[test]
    fn simplex_matches_vertex_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            // Two variables, a few ≥ rows, objective positive: enumerate
            // pairwise intersections including the axes.
            let rows: Vec<Constraint> = (0..3)
                .map(|_| Constraint::new(vec![rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0)], Relation::Ge, rng.gen_range(0.5..3.0)))
                .collect();
            let c = vec![rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0)];
            let p = lp(c.clone(), rows.clone());
            let s = solve_lp(&p);
            assert_eq!(s.status, LpStatus::Optimal);
            let mut lines: Vec<(f64, f64, f64)> = rows.iter().map(|r| (r.coeffs[0], r.coeffs[1], r.rhs)).collect();
            lines.push((1.0, 0.0, 0.0));
            lines.push((0.0, 1.0, 0.0));
            let mut best = f64::INFINITY;
            for i in 0..lines.len() {
                for j in i + 1..lines.len() {
                    let (a, b, e) = lines[i];
                    let (cc, d, f) = lines[j];
                    let det = a * d - b * cc;
                    if det.abs() < 1e-12 {
                        continue;
                    }
                    let x = [(e * d - b * f) / det, (a * f - e * cc) / det];
                    if p.min_residual(&x) >= -1e-9 {
                        best = best.min(c[0] * x[0] + c[1] * x[1]);
                    }
                }
            }
            assert!((s.objective_value - best).abs() < 1e-8, "{} vs {best}", s.objective_value);
            assert!(p.min_residual(&s.x) >= -FEASIBILITY_TOL);
        }
    }

    #[test]
    fn lp1_structure() {
        let omega = rsd();
        let p = build_lp1(&omega, 9.0, 4, 0.01, 11).unwrap();
        assert_eq!(p.grid.len(), 11);
        assert_eq!(p.grid[0], 0.0);
        assert!((p.grid[10] - 0.99).abs() < 1e-15);
        assert_eq!(p.constraints[0].coeffs, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.constraints[0].rhs, 0.0);
        let scale = 9.0 / omega.mean_degree();
        assert!((p.objective[2] - scale / 3.0).abs() < 1e-15);
        assert!(matches!(build_lp1(&omega, 9.0, 4, 0.01, 1), Err(OptimizerError::InvalidGrid(_))));
        assert!(matches!(build_lp1(&omega, 9.0, 4, 1.5, 4), Err(OptimizerError::InvalidGrid(_))));
    }

    #[test]
    fn lp2_reduces_to_lp1_for_unit_weights() {
        let omega = rsd();
        let m = 21;
        let a = build_lp1(&omega, 10.0, 4, 0.02, m).unwrap();
        let b = build_lp2(&omega, 10.0, 4, 0.02, m, &[0.25; 4], &[0.25; 4], Lp2Form::DeConsistent).unwrap();
        assert_eq!(a.objective, b.objective);
        // Row k of LP2 (z_k) is row k of LP1 (x_k = 1 - z_k).
        for (ra, rb) in a.constraints.iter().zip(&b.constraints) {
            for (x, y) in ra.coeffs.iter().zip(&rb.coeffs) {
                assert!((x - y).abs() < 1e-12);
            }
            assert!((ra.rhs - rb.rhs).abs() < 1e-9 * ra.rhs.max(1.0));
        }
    }

    #[test]
    fn single_degree_forced() {
        let omega = rsd();
        let r = optimize_relay_distribution(&omega, 12.0, 1, 0.01, 50, None).unwrap();
        assert_eq!(r.gamma_node.coefficients(), &[1.0]);
        assert!((r.epsilon_r_star - 12.0 / omega.mean_degree()).abs() < 1e-12);
    }

    /// `μ̄` of the published four-term EEP relay distribution.
    fn reference_mu() -> f64 {
        let rdd = DegreeDistribution::from_weights(&[0.7520, 0.1685, 0.0455, 0.0340], Perspective::Node, DistKind::Relay).unwrap();
        rdd.mean_degree() * rsd().mean_degree()
    }

    fn assert_valid(r: &OptimizedRelay) {
        let x = &r.solution.x;
        assert!(r.problem.min_residual(x) >= -FEASIBILITY_TOL);
        assert!(x.iter().all(|v| *v >= -1e-9));
        assert!((x.iter().sum::<f64>() - 1.0).abs() <= 1e-7);
    }

    #[test]
    fn lp1_solutions_valid_and_nested() {
        let omega = rsd();
        let mut last = f64::INFINITY;
        for d in [2, 4, 8] {
            let r = optimize_relay_distribution(&omega, reference_mu(), d, 0.01, 100, None).unwrap();
            assert_valid(&r);
            assert!(r.epsilon_r_star <= last);
            last = r.epsilon_r_star;
        }
        // Mostly degree one, as for the published distribution.
        let r = optimize_relay_distribution(&omega, reference_mu(), 4, 0.01, 100, None).unwrap();
        assert!(r.gamma_node.mass(1) > 0.5);
    }

    #[test]
    fn coarser_grid_is_a_relaxation() {
        let omega = rsd();
        for m in [5, 20, 60] {
            let coarse = optimize_relay_distribution(&omega, reference_mu(), 4, 0.01, m, None).unwrap();
            let fine = optimize_relay_distribution(&omega, reference_mu(), 4, 0.01, 2 * m - 1, None).unwrap();
            assert!(coarse.problem.grid.iter().all(|x| fine.problem.grid.contains(x)));
            assert!(coarse.epsilon_r_star <= fine.epsilon_r_star + 1e-9);
        }
    }

    #[test]
    fn lp2_endpoint_grid_and_nesting() {
        let omega = rsd();
        let uep = UepSpec {
            q: vec![0.08, 0.29, 0.27, 0.36],
            alpha: vec![0.05, 0.20, 0.30, 0.45],
            form: Lp2Form::DeConsistent,
        };
        let p = build_lp2(&omega, reference_mu(), 4, 0.01, 2, &uep.q, &uep.alpha, uep.form).unwrap();
        assert_eq!(p.grid, vec![1.0, 0.01]);
        let s = solve_lp(&p);
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x.iter().sum::<f64>() - 1.0).abs() < 1e-9 && s.x.iter().all(|v| *v >= -1e-12));
        let mut last = f64::INFINITY;
        for d in [2, 4, 8] {
            let r = optimize_relay_distribution(&omega, reference_mu(), d, 0.01, 100, Some(&uep)).unwrap();
            assert_valid(&r);
            assert!(r.epsilon_r_star <= last);
            last = r.epsilon_r_star;
        }
    }

    #[test]
    fn lp2_design_beats_eep_reference_in_waterfall() {
        use crate::analysis::{de_uep_weighted, DEParams, Load};
        let omega = rsd();
        let q = vec![0.08, 0.29, 0.27, 0.36];
        let alpha = vec![0.05, 0.20, 0.30, 0.45];
        let uep = UepSpec { q: q.clone(), alpha: alpha.clone(), form: Lp2Form::DeConsistent };
        let design = optimize_relay_distribution(&omega, reference_mu(), 4, 0.01, 100, Some(&uep)).unwrap();
        let rdd = DegreeDistribution::from_weights(&[0.7520, 0.1685, 0.0455, 0.0340], Perspective::Node, DistKind::Relay).unwrap();
        let mut checked = 0;
        for step in 0..40 {
            let eps = 0.8 + 0.025 * step as f64;
            let p = DEParams::new(omega.clone(), rdd.clone(), Load::EpsilonR(eps)).with_selection(q.clone(), alpha.clone());
            let reference = de_uep_weighted(&p).unwrap().fixed_point;
            // Waterfall: the reference has not yet decoded every source.
            if reference.iter().cloned().fold(0.0, f64::max) < 1e-2 {
                continue;
            }
            let ours = de_uep_weighted(&DEParams { gamma: design.gamma_node.clone(), ..p }).unwrap().fixed_point;
            for (a, b) in ours.iter().zip(&reference) {
                assert!(a <= b, "eps {eps}: {ours:?} vs {reference:?}");
            }
            checked += 1;
        }
        assert!(checked > 5);
    }

    #[test]
    fn infeasible_mu_reported() {
        // With a tiny μ̄ the right-hand side exceeds 1 somewhere.
        let err = optimize_relay_distribution(&rsd(), 0.5, 4, 0.01, 50, None).unwrap_err();
        assert_eq!(err, OptimizerError::Solver(LpStatus::Infeasible));
    }
}
