//! Centralized social-welfare maximization and its KKT certificate.
//!
//! The problem separates by edge: each edge owns the variables `θ_i^e` of the
//! travelers in `S_e`, a box `θ_i^e ≥ θ̲^e` and one weighted capacity row.
//! Each block is solved by projected gradient ascent with an exact Euclidean
//! projection onto `{x ≥ θ̲, Σ α_i x_i ≤ c}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{validate_scenario, EdgeId, TravelerId};
use crate::scenario::Scenario;
use crate::valuation::ValuationSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub kkt_tol: f64,
    pub solution_tol: f64,
    pub max_iterations: usize,
    /// Step of the brute-force grid oracle.
    pub grid_step: f64,
    pub random_starts: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-6,
            solution_tol: 1e-6,
            max_iterations: 100_000,
            grid_step: 0.01,
            random_starts: 10,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub(crate) fn check(&self) -> Result<()> {
        for (name, x) in [
            ("kkt_tol", self.kkt_tol),
            ("solution_tol", self.solution_tol),
            ("grid_step", self.grid_step),
        ] {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::Attribute(format!("solver.{name} must be positive, got {x}")));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::Attribute("solver.max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Travel times `θ_i^e`, indexed by traveler position and route position.
#[derive(Clone, Debug, PartialEq)]
pub struct Allocation {
    theta: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationEntry {
    pub traveler: TravelerId,
    pub edge: EdgeId,
    pub theta: f64,
}

impl Allocation {
    pub fn new(theta: Vec<Vec<f64>>) -> Self {
        Self { theta }
    }

    /// Every traveler at `θ̲^e` on every edge of its route.
    pub fn lower_bounds(scenario: &Scenario) -> Self {
        let theta = (0..scenario.travelers.len())
            .map(|t| {
                scenario
                    .index()
                    .route(t)
                    .iter()
                    .map(|&e| scenario.edge(e).min_travel_time)
                    .collect()
            })
            .collect();
        Self { theta }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.theta
    }

    pub fn at(&self, traveler: usize, pos: usize) -> f64 {
        self.theta[traveler][pos]
    }

    pub fn set(&mut self, traveler: usize, pos: usize, value: f64) {
        self.theta[traveler][pos] = value;
    }

    pub fn get(&self, scenario: &Scenario, traveler: TravelerId, edge: EdgeId) -> Option<f64> {
        let t = scenario.traveler_index(traveler)?;
        let pos = scenario.route_position(t, edge)?;
        Some(self.theta[t][pos])
    }

    /// `θ_i = Σ_{e∈R_i} θ_i^e`.
    pub fn totals(&self) -> Vec<f64> {
        self.theta.iter().map(|row| row.iter().sum()).collect()
    }

    pub fn check_shape(&self, scenario: &Scenario) -> Result<()> {
        check_nested_shape(scenario, &self.theta, "allocation")
    }

    pub fn max_abs_diff(&self, other: &Allocation) -> f64 {
        self.theta
            .iter()
            .flatten()
            .zip(other.theta.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Largest violation of `θ ≥ θ̲` or `Σ α θ ≤ c`; zero when feasible.
    pub fn constraint_violation(&self, scenario: &Scenario) -> f64 {
        let index = scenario.index();
        let mut worst = 0.0_f64;
        for (e, edge) in scenario.network.edges().iter().enumerate() {
            let mut load = 0.0;
            for slot in index.members(e) {
                let theta = self.theta[slot.traveler][slot.pos];
                worst = worst.max(edge.min_travel_time - theta);
                load += scenario.travelers[slot.traveler].alpha * theta;
            }
            worst = worst.max(load - edge.capacity);
        }
        worst
    }

    pub fn entries(&self, scenario: &Scenario) -> Vec<AllocationEntry> {
        scenario
            .travelers
            .iter()
            .zip(&self.theta)
            .flat_map(|(t, row)| {
                t.route.edges().iter().zip(row).map(move |(&edge, &theta)| AllocationEntry {
                    traveler: t.id,
                    edge,
                    theta,
                })
            })
            .collect()
    }
}

pub(crate) fn check_nested_shape(scenario: &Scenario, rows: &[Vec<f64>], what: &str) -> Result<()> {
    if rows.len() != scenario.travelers.len() {
        return Err(Error::Structural(format!(
            "{what} has {} traveler rows, scenario has {} travelers",
            rows.len(),
            scenario.travelers.len()
        )));
    }
    for (t, row) in rows.iter().enumerate() {
        if row.len() != scenario.travelers[t].route.len() {
            return Err(Error::Structural(format!(
                "{what} row for traveler {} has {} entries, route has {}",
                scenario.travelers[t].id,
                row.len(),
                scenario.travelers[t].route.len()
            )));
        }
    }
    Ok(())
}

/// Lagrange multipliers: `λ_i^e` per (traveler, route position), `ν_e` per edge index.
#[derive(Clone, Debug, PartialEq)]
pub struct Multipliers {
    pub lambda: Vec<Vec<f64>>,
    pub nu: Vec<f64>,
}

/// Infinity norms of each KKT condition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub complementary_slackness_lower: f64,
    pub complementary_slackness_capacity: f64,
    pub dual_feasibility: f64,
    pub primal_feasibility: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        [
            self.stationarity,
            self.complementary_slackness_lower,
            self.complementary_slackness_capacity,
            self.dual_feasibility,
            self.primal_feasibility,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn valid_at(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KktCertificate {
    pub multipliers: Multipliers,
    pub residuals: KktResiduals,
}

impl KktCertificate {
    pub fn nu(&self) -> &[f64] {
        &self.multipliers.nu
    }

    pub fn valid_at(&self, tol: f64) -> bool {
        self.residuals.valid_at(tol)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverResult {
    pub allocation: Allocation,
    pub certificate: KktCertificate,
    pub welfare: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Residuals of stationarity `v′(θ_i^e) + λ_i^e − α_i ν_e = 0`, both
/// complementary slackness conditions, dual and primal feasibility.
pub fn kkt_residuals(
    scenario: &Scenario,
    allocation: &Allocation,
    multipliers: &Multipliers,
) -> Result<KktResiduals> {
    allocation.check_shape(scenario)?;
    check_nested_shape(scenario, &multipliers.lambda, "lambda")?;
    if multipliers.nu.len() != scenario.network.num_edges() {
        return Err(Error::Structural(format!(
            "nu has {} entries, network has {} edges",
            multipliers.nu.len(),
            scenario.network.num_edges()
        )));
    }
    let index = scenario.index();
    let mut r = KktResiduals {
        primal_feasibility: allocation.constraint_violation(scenario).max(0.0),
        ..KktResiduals::default()
    };
    for (e, edge) in scenario.network.edges().iter().enumerate() {
        let nu = multipliers.nu[e];
        r.dual_feasibility = r.dual_feasibility.max(-nu);
        let mut load = 0.0;
        for slot in index.members(e) {
            let traveler = &scenario.travelers[slot.traveler];
            let theta = allocation.at(slot.traveler, slot.pos);
            let lambda = multipliers.lambda[slot.traveler][slot.pos];
            load += traveler.alpha * theta;
            let stationarity = traveler.valuation.derivative(theta) + lambda - traveler.alpha * nu;
            r.stationarity = r.stationarity.max(stationarity.abs());
            r.complementary_slackness_lower = r
                .complementary_slackness_lower
                .max((lambda * (theta - edge.min_travel_time)).abs());
            r.dual_feasibility = r.dual_feasibility.max(-lambda);
        }
        r.complementary_slackness_capacity = r
            .complementary_slackness_capacity
            .max((nu * (load - edge.capacity)).abs());
    }
    Ok(r)
}

/// `Σ_i Σ_{e∈R_i} v_i(θ_i^e)`.
pub fn social_welfare(scenario: &Scenario, allocation: &Allocation) -> f64 {
    scenario
        .travelers
        .iter()
        .zip(allocation.rows())
        .map(|(t, row)| row.iter().map(|&theta| t.valuation.value(theta)).sum::<f64>())
        .sum()
}

/// Recovers `(λ, ν)` from stationarity at `allocation`:
/// `ν_e = max(0, max_{i∈S_e} v_i′(θ_i^e)/α_i)` and `λ_i^e = max(0, α_i ν_e − v_i′(θ_i^e))`.
pub fn recover_multipliers(scenario: &Scenario, allocation: &Allocation) -> Multipliers {
    let index = scenario.index();
    let mut lambda: Vec<Vec<f64>> = allocation.rows().iter().map(|r| vec![0.0; r.len()]).collect();
    let mut nu = vec![0.0; scenario.network.num_edges()];
    for (e, nu_e) in nu.iter_mut().enumerate() {
        let members = index.members(e);
        *nu_e = members
            .iter()
            .map(|s| {
                let t = &scenario.travelers[s.traveler];
                t.valuation.derivative(allocation.at(s.traveler, s.pos)) / t.alpha
            })
            .fold(0.0, f64::max);
        for s in members {
            let t = &scenario.travelers[s.traveler];
            let grad = t.valuation.derivative(allocation.at(s.traveler, s.pos));
            lambda[s.traveler][s.pos] = (t.alpha * *nu_e - grad).max(0.0);
        }
    }
    Multipliers { lambda, nu }
}

pub fn certify(scenario: &Scenario, allocation: &Allocation) -> KktCertificate {
    let multipliers = recover_multipliers(scenario, allocation);
    let residuals = kkt_residuals(scenario, allocation, &multipliers).expect("shapes derived from scenario");
    KktCertificate { multipliers, residuals }
}

fn ensure_feasible(scenario: &Scenario) -> Result<()> {
    match validate_scenario(scenario).first_infeasible() {
        Some(edge) => Err(Error::Infeasible {
            edge: edge.edge,
            required: edge.lower_bound_load,
            capacity: edge.capacity,
        }),
        None => Ok(()),
    }
}

/// Solves from the midpoint of each edge's box.
pub fn solve_centralized(scenario: &Scenario, config: &SolverConfig) -> Result<SolverResult> {
    solve_from(scenario, config, None)
}

/// Solves from `start` (projected onto the feasible set first), or from the
/// default start when `None`.
pub fn solve_from(scenario: &Scenario, config: &SolverConfig, start: Option<&Allocation>) -> Result<SolverResult> {
    ensure_feasible(scenario)?;
    if let Some(s) = start {
        s.check_shape(scenario)?;
    }
    let index = scenario.index();
    let mut allocation = Allocation::lower_bounds(scenario);
    let mut iterations = 0;
    let pg_tol = 1e-6 * config.kkt_tol.min(config.solution_tol);

    for (e, edge) in scenario.network.edges().iter().enumerate() {
        let members = index.members(e);
        if members.is_empty() {
            continue;
        }
        let block = EdgeBlock {
            valuations: members.iter().map(|s| &scenario.travelers[s.traveler].valuation).collect(),
            alphas: members.iter().map(|s| scenario.travelers[s.traveler].alpha).collect(),
            lower: edge.min_travel_time,
            capacity: edge.capacity,
        };
        let x0: Vec<f64> = match start {
            Some(s) => members.iter().map(|m| s.at(m.traveler, m.pos)).collect(),
            None => block.midpoint(),
        };
        let (x, iters) = block.ascend(x0, pg_tol, config.max_iterations);
        iterations = iterations.max(iters);
        for (m, value) in members.iter().zip(x) {
            allocation.set(m.traveler, m.pos, value);
        }
    }

    let certificate = certify(scenario, &allocation);
    let welfare = social_welfare(scenario, &allocation);
    let converged = certificate.valid_at(config.kkt_tol);
    let result = SolverResult {
        allocation,
        certificate,
        welfare,
        iterations,
        converged,
    };
    if converged {
        Ok(result)
    } else {
        Err(Error::NonConvergence {
            iterations,
            residual: result.certificate.residuals.max(),
            best: Box::new(result),
        })
    }
}

/// A feasible start drawn uniformly from each box `[θ̲^e, c_e/α_i]` and projected.
pub fn random_start(scenario: &Scenario, rng: &mut impl Rng) -> Allocation {
    let mut a = Allocation::lower_bounds(scenario);
    for (t, traveler) in scenario.travelers.iter().enumerate() {
        for (pos, &e) in scenario.index().route(t).iter().enumerate() {
            let edge = scenario.edge(e);
            let hi = (edge.capacity / traveler.alpha).max(edge.min_travel_time);
            let lo = edge.min_travel_time;
            a.set(t, pos, if hi > lo { rng.random_range(lo..hi) } else { lo });
        }
    }
    a
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub starts: usize,
    /// Largest ‖θ_k − θ_0‖∞ across starts.
    pub spread: f64,
    pub agree: bool,
}

/// Solves from `config.random_starts` seeded random starts and compares the optima.
pub fn check_uniqueness(scenario: &Scenario, config: &SolverConfig) -> Result<UniquenessReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let reference = solve_centralized(scenario, config)?;
    let mut spread = 0.0_f64;
    for _ in 0..config.random_starts {
        let start = random_start(scenario, &mut rng);
        let r = solve_from(scenario, config, Some(&start))?;
        spread = spread.max(r.allocation.max_abs_diff(&reference.allocation));
    }
    Ok(UniquenessReport {
        starts: config.random_starts,
        spread,
        agree: spread <= config.solution_tol,
    })
}

struct EdgeBlock<'a> {
    valuations: Vec<&'a ValuationSpec>,
    alphas: Vec<f64>,
    lower: f64,
    capacity: f64,
}

impl EdgeBlock<'_> {
    fn objective(&self, x: &[f64]) -> f64 {
        self.valuations.iter().zip(x).map(|(v, &t)| v.value(t)).sum()
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        for ((gi, v), &t) in g.iter_mut().zip(&self.valuations).zip(x) {
            *gi = v.derivative(t);
        }
    }

    fn midpoint(&self) -> Vec<f64> {
        let weight: f64 = self.alphas.iter().sum();
        let level = 0.5 * (self.lower + self.capacity / weight);
        let mut x = vec![level; self.alphas.len()];
        project_capped_box(&mut x, &self.alphas, self.lower, self.capacity);
        x
    }

    /// Projected gradient ascent with backtracking. Returns the iterate and the
    /// number of accepted steps.
    fn ascend(&self, mut x: Vec<f64>, pg_tol: f64, max_iterations: usize) -> (Vec<f64>, usize) {
        let n = x.len();
        project_capped_box(&mut x, &self.alphas, self.lower, self.capacity);
        let mut f = self.objective(&x);
        let mut g = vec![0.0; n];
        let mut g_trial = vec![0.0; n];
        let mut trial = vec![0.0; n];
        self.gradient(&x, &mut g);
        let mut step = 1.0;

        for iteration in 1..=max_iterations {
            let (f_trial, moved) = loop {
                for i in 0..n {
                    trial[i] = x[i] + step * g[i];
                }
                project_capped_box(&mut trial, &self.alphas, self.lower, self.capacity);
                let mut dot = 0.0;
                let mut sq = 0.0;
                let mut moved = 0.0_f64;
                for i in 0..n {
                    let d = trial[i] - x[i];
                    dot += g[i] * d;
                    sq += d * d;
                    moved = moved.max(d.abs());
                }
                let f_trial = self.objective(&trial);
                if f_trial >= f + dot - 0.5 * sq / step {
                    break (f_trial, moved);
                }
                // Near the optimum the value test drowns in rounding; fall back
                // to the local curvature estimate along the step.
                if (f_trial - f).abs() <= 1e-13 * (1.0 + f.abs()) {
                    self.gradient(&trial, &mut g_trial);
                    let curvature: f64 = (0..n).map(|i| (g[i] - g_trial[i]) * (trial[i] - x[i])).sum();
                    if curvature <= sq / step {
                        break (f_trial, moved);
                    }
                }
                step *= 0.5;
                if step < 1e-300 {
                    return (x, iteration);
                }
            };
            let projected_gradient = moved / step;
            std::mem::swap(&mut x, &mut trial);
            f = f_trial;
            self.gradient(&x, &mut g);
            if projected_gradient <= pg_tol {
                return (x, iteration);
            }
            step *= 2.0;
        }
        (x, max_iterations)
    }
}

/// Euclidean projection of `y` onto `{x : x_i ≥ lower, Σ α_i x_i ≤ capacity}`.
///
/// The solution is `x_i = max(lower, y_i − μ α_i)` with the smallest `μ ≥ 0`
/// meeting the capacity; `μ` is found exactly by sweeping the breakpoints
/// `(y_i − lower)/α_i`.
pub fn project_capped_box(y: &mut [f64], alphas: &[f64], lower: f64, capacity: f64) {
    let clamped_load: f64 = y.iter().zip(alphas).map(|(&v, &a)| a * v.max(lower)).sum();
    if clamped_load <= capacity {
        for v in y.iter_mut() {
            *v = v.max(lower);
        }
        return;
    }
    let breakpoints: Vec<f64> = y.iter().zip(alphas).map(|(&v, &a)| (v - lower) / a).collect();
    let mut order: Vec<usize> = (0..y.len()).filter(|&i| breakpoints[i] > 0.0).collect();
    order.sort_by(|&i, &j| breakpoints[i].total_cmp(&breakpoints[j]));

    let mut fixed: f64 = (0..y.len())
        .filter(|&i| breakpoints[i] <= 0.0)
        .map(|i| alphas[i] * lower)
        .sum();
    let mut weighted: f64 = order.iter().map(|&i| alphas[i] * y[i]).sum();
    let mut squares: f64 = order.iter().map(|&i| alphas[i] * alphas[i]).sum();
    let mut mu = order.last().map_or(0.0, |&i| breakpoints[i]);
    let mut previous = 0.0;
    for &i in &order {
        let candidate = (weighted + fixed - capacity) / squares;
        if candidate <= breakpoints[i] {
            mu = candidate.max(previous);
            break;
        }
        previous = breakpoints[i];
        weighted -= alphas[i] * y[i];
        squares -= alphas[i] * alphas[i];
        fixed += alphas[i] * lower;
    }
    for (v, &a) in y.iter_mut().zip(alphas) {
        *v = (*v - mu * a).max(lower);
    }
}

/// Exhaustive grid search over `{θ̲^e + k·step}` per coordinate subject to the
/// capacity rows. The feasible grid is a product over edges, so each edge's
/// grid is enumerated on its own; ties go to the lexicographically smallest
/// grid index.
pub fn brute_force_oracle(scenario: &Scenario, grid_step: f64) -> Result<Allocation> {
    const MAX_DIMENSION: usize = 6;
    const MAX_POINTS: f64 = 2e10;
    if !(grid_step.is_finite() && grid_step > 0.0) {
        return Err(Error::OracleScope(format!("grid_step must be positive, got {grid_step}")));
    }
    let dimension = scenario.dimension();
    if dimension > MAX_DIMENSION {
        return Err(Error::OracleScope(format!(
            "decision dimension {dimension} exceeds {MAX_DIMENSION}"
        )));
    }
    ensure_feasible(scenario)?;

    let index = scenario.index();
    let mut allocation = Allocation::lower_bounds(scenario);
    for (e, edge) in scenario.network.edges().iter().enumerate() {
        let members = index.members(e);
        if members.is_empty() {
            continue;
        }
        let alphas: Vec<f64> = members.iter().map(|s| scenario.travelers[s.traveler].alpha).collect();
        let lower_load: f64 = alphas.iter().map(|a| a * edge.min_travel_time).sum();
        let slack = edge.capacity - lower_load;
        let tol = 1e-12 * edge.capacity.max(1.0);
        // Value tables: v_i(θ̲ + k·step) for every admissible k.
        let tables: Vec<Vec<f64>> = members
            .iter()
            .zip(&alphas)
            .map(|(s, &a)| {
                let v = &scenario.travelers[s.traveler].valuation;
                let kmax = ((slack + tol) / (a * grid_step)).floor() as usize;
                (0..=kmax)
                    .map(|k| v.value(edge.min_travel_time + k as f64 * grid_step))
                    .collect()
            })
            .collect();
        let points: f64 = tables.iter().map(|t| t.len() as f64).product();
        if points > MAX_POINTS {
            return Err(Error::OracleScope(format!(
                "edge {} grid has {points:e} points at step {grid_step}",
                edge.id
            )));
        }

        let mut search = GridSearch {
            tables: &tables,
            alphas: &alphas,
            step: grid_step,
            tol,
            current: vec![0; members.len()],
            best: vec![0; members.len()],
            best_value: f64::NEG_INFINITY,
        };
        search.descend(0, slack, 0.0);
        for (m, &k) in members.iter().zip(&search.best) {
            allocation.set(m.traveler, m.pos, edge.min_travel_time + k as f64 * grid_step);
        }
    }
    Ok(allocation)
}

struct GridSearch<'a> {
    tables: &'a [Vec<f64>],
    alphas: &'a [f64],
    step: f64,
    tol: f64,
    current: Vec<usize>,
    best: Vec<usize>,
    best_value: f64,
}

impl GridSearch<'_> {
    /// `slack` is the capacity left above the lower-bound load.
    fn descend(&mut self, depth: usize, slack: f64, partial: f64) {
        if depth == self.tables.len() {
            if partial > self.best_value {
                self.best_value = partial;
                self.best.copy_from_slice(&self.current);
            }
            return;
        }
        let unit = self.alphas[depth] * self.step;
        let kmax = (((slack + self.tol) / unit).floor() as usize).min(self.tables[depth].len() - 1);
        for k in 0..=kmax {
            self.current[depth] = k;
            let used = k as f64 * unit;
            self.descend(depth + 1, slack - used, partial + self.tables[depth][k]);
        }
    }
}
