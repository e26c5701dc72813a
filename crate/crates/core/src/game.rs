//! The game induced by the mechanism: utilities, the candidate equilibrium,
//! numerical ε-NE verification, best-response dynamics and property checks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::{
    average_price_others_at, edge_payment_at, edge_payment_terms, outcome, penalty_at, reference_price, Message,
    MessageProfile, NuSource, Outcome, Penalty,
};
use crate::network::{EdgeId, TravelerId};
use crate::scenario::Scenario;
use crate::solver::SolverResult;
use crate::valuation::ValuationSpec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// Travelers move one at a time, in id order.
    #[default]
    RoundRobin,
    /// Everybody best-responds to the same profile, then all move at once.
    Simultaneous,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviationSearchConfig {
    pub theta_grid_step: f64,
    /// Bid resolution for grid searches. The built-in search minimises the
    /// payment over the bid exactly, so it does not read this.
    pub tau_grid_step: f64,
    pub local_refine_tol: f64,
    pub epsilon_ne: f64,
    pub max_sweeps: usize,
    pub update: UpdateRule,
}

impl Default for DeviationSearchConfig {
    fn default() -> Self {
        Self {
            theta_grid_step: 0.01,
            tau_grid_step: 0.01,
            local_refine_tol: 1e-9,
            epsilon_ne: 1e-6,
            max_sweeps: 200,
            update: UpdateRule::RoundRobin,
        }
    }
}

impl DeviationSearchConfig {
    pub fn check(&self) -> Result<()> {
        for (name, x) in [
            ("theta_grid_step", self.theta_grid_step),
            ("tau_grid_step", self.tau_grid_step),
            ("local_refine_tol", self.local_refine_tol),
            ("epsilon_ne", self.epsilon_ne),
        ] {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::Attribute(format!("{name} must be positive, got {x}")));
            }
        }
        if self.epsilon_ne < self.local_refine_tol {
            return Err(Error::Attribute("epsilon_ne must be at least local_refine_tol".into()));
        }
        if self.max_sweeps == 0 {
            return Err(Error::Attribute("max_sweeps must be positive".into()));
        }
        Ok(())
    }
}

/// `Σ_{e∈R_i} v_i(θ_i^e) − t_i`; `−∞` when the payment is infinite.
pub fn utility(scenario: &Scenario, outcome: &Outcome, traveler: TravelerId) -> Result<f64> {
    let t = scenario
        .traveler_index(traveler)
        .ok_or_else(|| Error::Structural(format!("unknown traveler {traveler}")))?;
    Ok(utility_at(scenario, outcome, t))
}

pub(crate) fn utility_at(scenario: &Scenario, outcome: &Outcome, t: usize) -> f64 {
    let payment = outcome.payments[t];
    if payment == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    let valuation = &scenario.travelers[t].valuation;
    let value: f64 = outcome.allocation.rows()[t].iter().map(|&x| valuation.value(x)).sum();
    value - payment
}

/// Utility of sitting out: `v_i(0) = 0` less the edge payments the message
/// `(θ̃ = 0, τ = ν)` would owe against the others' reports. The penalty schedule
/// and the projection are not applied.
pub fn no_participation_utility(scenario: &Scenario, profile: &MessageProfile, nu: &[f64], traveler: TravelerId) -> Result<f64> {
    let t = scenario
        .traveler_index(traveler)
        .ok_or_else(|| Error::Structural(format!("unknown traveler {traveler}")))?;
    let route_len = scenario.travelers[t].route.len();
    let bids = (0..route_len).map(|pos| reference_price(scenario, profile, nu, t, pos)).collect();
    let mut outside = profile.clone();
    outside.replace(
        t,
        Message {
            traveler,
            demanded: vec![0.0; route_len],
            bids,
        },
    )?;
    let paid: f64 = (0..route_len)
        .map(|pos| {
            let nu_e = reference_price(scenario, &outside, nu, t, pos);
            edge_payment_at(scenario, &outside, t, pos, nu_e)
        })
        .sum();
    Ok(-paid)
}

/// `Σ_{e∈R_i, |S_e|≥2} ν_e c_e / |S_e|`: the sit-out utility when every bid equals `ν`.
pub fn no_participation_closed_form(scenario: &Scenario, nu: &[f64], traveler: TravelerId) -> Result<f64> {
    let t = scenario
        .traveler_index(traveler)
        .ok_or_else(|| Error::Structural(format!("unknown traveler {traveler}")))?;
    let index = scenario.index();
    Ok(index
        .route(t)
        .iter()
        .filter(|&&e| index.crowd(e) >= 2)
        .map(|&e| nu[e] * scenario.edge(e).capacity / index.crowd(e) as f64)
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegeneracyFlag {
    pub traveler: TravelerId,
    pub penalty: Penalty,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub profile: MessageProfile,
    pub nu: Vec<f64>,
    pub flags: Vec<DegeneracyFlag>,
}

/// `θ̃* = θ*`, `τ_i^e* = ν_e*`, with a flag for every traveler the penalty
/// schedule charges at that profile.
pub fn construct_candidate_ne(scenario: &Scenario, solved: &SolverResult) -> Result<Candidate> {
    if !solved.converged {
        return Err(Error::Precondition("candidate equilibrium needs a converged solver result".into()));
    }
    solved.allocation.check_shape(scenario)?;
    let nu = solved.certificate.nu().to_vec();
    let index = scenario.index();
    let profile = MessageProfile::from_fn(scenario, |t, pos| (solved.allocation.at(t, pos), nu[index.route(t)[pos]]))?;
    let flags = degeneracy_flags(scenario, &profile);
    Ok(Candidate { profile, nu, flags })
}

pub fn degeneracy_flags(scenario: &Scenario, profile: &MessageProfile) -> Vec<DegeneracyFlag> {
    scenario
        .travelers
        .iter()
        .enumerate()
        .filter_map(|(t, traveler)| match penalty_at(scenario, t, &profile.message(t).demanded) {
            Penalty::None => None,
            penalty => Some(DegeneracyFlag {
                traveler: traveler.id,
                penalty,
            }),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub traveler: TravelerId,
    pub demanded: BTreeMap<EdgeId, f64>,
    pub bids: BTreeMap<EdgeId, f64>,
    pub gain: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeReport {
    pub is_epsilon_ne: bool,
    pub epsilon: f64,
    pub worst_deviation: Option<Deviation>,
    /// Best gain per traveler, in traveler order.
    pub gains: Vec<f64>,
    pub profile: MessageProfile,
}

impl NeReport {
    pub fn max_gain(&self) -> f64 {
        self.worst_deviation.as_ref().map_or(0.0, |d| d.gain)
    }
}

/// One edge of a traveler's route with everybody else's report held fixed.
struct EdgeView<'a> {
    valuation: &'a ValuationSpec,
    alpha: f64,
    floor: f64,
    capacity: f64,
    crowd: usize,
    others_lower: f64,
    others_floored: f64,
    others_excess: f64,
    others_reported: f64,
    others_bid: f64,
    nu_e: f64,
    tau_max: f64,
    current_bid: f64,
}

impl EdgeView<'_> {
    fn hi(&self) -> f64 {
        self.capacity / self.alpha
    }

    /// Allocated time for report `d ≥ θ̲` after projection.
    fn allocated(&self, d: f64) -> f64 {
        let own = self.alpha * d;
        if self.others_floored + own <= self.capacity {
            return d;
        }
        let lower = self.others_lower + self.alpha * self.floor;
        let excess = self.others_excess + self.alpha * (d - self.floor);
        self.floor + (d - self.floor) * (self.capacity - lower) / excess
    }

    /// Cheapest bid for report `d`: the payment is `(τ − ν)² + τ₋ᵢ s² τ + const`.
    fn best_bid(&self, d: f64) -> f64 {
        if self.crowd < 2 {
            return self.current_bid;
        }
        let slack = self.capacity - self.others_reported - self.alpha * d;
        (self.nu_e - 0.5 * self.others_bid * slack * slack).clamp(0.0, self.tau_max)
    }

    fn value(&self, d: f64, bid: f64) -> f64 {
        let v = self.valuation.value(self.allocated(d));
        if self.crowd < 2 {
            return v;
        }
        let slack = self.capacity - self.others_reported - self.alpha * d;
        v - edge_payment_terms(self.others_bid, self.alpha * d, self.capacity, self.crowd, bid, self.nu_e, slack)
    }

    fn best_at(&self, d: f64) -> (f64, f64) {
        let bid = self.best_bid(d);
        (self.value(d, bid), bid)
    }

    /// Best (value, report, bid) with the report exactly at `θ̲`.
    fn at_floor(&self) -> Choice {
        let (value, bid) = self.best_at(self.floor);
        Choice {
            value,
            demanded: self.floor,
            bid,
        }
    }

    /// Best (value, report, bid) with the report strictly above `θ̲`, if that
    /// range is nonempty.
    fn above_floor(&self, config: &DeviationSearchConfig, current: f64) -> Option<Choice> {
        let lo = self.floor + 1e-9 * self.floor.abs().max(1.0);
        let hi = self.hi();
        if !(hi > lo) {
            return None;
        }
        let step = config.theta_grid_step;
        let mut best = Choice {
            value: f64::NEG_INFINITY,
            demanded: lo,
            bid: 0.0,
        };
        let consider = |d: f64, best: &mut Choice| {
            let (value, bid) = self.best_at(d);
            if value > best.value {
                *best = Choice { value, demanded: d, bid };
            }
        };
        consider(lo, &mut best);
        consider(hi, &mut best);
        if current > self.floor && current <= hi {
            consider(current, &mut best);
        }
        let n = ((hi - self.floor) / step).floor() as usize;
        for k in 1..=n {
            let d = self.floor + k as f64 * step;
            if d > lo && d < hi {
                consider(d, &mut best);
            }
        }
        let (a, b) = ((best.demanded - step).max(lo), (best.demanded + step).min(hi));
        let d = golden_max(|x| self.best_at(x).0, a, b, config.local_refine_tol);
        consider(d, &mut best);
        Some(best)
    }
}

#[derive(Clone, Copy, Debug)]
struct Choice {
    value: f64,
    demanded: f64,
    bid: f64,
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        c
    } else {
        d
    }
}

/// `τ_max = 10 max_e ν_e + 1`.
pub fn tau_max(nu: &[f64]) -> f64 {
    10.0 * nu.iter().copied().fold(0.0, f64::max) + 1.0
}

fn edge_views<'a>(scenario: &'a Scenario, profile: &MessageProfile, nu: &[f64], t: usize) -> Vec<EdgeView<'a>> {
    let index = scenario.index();
    let tau_max = tau_max(nu);
    let traveler = &scenario.travelers[t];
    index
        .route(t)
        .iter()
        .enumerate()
        .map(|(pos, &e)| {
            let edge = scenario.edge(e);
            let floor = edge.min_travel_time;
            let (mut lower, mut floored, mut excess, mut reported) = (0.0, 0.0, 0.0, 0.0);
            for s in index.members(e).iter().filter(|s| s.traveler != t) {
                let alpha = scenario.travelers[s.traveler].alpha;
                let d = profile.message(s.traveler).demanded[s.pos];
                lower += alpha * floor;
                floored += alpha * d.max(floor);
                excess += alpha * (d.max(floor) - floor);
                reported += alpha * d;
            }
            let others_bid = average_price_others_at(scenario, profile, t, pos);
            let nu_e = match scenario.mechanism.nu_source {
                NuSource::ExternalCertificate => nu[e],
                NuSource::CompetitorProxy => others_bid,
            };
            EdgeView {
                valuation: &traveler.valuation,
                alpha: traveler.alpha,
                floor,
                capacity: edge.capacity,
                crowd: index.crowd(e),
                others_lower: lower,
                others_floored: floored,
                others_excess: excess,
                others_reported: reported,
                others_bid,
                nu_e,
                tau_max,
                current_bid: profile.message(t).bids[pos],
            }
        })
        .collect()
}

/// Best unilateral message for traveler `t` against the rest of `profile`.
///
/// Utility separates over the route's edges except for the penalty, which
/// only depends on whether each report sits at `θ̲^e` or above it. Each edge
/// is optimised within both classes, then the classes are combined under each
/// of the three penalty outcomes `0`, `γ` and `δ`.
pub fn best_response(
    scenario: &Scenario,
    profile: &MessageProfile,
    nu: &[f64],
    t: usize,
    config: &DeviationSearchConfig,
) -> Message {
    let views = edge_views(scenario, profile, nu, t);
    let current = &profile.message(t).demanded;
    let at: Vec<Choice> = views.iter().map(EdgeView::at_floor).collect();
    let above: Vec<Option<Choice>> = views
        .iter()
        .zip(current)
        .map(|(v, &d)| v.above_floor(config, d))
        .collect();
    let shared: Vec<bool> = views.iter().map(|v| v.crowd >= 2).collect();
    let params = &scenario.mechanism;

    let mut best: Option<(f64, Vec<Choice>)> = None;
    let mut offer = |choices: Option<Vec<Choice>>, phi: f64| {
        if let Some(choices) = choices {
            let total = choices.iter().map(|c| c.value).sum::<f64>() - phi;
            if best.as_ref().is_none_or(|(v, _)| total > *v) {
                best = Some((total, choices));
            }
        }
    };

    // φ = 0: floor on monopolised edges, above it on shared ones.
    offer(
        (0..views.len())
            .map(|k| if shared[k] { above[k] } else { Some(at[k]) })
            .collect(),
        0.0,
    );
    // φ = γ: some monopolised edge above the floor, the rest free.
    offer(forced(&at, &above, |k| !shared[k], true), params.gamma);
    // φ = δ: no monopolised edge above the floor, some shared edge at it.
    let delta_classes: Vec<Option<Choice>> = (0..views.len())
        .map(|k| if shared[k] { above[k] } else { None })
        .collect();
    offer(forced(&at, &delta_classes, |k| shared[k], false), params.delta);

    let choices = best.map(|(_, c)| c).unwrap_or(at);
    Message {
        traveler: scenario.travelers[t].id,
        demanded: choices.iter().map(|c| c.demanded).collect(),
        bids: choices.iter().map(|c| c.bid).collect(),
    }
}

/// Per edge the better of `at[k]` and `alt[k]`, with at least one edge in the
/// `eligible` set taking the forced class (`alt` when `force_alt`, else `at`).
fn forced(at: &[Choice], alt: &[Option<Choice>], eligible: impl Fn(usize) -> bool, force_alt: bool) -> Option<Vec<Choice>> {
    let free: Vec<Choice> = at
        .iter()
        .zip(alt)
        .map(|(a, b)| match b {
            Some(b) if b.value > a.value => *b,
            _ => *a,
        })
        .collect();
    let mut best: Option<(f64, usize)> = None;
    for k in (0..at.len()).filter(|&k| eligible(k)) {
        let Some(pick) = (if force_alt { alt[k] } else { Some(at[k]) }) else {
            continue;
        };
        let loss = free[k].value - pick.value;
        if best.is_none_or(|(l, _)| loss < l) {
            best = Some((loss, k));
        }
    }
    let (_, k) = best?;
    let mut out = free;
    out[k] = if force_alt { alt[k].expect("eligible") } else { at[k] };
    Some(out)
}

/// Searches every traveler's unilateral deviations from `profile`; `nu` is the
/// reference price used by the payments. The reported gains are re-evaluated
/// through the mechanism's outcome function.
pub fn verify_ne(
    scenario: &Scenario,
    profile: &MessageProfile,
    nu: &[f64],
    config: &DeviationSearchConfig,
) -> Result<NeReport> {
    config.check()?;
    let base = outcome(scenario, profile, nu)?;
    let mut gains = Vec::with_capacity(scenario.travelers.len());
    let mut worst: Option<Deviation> = None;
    for t in 0..scenario.travelers.len() {
        let current = utility_at(scenario, &base, t);
        let message = best_response(scenario, profile, nu, t, config);
        let mut deviated = profile.clone();
        deviated.replace(t, message.clone())?;
        let after = utility_at(scenario, &outcome(scenario, &deviated, nu)?, t);
        let gain = if current == f64::NEG_INFINITY {
            if after > current { f64::INFINITY } else { 0.0 }
        } else {
            (after - current).max(0.0)
        };
        gains.push(gain);
        if worst.as_ref().is_none_or(|w| gain > w.gain) {
            let route = scenario.travelers[t].route.edges();
            worst = Some(Deviation {
                traveler: message.traveler,
                demanded: route.iter().copied().zip(message.demanded).collect(),
                bids: route.iter().copied().zip(message.bids).collect(),
                gain,
            });
        }
    }
    let max_gain = worst.as_ref().map_or(0.0, |d| d.gain);
    Ok(NeReport {
        is_epsilon_ne: max_gain <= config.epsilon_ne,
        epsilon: config.epsilon_ne,
        worst_deviation: worst,
        gains,
        profile: profile.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsStatus {
    Converged,
    Cycled,
    Capped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub iteration: usize,
    pub traveler: TravelerId,
    pub edge: EdgeId,
    pub demanded: f64,
    pub bid: f64,
    pub utility: f64,
    pub nu_source: NuSource,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dynamics {
    pub status: DynamicsStatus,
    pub sweeps: usize,
    pub final_profile: MessageProfile,
    pub trajectory: Vec<TrajectoryRow>,
    /// Largest constraint violation of any iterate's allocation.
    pub max_violation: f64,
}

/// Repeated best responses from `initial` until the profile stops moving
/// (by `local_refine_tol`), revisits an earlier profile, or hits `max_sweeps`.
pub fn best_response_dynamics(
    scenario: &Scenario,
    initial: &MessageProfile,
    nu: &[f64],
    config: &DeviationSearchConfig,
) -> Result<Dynamics> {
    config.check()?;
    let mut profile = initial.clone();
    let mut trajectory = Vec::new();
    let mut max_violation = 0.0_f64;
    let mut history = vec![profile.clone()];
    let mut record = |iteration: usize, profile: &MessageProfile, trajectory: &mut Vec<TrajectoryRow>| -> Result<()> {
        let o = outcome(scenario, profile, nu)?;
        max_violation = max_violation.max(o.allocation.constraint_violation(scenario));
        for (t, traveler) in scenario.travelers.iter().enumerate() {
            let u = utility_at(scenario, &o, t);
            let m = profile.message(t);
            for (pos, &edge) in traveler.route.edges().iter().enumerate() {
                trajectory.push(TrajectoryRow {
                    iteration,
                    traveler: traveler.id,
                    edge,
                    demanded: m.demanded[pos],
                    bid: m.bids[pos],
                    utility: u,
                    nu_source: scenario.mechanism.nu_source,
                });
            }
        }
        Ok(())
    };
    record(0, &profile, &mut trajectory)?;

    let mut status = DynamicsStatus::Capped;
    let mut sweeps = 0;
    while sweeps < config.max_sweeps {
        sweeps += 1;
        let previous = profile.clone();
        match config.update {
            UpdateRule::RoundRobin => {
                for t in 0..scenario.travelers.len() {
                    let m = best_response(scenario, &profile, nu, t, config);
                    profile.replace(t, m)?;
                }
            }
            UpdateRule::Simultaneous => {
                let moves: Vec<Message> = (0..scenario.travelers.len())
                    .map(|t| best_response(scenario, &previous, nu, t, config))
                    .collect();
                for (t, m) in moves.into_iter().enumerate() {
                    profile.replace(t, m)?;
                }
            }
        }
        record(sweeps, &profile, &mut trajectory)?;
        if profile.max_abs_diff(&previous) <= config.local_refine_tol {
            status = DynamicsStatus::Converged;
            break;
        }
        let revisits = history[..history.len() - 1]
            .iter()
            .any(|h| profile.max_abs_diff(h) <= config.local_refine_tol);
        if revisits {
            status = DynamicsStatus::Cycled;
            break;
        }
        history.push(profile.clone());
    }
    Ok(Dynamics {
        status,
        sweeps,
        final_profile: profile,
        trajectory,
        max_violation,
    })
}

/// `θ̃ = θ̲ + 0.5`, `τ = 0` on every edge.
pub fn default_initial_profile(scenario: &Scenario) -> Result<MessageProfile> {
    let index = scenario.index();
    MessageProfile::from_fn(scenario, |t, pos| (scenario.edge(index.route(t)[pos]).min_travel_time + 0.5, 0.0))
}

pub fn trajectory_csv(rows: &[TrajectoryRow]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row).map_err(|e| Error::Io(e.into()))?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrViolation {
    pub traveler: TravelerId,
    pub utility: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SitOut {
    pub traveler: TravelerId,
    pub utility: f64,
    pub closed_form: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub budget_residual: f64,
    pub total_abs_payment: f64,
    pub utilities: Vec<f64>,
    pub ir_violations: Vec<IrViolation>,
    pub no_participation: Vec<SitOut>,
    pub feasibility_ok: bool,
    pub implementation_distance: f64,
    pub price_alignment_residual: f64,
    pub penalty_at_ne: BTreeMap<TravelerId, Penalty>,
    pub degeneracy_flags: Vec<DegeneracyFlag>,
}

pub const IR_TOL: f64 = 1e-9;
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Evaluates budget balance, individual rationality, feasibility, distance to
/// the optimum, price alignment and penalties at `profile`.
pub fn verify_properties(scenario: &Scenario, profile: &MessageProfile, solved: &SolverResult) -> Result<PropertyReport> {
    if !solved.converged {
        return Err(Error::Precondition("property checks need a converged solver result".into()));
    }
    let nu = solved.certificate.nu();
    let o = outcome(scenario, profile, nu)?;
    let utilities: Vec<f64> = (0..scenario.travelers.len()).map(|t| utility_at(scenario, &o, t)).collect();
    let ir_violations = utilities
        .iter()
        .zip(&scenario.travelers)
        .filter(|(u, _)| !(**u >= -IR_TOL))
        .map(|(&utility, tr)| IrViolation {
            traveler: tr.id,
            utility,
        })
        .collect();
    let no_participation = scenario
        .travelers
        .iter()
        .map(|tr| {
            Ok(SitOut {
                traveler: tr.id,
                utility: no_participation_utility(scenario, profile, nu, tr.id)?,
                closed_form: no_participation_closed_form(scenario, nu, tr.id)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let index = scenario.index();
    let mut alignment = 0.0_f64;
    for (t, m) in profile.messages().iter().enumerate() {
        for (pos, &bid) in m.bids.iter().enumerate() {
            alignment = alignment.max((bid - nu[index.route(t)[pos]]).abs());
        }
    }
    Ok(PropertyReport {
        budget_residual: o.total_payment().abs(),
        total_abs_payment: o.payments.iter().map(|p| p.abs()).sum(),
        utilities,
        ir_violations,
        no_participation,
        feasibility_ok: o.allocation.constraint_violation(scenario) <= FEASIBILITY_TOL,
        implementation_distance: o.allocation.max_abs_diff(&solved.allocation),
        price_alignment_residual: alignment,
        penalty_at_ne: scenario.travelers.iter().map(|tr| tr.id).zip(o.penalties.iter().copied()).collect(),
        degeneracy_flags: degeneracy_flags(scenario, profile),
    })
}
