//! The indirect mechanism: messages `m_i = (θ̃_i, τ_i)`, the outcome function
//! (allocation by boundary projection), edge payments and the penalty schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{EdgeId, TravelerId};
use crate::scenario::Scenario;
use crate::solver::{check_nested_shape, Allocation};

/// Where the payment's reference price `ν_e` comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuSource {
    /// The capacity multiplier from the centralized KKT certificate.
    #[default]
    ExternalCertificate,
    /// `ν_e := τ₋ᵢ^e`, the average of the competitors' bids.
    CompetitorProxy,
}

impl std::str::FromStr for NuSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "external_certificate" => Ok(Self::ExternalCertificate),
            "competitor_proxy" => Ok(Self::CompetitorProxy),
            other => Err(Error::Usage(format!("unknown nu_source {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MechanismParams {
    /// Charged for demanding more than `θ̲^e` on an edge nobody else uses.
    pub gamma: f64,
    /// Charged for demanding exactly `θ̲^e` on a shared edge.
    pub delta: f64,
    pub nu_source: NuSource,
}

impl Default for MechanismParams {
    fn default() -> Self {
        Self {
            gamma: 1e6,
            delta: 1e6,
            nu_source: NuSource::ExternalCertificate,
        }
    }
}

impl MechanismParams {
    pub(crate) fn check(&self) -> Result<()> {
        for (name, x) in [("gamma", self.gamma), ("delta", self.delta)] {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::Attribute(format!("mechanism.{name} must be positive, got {x}")));
            }
        }
        Ok(())
    }
}

/// One traveler's report, aligned with its route: `demanded[k]` and `bids[k]`
/// refer to the `k`-th edge of the route.
#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub traveler: TravelerId,
    pub demanded: Vec<f64>,
    pub bids: Vec<f64>,
}

/// Exactly one message per traveler, in scenario traveler order.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageProfile {
    messages: Vec<Message>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageEntry {
    pub demanded_times: BTreeMap<EdgeId, f64>,
    pub bid_prices: BTreeMap<EdgeId, f64>,
}

/// On-disk message profile, keyed by traveler id then edge id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileFile {
    pub messages: BTreeMap<TravelerId, MessageEntry>,
}

impl MessageProfile {
    pub fn new(scenario: &Scenario, mut messages: Vec<Message>) -> Result<Self> {
        messages.sort_by_key(|m| m.traveler);
        if messages.len() != scenario.travelers.len() {
            return Err(Error::Structural(format!(
                "profile has {} messages for {} travelers",
                messages.len(),
                scenario.travelers.len()
            )));
        }
        for (m, t) in messages.iter().zip(&scenario.travelers) {
            if m.traveler != t.id {
                return Err(Error::Structural(format!(
                    "profile message for traveler {} does not match scenario traveler {}",
                    m.traveler, t.id
                )));
            }
            check_message(m, t.route.len())?;
        }
        Ok(Self { messages })
    }

    /// Builds a profile from `f(traveler index, route position) -> (θ̃, τ)`.
    pub fn from_fn(scenario: &Scenario, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Result<Self> {
        let messages = scenario
            .travelers
            .iter()
            .enumerate()
            .map(|(t, traveler)| {
                let (demanded, bids) = (0..traveler.route.len()).map(|pos| f(t, pos)).unzip();
                Message {
                    traveler: traveler.id,
                    demanded,
                    bids,
                }
            })
            .collect();
        Self::new(scenario, messages)
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn message(&self, t: usize) -> &Message {
        &self.messages[t]
    }

    /// Replaces traveler `t`'s message, keeping the profile valid.
    pub fn replace(&mut self, t: usize, message: Message) -> Result<()> {
        if message.traveler != self.messages[t].traveler {
            return Err(Error::Structural(format!(
                "replacement message belongs to traveler {}, slot holds {}",
                message.traveler, self.messages[t].traveler
            )));
        }
        check_message(&message, self.messages[t].demanded.len())?;
        self.messages[t] = message;
        Ok(())
    }

    pub fn demands(&self) -> Vec<Vec<f64>> {
        self.messages.iter().map(|m| m.demanded.clone()).collect()
    }

    pub fn max_abs_diff(&self, other: &MessageProfile) -> f64 {
        self.messages
            .iter()
            .zip(&other.messages)
            .flat_map(|(a, b)| {
                a.demanded
                    .iter()
                    .zip(&b.demanded)
                    .chain(a.bids.iter().zip(&b.bids))
                    .map(|(x, y)| (x - y).abs())
            })
            .fold(0.0, f64::max)
    }

    pub fn to_file(&self, scenario: &Scenario) -> ProfileFile {
        let messages = self
            .messages
            .iter()
            .zip(&scenario.travelers)
            .map(|(m, t)| {
                let edges = t.route.edges();
                (
                    m.traveler,
                    MessageEntry {
                        demanded_times: edges.iter().copied().zip(m.demanded.iter().copied()).collect(),
                        bid_prices: edges.iter().copied().zip(m.bids.iter().copied()).collect(),
                    },
                )
            })
            .collect();
        ProfileFile { messages }
    }

    /// Both edge maps must have exactly the keys `R_i`.
    pub fn from_file(scenario: &Scenario, file: &ProfileFile) -> Result<Self> {
        let mut messages = Vec::with_capacity(file.messages.len());
        for (&id, entry) in &file.messages {
            let t = scenario
                .traveler_index(id)
                .ok_or_else(|| Error::Structural(format!("profile names unknown traveler {id}")))?;
            let route = scenario.travelers[t].route.edges();
            let pick = |map: &BTreeMap<EdgeId, f64>, what: &str| -> Result<Vec<f64>> {
                if map.len() != route.len() || route.iter().any(|e| !map.contains_key(e)) {
                    return Err(Error::Structural(format!(
                        "traveler {id}: {what} keys must equal the route's edges"
                    )));
                }
                Ok(route.iter().map(|e| map[e]).collect())
            };
            messages.push(Message {
                traveler: id,
                demanded: pick(&entry.demanded_times, "demanded_times")?,
                bids: pick(&entry.bid_prices, "bid_prices")?,
            });
        }
        Self::new(scenario, messages)
    }
}

fn check_message(m: &Message, route_len: usize) -> Result<()> {
    if m.demanded.len() != route_len || m.bids.len() != route_len {
        return Err(Error::Structural(format!(
            "traveler {}: message must have one demand and one bid per route edge ({route_len})",
            m.traveler
        )));
    }
    if let Some(x) = m.demanded.iter().chain(&m.bids).find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::Domain(format!(
            "traveler {}: message entries must be finite and nonnegative, got {x}",
            m.traveler
        )));
    }
    Ok(())
}

/// Which case of the penalty schedule applies to a demand vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    None,
    /// `θ̃ > θ̲` on an edge with `|S_e| = 1`: γ.
    Efficiency,
    /// `θ̃ = θ̲` on an edge with `|S_e| ≥ 2`: δ.
    Safety,
    /// `θ̃ < θ̲` anywhere: +∞.
    BelowMinimum,
}

impl Penalty {
    pub fn amount(self, params: &MechanismParams) -> f64 {
        match self {
            Penalty::None => 0.0,
            Penalty::Efficiency => params.gamma,
            Penalty::Safety => params.delta,
            Penalty::BelowMinimum => f64::INFINITY,
        }
    }
}

/// Penalty for traveler `t` (dense index) reporting `demanded` along its route.
/// Cases do not stack; precedence is below-minimum, then γ, then δ.
pub(crate) fn penalty_at(scenario: &Scenario, t: usize, demanded: &[f64]) -> Penalty {
    let index = scenario.index();
    let mut worst = Penalty::None;
    for (&e, &d) in index.route(t).iter().zip(demanded) {
        let floor = scenario.edge(e).min_travel_time;
        let crowd = index.crowd(e);
        let case = if d < floor {
            return Penalty::BelowMinimum;
        } else if d > floor && crowd == 1 {
            Penalty::Efficiency
        } else if d == floor && crowd >= 2 {
            Penalty::Safety
        } else {
            Penalty::None
        };
        worst = match (worst, case) {
            (Penalty::Efficiency, _) | (_, Penalty::Efficiency) => Penalty::Efficiency,
            (Penalty::Safety, _) | (_, Penalty::Safety) => Penalty::Safety,
            _ => Penalty::None,
        };
    }
    worst
}

pub fn penalty(scenario: &Scenario, traveler: TravelerId, demanded: &[f64]) -> Result<Penalty> {
    let t = traveler_index(scenario, traveler)?;
    if demanded.len() != scenario.travelers[t].route.len() {
        return Err(Error::Structural(format!(
            "traveler {traveler}: {} demands for a route of {} edges",
            demanded.len(),
            scenario.travelers[t].route.len()
        )));
    }
    Ok(penalty_at(scenario, t, demanded))
}

fn traveler_index(scenario: &Scenario, id: TravelerId) -> Result<usize> {
    scenario
        .traveler_index(id)
        .ok_or_else(|| Error::Structural(format!("unknown traveler {id}")))
}

fn edge_slot(scenario: &Scenario, traveler: TravelerId, edge: EdgeId) -> Result<(usize, usize)> {
    let t = traveler_index(scenario, traveler)?;
    let pos = scenario
        .route_position(t, edge)
        .ok_or_else(|| Error::Domain(format!("traveler {traveler} is not in S_e for edge {edge}")))?;
    Ok((t, pos))
}

/// `τ₋ᵢ^e`: mean bid of the other travelers on the edge; 0 when `|S_e| = 1`.
pub(crate) fn average_price_others_at(scenario: &Scenario, profile: &MessageProfile, t: usize, pos: usize) -> f64 {
    let e = scenario.index().route(t)[pos];
    let members = scenario.index().members(e);
    if members.len() < 2 {
        return 0.0;
    }
    let sum: f64 = members
        .iter()
        .filter(|s| s.traveler != t)
        .map(|s| profile.message(s.traveler).bids[s.pos])
        .sum();
    sum / (members.len() - 1) as f64
}

pub fn average_price_others(
    scenario: &Scenario,
    profile: &MessageProfile,
    edge: EdgeId,
    traveler: TravelerId,
) -> Result<f64> {
    let (t, pos) = edge_slot(scenario, traveler, edge)?;
    Ok(average_price_others_at(scenario, profile, t, pos))
}

/// Maps reported demands onto the constraint set.
///
/// Per edge: demands are floored at `θ̲^e`; if the floored load exceeds
/// `c_e`, every excess above `θ̲^e` is scaled by the common factor
/// `(c_e − Σ α θ̲) / Σ α (θ̃ − θ̲)`, which puts the load exactly on capacity.
pub fn project_to_feasible(scenario: &Scenario, demands: &[Vec<f64>]) -> Result<Allocation> {
    check_nested_shape(scenario, demands, "demands")?;
    if let Some(x) = demands.iter().flatten().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::Domain(format!("demands must be finite and nonnegative, got {x}")));
    }
    let index = scenario.index();
    let mut allocation = Allocation::new(demands.to_vec());
    for (e, edge) in scenario.network.edges().iter().enumerate() {
        let members = index.members(e);
        let floor = edge.min_travel_time;
        let mut lower_load = 0.0;
        let mut floored_load = 0.0;
        let mut excess = 0.0;
        for s in members {
            let alpha = scenario.travelers[s.traveler].alpha;
            let d = demands[s.traveler][s.pos].max(floor);
            lower_load += alpha * floor;
            floored_load += alpha * d;
            excess += alpha * (d - floor);
        }
        if lower_load > edge.capacity {
            return Err(Error::Infeasible {
                edge: edge.id,
                required: lower_load,
                capacity: edge.capacity,
            });
        }
        let factor = if floored_load <= edge.capacity {
            1.0
        } else {
            (edge.capacity - lower_load) / excess
        };
        for s in members {
            let d = demands[s.traveler][s.pos].max(floor);
            allocation.set(s.traveler, s.pos, floor + (d - floor) * factor);
        }
    }
    Ok(allocation)
}

/// Resolves `ν_e` for traveler `t` at route position `pos`.
pub(crate) fn reference_price(
    scenario: &Scenario,
    profile: &MessageProfile,
    nu: &[f64],
    t: usize,
    pos: usize,
) -> f64 {
    match scenario.mechanism.nu_source {
        NuSource::ExternalCertificate => nu[scenario.index().route(t)[pos]],
        NuSource::CompetitorProxy => average_price_others_at(scenario, profile, t, pos),
    }
}

/// Three-term edge payment, evaluated on the reported (pre-projection) demands:
///
/// `τ₋ᵢ (α_i θ̃_i − c/|S_e|) + (τ_i − ν_e)² + τ₋ᵢ (τ_i − τ₋ᵢ) (c − Σ_j α_j θ̃_j)²`
///
/// Zero on edges nobody else uses.
pub(crate) fn edge_payment_at(scenario: &Scenario, profile: &MessageProfile, t: usize, pos: usize, nu_e: f64) -> f64 {
    let index = scenario.index();
    let e = index.route(t)[pos];
    let members = index.members(e);
    let crowd = members.len();
    if crowd < 2 {
        return 0.0;
    }
    let edge = scenario.edge(e);
    let reported_load: f64 = members
        .iter()
        .map(|s| scenario.travelers[s.traveler].alpha * profile.message(s.traveler).demanded[s.pos])
        .sum();
    let message = profile.message(t);
    let others = average_price_others_at(scenario, profile, t, pos);
    edge_payment_terms(
        others,
        scenario.travelers[t].alpha * message.demanded[pos],
        edge.capacity,
        crowd,
        message.bids[pos],
        nu_e,
        edge.capacity - reported_load,
    )
}

/// The payment formula itself, shared with the deviation search.
#[inline]
pub(crate) fn edge_payment_terms(
    others: f64,
    weighted_demand: f64,
    capacity: f64,
    crowd: usize,
    bid: f64,
    nu_e: f64,
    reported_slack: f64,
) -> f64 {
    let share = others * (weighted_demand - capacity / crowd as f64);
    let price_gap = (bid - nu_e) * (bid - nu_e);
    let coupling = others * (bid - others) * reported_slack * reported_slack;
    share + price_gap + coupling
}

pub fn edge_payment(
    scenario: &Scenario,
    profile: &MessageProfile,
    traveler: TravelerId,
    edge: EdgeId,
    nu_e: f64,
) -> Result<f64> {
    let (t, pos) = edge_slot(scenario, traveler, edge)?;
    Ok(edge_payment_at(scenario, profile, t, pos, nu_e))
}

/// `g(μ)`: allocation plus payments.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub allocation: Allocation,
    /// `t_i = Σ_{e∈R_i} t_i^e + φ_i`.
    pub payments: Vec<f64>,
    pub edge_payments: Vec<Vec<f64>>,
    pub penalties: Vec<Penalty>,
}

impl Outcome {
    pub fn total_payment(&self) -> f64 {
        self.payments.iter().sum()
    }
}

/// Evaluates the mechanism on `profile`. `nu` is indexed by dense edge index and
/// is read only when the scenario's `nu_source` is the external certificate.
pub fn outcome(scenario: &Scenario, profile: &MessageProfile, nu: &[f64]) -> Result<Outcome> {
    if profile.messages.len() != scenario.travelers.len() {
        return Err(Error::Structural("profile does not match scenario".into()));
    }
    if nu.len() != scenario.network.num_edges() {
        return Err(Error::Structural(format!(
            "nu has {} entries, network has {} edges",
            nu.len(),
            scenario.network.num_edges()
        )));
    }
    let allocation = project_to_feasible(scenario, &profile.demands())?;
    let mut payments = Vec::with_capacity(scenario.travelers.len());
    let mut edge_payments = Vec::with_capacity(scenario.travelers.len());
    let mut penalties = Vec::with_capacity(scenario.travelers.len());
    for (t, message) in profile.messages.iter().enumerate() {
        let row: Vec<f64> = (0..message.demanded.len())
            .map(|pos| {
                let nu_e = reference_price(scenario, profile, nu, t, pos);
                edge_payment_at(scenario, profile, t, pos, nu_e)
            })
            .collect();
        let phi = penalty_at(scenario, t, &message.demanded);
        payments.push(row.iter().sum::<f64>() + phi.amount(&scenario.mechanism));
        edge_payments.push(row);
        penalties.push(phi);
    }
    Ok(Outcome {
        allocation,
        payments,
        edge_payments,
        penalties,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_random_scenario, single_traveler, worked_resource_example, SizeSpec};
    use crate::valuation::Orientation;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const NU: f64 = 5.0 / 12.0;

    fn two(scenario: &Scenario, demands: [f64; 2], bids: [f64; 2]) -> MessageProfile {
        MessageProfile::from_fn(scenario, |t, _| (demands[t], bids[t])).unwrap()
    }

    #[test]
    fn average_price_examples() {
        // Three travelers sharing one edge.
        let size = SizeSpec {
            edges: 1,
            travelers: 3,
            max_route_len: 1,
            ..SizeSpec::default()
        };
        let s = generate_random_scenario(5, &size).unwrap();
        let bids = [0.9, 0.2, 0.6];
        let p = MessageProfile::from_fn(&s, |t, _| (2.0, bids[t])).unwrap();
        let avg = average_price_others(&s, &p, EdgeId(0), TravelerId(1)).unwrap();
        assert_abs_diff_eq!(avg, 0.4, epsilon = 1e-15);

        let w = worked_resource_example();
        let p = two(&w, [3.8, 6.2], [0.1, NU]);
        assert_eq!(average_price_others(&w, &p, EdgeId(1), TravelerId(1)).unwrap(), NU);

        let single = single_traveler(Orientation::ResourceMode);
        let p = MessageProfile::from_fn(&single, |_, _| (1.0, 3.0)).unwrap();
        assert_eq!(average_price_others(&single, &p, EdgeId(1), TravelerId(1)).unwrap(), 0.0);
        assert!(matches!(
            average_price_others(&w, &two(&w, [1.0, 1.0], [0.0, 0.0]), EdgeId(9), TravelerId(1)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn projection_examples() {
        let w = worked_resource_example();
        let a = project_to_feasible(&w, &[vec![3.8], vec![6.2]]).unwrap();
        assert_eq!(a.rows(), &[vec![3.8], vec![6.2]]);

        let a = project_to_feasible(&w, &[vec![8.0], vec![8.0]]).unwrap();
        assert_abs_diff_eq!(a.at(0, 0), 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.at(1, 0), 5.0, epsilon = 1e-12);

        let a = project_to_feasible(&w, &[vec![0.5], vec![8.0]]).unwrap();
        assert_eq!(a.rows(), &[vec![1.0], vec![8.0]]);

        assert!(matches!(
            project_to_feasible(&crate::scenario::infeasible_example(), &[vec![1.0], vec![1.0]]),
            Err(Error::Infeasible { .. })
        ));
        assert!(matches!(project_to_feasible(&w, &[vec![-1.0], vec![1.0]]), Err(Error::Domain(_))));
    }

    #[test]
    fn edge_payment_examples() {
        let w = worked_resource_example();
        let p = two(&w, [3.8, 6.2], [NU, NU]);
        assert_abs_diff_eq!(edge_payment(&w, &p, TravelerId(1), EdgeId(1), NU).unwrap(), -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(edge_payment(&w, &p, TravelerId(2), EdgeId(1), NU).unwrap(), 0.5, epsilon = 1e-12);

        let p = two(&w, [4.0, 6.0], [0.5, 0.4]);
        let expected = 0.4 * (4.0 - 5.0) + (0.5 - NU) * (0.5 - NU) + 0.4 * (0.5 - 0.4) * 0.0;
        assert_abs_diff_eq!(edge_payment(&w, &p, TravelerId(1), EdgeId(1), NU).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, -0.39306, epsilon = 1e-5);

        let single = single_traveler(Orientation::ResourceMode);
        let p = MessageProfile::from_fn(&single, |_, _| (4.0, 3.0)).unwrap();
        assert_eq!(edge_payment(&single, &p, TravelerId(1), EdgeId(1), 1.0).unwrap(), 0.0);
    }

    #[test]
    fn penalty_examples() {
        let single = single_traveler(Orientation::ResourceMode);
        assert_eq!(penalty(&single, TravelerId(1), &[2.0]).unwrap(), Penalty::Efficiency);
        assert_eq!(penalty(&single, TravelerId(1), &[1.0]).unwrap(), Penalty::None);
        assert_eq!(penalty(&single, TravelerId(1), &[0.5]).unwrap(), Penalty::BelowMinimum);

        let w = worked_resource_example();
        assert_eq!(penalty(&w, TravelerId(1), &[1.0]).unwrap(), Penalty::Safety);
        assert_eq!(penalty(&w, TravelerId(1), &[1.5]).unwrap(), Penalty::None);
        assert_eq!(Penalty::BelowMinimum.amount(&w.mechanism), f64::INFINITY);
        assert_eq!(Penalty::Safety.amount(&w.mechanism), 1e6);
    }

    #[test]
    fn penalty_precedence_over_edges() {
        // chain of 2 edges; traveler 1 uses both, traveler 2 only the second edge.
        let s = generate_random_scenario(
            11,
            &SizeSpec {
                edges: 2,
                travelers: 2,
                max_route_len: 2,
                ..SizeSpec::default()
            },
        )
        .unwrap();
        // Find a traveler whose route covers a monopolised and a shared edge, if any.
        let idx = s.index();
        for (t, traveler) in s.travelers.iter().enumerate() {
            let route = idx.route(t);
            let mono = route.iter().position(|&e| idx.crowd(e) == 1);
            let shared = route.iter().position(|&e| idx.crowd(e) >= 2);
            if let (Some(m), Some(sh)) = (mono, shared) {
                let floors: Vec<f64> = route.iter().map(|&e| s.edge(e).min_travel_time).collect();
                let mut d = floors.clone();
                d[m] += 1.0; // γ case
                assert_eq!(penalty(&s, traveler.id, &d).unwrap(), Penalty::Efficiency);
                let d = floors.clone(); // shared at floor: δ
                assert_eq!(penalty(&s, traveler.id, &d).unwrap(), Penalty::Safety);
                let mut d = floors.clone();
                d[m] += 1.0;
                d[sh] = floors[sh] * 0.5;
                assert_eq!(penalty(&s, traveler.id, &d).unwrap(), Penalty::BelowMinimum);
            }
        }
    }

    #[test]
    fn outcome_examples() {
        let w = worked_resource_example();
        let o = outcome(&w, &two(&w, [3.8, 6.2], [NU, NU]), &[NU]).unwrap();
        assert_eq!(o.allocation.rows(), &[vec![3.8], vec![6.2]]);
        assert_abs_diff_eq!(o.payments[0], -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(o.payments[1], 0.5, epsilon = 1e-12);
        assert_eq!(o.penalties, vec![Penalty::None, Penalty::None]);
        assert_abs_diff_eq!(o.total_payment(), 0.0, epsilon = 1e-12);

        let p = two(&w, [8.0, 8.0], [NU, NU]);
        let o = outcome(&w, &p, &[NU]).unwrap();
        assert_abs_diff_eq!(o.allocation.at(0, 0), 5.0, epsilon = 1e-12);
        // Payments use the reports (8, 8): share term NU * (8 - 5), coupling term NU * 0 * ...
        assert_abs_diff_eq!(o.payments[0], NU * 3.0, epsilon = 1e-12);

        let single = single_traveler(Orientation::ResourceMode);
        let o = outcome(&single, &MessageProfile::from_fn(&single, |_, _| (1.0, 0.0)).unwrap(), &[0.0]).unwrap();
        assert_eq!(o.payments, vec![0.0]);
        assert_eq!(o.penalties, vec![Penalty::None]);
    }

    #[test]
    fn competitor_proxy_uses_average_bid() {
        let mut w = worked_resource_example();
        w.mechanism.nu_source = NuSource::CompetitorProxy;
        let p = two(&w, [3.8, 6.2], [0.5, 0.3]);
        let o = outcome(&w, &p, &[123.0]).unwrap();
        let expected = 0.3 * (3.8 - 5.0) + (0.5 - 0.3_f64).powi(2) + 0.3 * (0.5 - 0.3) * 0.0;
        assert_abs_diff_eq!(o.edge_payments[0][0], expected, epsilon = 1e-12);
    }

    #[test]
    fn profile_file_roundtrip_and_validation() {
        let w = worked_resource_example();
        let p = two(&w, [3.8, 6.2], [NU, NU]);
        let file = p.to_file(&w);
        let json = serde_json::to_string(&file).unwrap();
        let back: ProfileFile = serde_json::from_str(&json).unwrap();
        assert_eq!(MessageProfile::from_file(&w, &back).unwrap(), p);

        let mut missing = file.clone();
        missing.messages.remove(&TravelerId(2));
        assert!(MessageProfile::from_file(&w, &missing).is_err());

        let mut wrong_edge = file.clone();
        let entry = wrong_edge.messages.get_mut(&TravelerId(1)).unwrap();
        entry.bid_prices.insert(EdgeId(5), 1.0);
        assert!(MessageProfile::from_file(&w, &wrong_edge).is_err());

        let mut negative = file;
        negative.messages.get_mut(&TravelerId(1)).unwrap().demanded_times.insert(EdgeId(1), -1.0);
        assert!(matches!(MessageProfile::from_file(&w, &negative), Err(Error::Domain(_))));
    }

    fn random_case() -> impl Strategy<Value = (Scenario, MessageProfile)> {
        (0u64..10_000, 1usize..4, 1usize..5).prop_flat_map(|(seed, edges, travelers)| {
            let s = generate_random_scenario(
                seed,
                &SizeSpec {
                    edges,
                    travelers,
                    max_route_len: 2,
                    ..SizeSpec::default()
                },
            )
            .unwrap();
            let dim = s.dimension();
            (Just(s), proptest::collection::vec((0.0..30.0f64, 0.0..3.0f64), dim))
        })
        .prop_map(|(s, draws)| {
            let mut it = draws.into_iter();
            let p = MessageProfile::from_fn(&s, |_, _| it.next().unwrap()).unwrap();
            (s, p)
        })
    }

    proptest! {
        #[test]
        fn outcome_allocation_is_feasible((s, p) in random_case()) {
            let nu = vec![0.3; s.network.num_edges()];
            let o = outcome(&s, &p, &nu).unwrap();
            prop_assert!(o.allocation.constraint_violation(&s) <= 1e-9);
            for (t, pay) in o.payments.iter().enumerate() {
                let sum: f64 = o.edge_payments[t].iter().sum();
                prop_assert_eq!(*pay, sum + o.penalties[t].amount(&s.mechanism));
            }
        }

        #[test]
        fn projection_is_idempotent((s, p) in random_case()) {
            let once = project_to_feasible(&s, &p.demands()).unwrap();
            let twice = project_to_feasible(&s, once.rows()).unwrap();
            prop_assert!(once.max_abs_diff(&twice) <= 1e-12);
        }

        #[test]
        fn aligned_bids_sum_to_capacity_gap((s, p) in random_case(), price in 0.0..2.0f64) {
            let aligned = MessageProfile::from_fn(&s, |t, pos| (p.message(t).demanded[pos], price)).unwrap();
            let nu = vec![price; s.network.num_edges()];
            let idx = s.index();
            for (e, edge) in s.network.edges().iter().enumerate() {
                let members = idx.members(e);
                if members.len() < 2 {
                    continue;
                }
                let sum: f64 = members.iter().map(|m| edge_payment_at(&s, &aligned, m.traveler, m.pos, price)).sum();
                let load: f64 = members
                    .iter()
                    .map(|m| s.travelers[m.traveler].alpha * aligned.message(m.traveler).demanded[m.pos])
                    .sum();
                let expected = nu[e] * (load - edge.capacity);
                prop_assert!((sum - expected).abs() <= 1e-9 * (1.0 + expected.abs()), "{sum} vs {expected}");
            }
        }

        #[test]
        fn price_gap_term_minimised_at_reference(bid in 0.0..3.0f64, nu_e in 0.0..3.0f64, others in 0.0..3.0f64) {
            // With zero reported slack only the share and price-gap terms remain.
            let at = edge_payment_terms(others, 2.0, 10.0, 2, nu_e, nu_e, 0.0);
            let off = edge_payment_terms(others, 2.0, 10.0, 2, bid, nu_e, 0.0);
            prop_assert!(off >= at);
            prop_assert!((off - at - (bid - nu_e).powi(2)).abs() <= 1e-12);
        }

        #[test]
        fn penalty_is_total((s, p) in random_case()) {
            for t in 0..s.travelers.len() {
                let phi = penalty_at(&s, t, &p.message(t).demanded).amount(&s.mechanism);
                prop_assert!(phi == 0.0 || phi == s.mechanism.gamma || phi == s.mechanism.delta || phi == f64::INFINITY);
            }
        }
    }
}
