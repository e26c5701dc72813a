//! Transportation graph, fixed traveler routes, and the competition index sets.
//!
//! `S_e` is the set of travelers whose route uses edge `e`; `R_i` is the set of
//! edges on traveler `i`'s route. Everything downstream (solver, mechanism,
//! induced game) is indexed through [`IndexSets`], which stores both the
//! id-level sets and dense positions for the hot loops.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::valuation::{check_assumption1, Assumption1Report, ValuationSpec};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                fmt::Display::fmt(&self.0, f)
            }
        }
    };
}

id_type!(VertexId);
id_type!(EdgeId);
id_type!(TravelerId);

/// A directed road segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    pub tail: VertexId,
    pub head: VertexId,
    /// Capacity in weighted travel-time units (`Σ α_i θ_i^e ≤ capacity`).
    pub capacity: f64,
    /// Travel time on the empty road; no allocation may go below it.
    pub min_travel_time: f64,
}

impl Edge {
    pub fn new(id: EdgeId, tail: VertexId, head: VertexId, capacity: f64, min_travel_time: f64) -> Result<Self> {
        let edge = Self {
            id,
            tail,
            head,
            capacity,
            min_travel_time,
        };
        edge.check_attributes()?;
        Ok(edge)
    }

    fn check_attributes(&self) -> Result<()> {
        if !(self.capacity.is_finite() && self.capacity > 0.0) {
            return Err(Error::Attribute(format!(
                "edge {}: capacity must be positive and finite, got {}",
                self.id, self.capacity
            )));
        }
        if !(self.min_travel_time.is_finite() && self.min_travel_time >= 0.0) {
            return Err(Error::Attribute(format!(
                "edge {}: min_travel_time must be nonnegative and finite, got {}",
                self.id, self.min_travel_time
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct RawNetwork {
    vertices: Vec<VertexId>,
    edges: Vec<Edge>,
}

/// Validated directed graph. Parallel edges are allowed as long as ids differ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNetwork", into = "RawNetwork")]
pub struct Network {
    vertices: BTreeSet<VertexId>,
    edges: Vec<Edge>,
    index: BTreeMap<EdgeId, usize>,
}

impl TryFrom<RawNetwork> for Network {
    type Error = Error;

    fn try_from(raw: RawNetwork) -> Result<Self> {
        build_network(raw.vertices, raw.edges)
    }
}

impl From<Network> for RawNetwork {
    fn from(network: Network) -> Self {
        Self {
            vertices: network.vertices.into_iter().collect(),
            edges: network.edges,
        }
    }
}

/// Validates endpoints, attributes and id uniqueness.
pub fn build_network(vertices: impl IntoIterator<Item = VertexId>, edges: Vec<Edge>) -> Result<Network> {
    let vertices: BTreeSet<VertexId> = vertices.into_iter().collect();
    let mut index = BTreeMap::new();
    for (pos, edge) in edges.iter().enumerate() {
        edge.check_attributes()?;
        for endpoint in [edge.tail, edge.head] {
            if !vertices.contains(&endpoint) {
                return Err(Error::Structural(format!(
                    "edge {} references unknown vertex {}",
                    edge.id, endpoint
                )));
            }
        }
        if index.insert(edge.id, pos).is_some() {
            return Err(Error::Attribute(format!("duplicate edge id {}", edge.id)));
        }
    }
    Ok(Network { vertices, edges, index })
}

impl Network {
    pub fn vertices(&self) -> &BTreeSet<VertexId> {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: EdgeId) -> Option<&Edge> {
        self.index.get(&id).map(|&pos| &self.edges[pos])
    }

    /// Dense position of the edge in [`Network::edges`].
    pub fn edge_index(&self, id: EdgeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }
}

/// Ordered edge sequence `p_i(o_i, d_i)`. Routes are inputs and are never repaired.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Route(pub Vec<EdgeId>);

impl Route {
    pub fn edges(&self) -> &[EdgeId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks that the route is a simple, connected path from `origin` to `destination`.
    pub fn validate(&self, network: &Network, origin: VertexId, destination: VertexId) -> Result<()> {
        let first = self
            .0
            .first()
            .ok_or_else(|| Error::Structural("route is empty".into()))?;
        let mut seen = BTreeSet::new();
        let mut at = origin;
        for (step, id) in self.0.iter().enumerate() {
            let edge = network
                .edge(*id)
                .ok_or_else(|| Error::Structural(format!("route uses unknown edge {id}")))?;
            if !seen.insert(*id) {
                return Err(Error::Structural(format!("route repeats edge {id}")));
            }
            if edge.tail != at {
                return Err(if step == 0 {
                    Error::Structural(format!(
                        "route starts with edge {first} at vertex {}, expected origin {origin}",
                        edge.tail
                    ))
                } else {
                    Error::Structural(format!(
                        "route is disconnected: edge {id} leaves {} but previous edge ended at {at}",
                        edge.tail
                    ))
                });
            }
            at = edge.head;
        }
        if at != destination {
            return Err(Error::Structural(format!(
                "route ends at vertex {at}, expected destination {destination}"
            )));
        }
        Ok(())
    }
}

/// A traveler with a fixed route and private valuation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Traveler {
    pub id: TravelerId,
    pub origin: VertexId,
    pub destination: VertexId,
    pub route: Route,
    /// Reverse value of time; scales how much capacity a unit of travel time consumes.
    pub alpha: f64,
    pub valuation: ValuationSpec,
}

/// Position of a traveler's variable on an edge: `(traveler index, position on its route)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub traveler: usize,
    pub pos: usize,
}

/// The competition sets `S_e` and `R_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexSets {
    edge_ids: Vec<EdgeId>,
    traveler_ids: Vec<TravelerId>,
    /// By edge index: slots of travelers using the edge, sorted by traveler id.
    members: Vec<Vec<Slot>>,
    /// By traveler index: edge indices along the route.
    route_edges: Vec<Vec<usize>>,
}

/// Builds `S_e` and `R_i` from the routes. Edges used by nobody get an empty `S_e`.
pub fn derive_index_sets(network: &Network, travelers: &[Traveler]) -> Result<IndexSets> {
    let mut members = vec![Vec::new(); network.num_edges()];
    let mut route_edges = Vec::with_capacity(travelers.len());
    for (t, traveler) in travelers.iter().enumerate() {
        let mut edges = Vec::with_capacity(traveler.route.len());
        for (pos, id) in traveler.route.edges().iter().enumerate() {
            let e = network.edge_index(*id).ok_or_else(|| {
                Error::Structural(format!("traveler {} routes over unknown edge {id}", traveler.id))
            })?;
            members[e].push(Slot { traveler: t, pos });
            edges.push(e);
        }
        route_edges.push(edges);
    }
    for slots in &mut members {
        slots.sort_by_key(|s| travelers[s.traveler].id);
    }
    Ok(IndexSets {
        edge_ids: network.edges().iter().map(|e| e.id).collect(),
        traveler_ids: travelers.iter().map(|t| t.id).collect(),
        members,
        route_edges,
    })
}

impl IndexSets {
    /// Slots on edge `e` (dense index).
    pub fn members(&self, e: usize) -> &[Slot] {
        &self.members[e]
    }

    /// `|S_e|` for dense edge index `e`.
    pub fn crowd(&self, e: usize) -> usize {
        self.members[e].len()
    }

    /// Edge indices of traveler `t`'s route, in route order.
    pub fn route(&self, t: usize) -> &[usize] {
        &self.route_edges[t]
    }

    pub fn travelers_on_edge(&self, edge: EdgeId) -> Option<BTreeSet<TravelerId>> {
        let e = self.edge_ids.iter().position(|&id| id == edge)?;
        Some(self.members[e].iter().map(|s| self.traveler_ids[s.traveler]).collect())
    }

    pub fn edges_of_traveler(&self, traveler: TravelerId) -> Option<BTreeSet<EdgeId>> {
        let t = self.traveler_ids.iter().position(|&id| id == traveler)?;
        Some(self.route_edges[t].iter().map(|&e| self.edge_ids[e]).collect())
    }

    /// Id-level `(S, R)` maps; independent of the order travelers were supplied in.
    #[allow(clippy::type_complexity)]
    pub fn to_maps(
        &self,
    ) -> (
        BTreeMap<EdgeId, BTreeSet<TravelerId>>,
        BTreeMap<TravelerId, BTreeSet<EdgeId>>,
    ) {
        let s = self
            .edge_ids
            .iter()
            .enumerate()
            .map(|(e, &id)| {
                (
                    id,
                    self.members[e].iter().map(|s| self.traveler_ids[s.traveler]).collect(),
                )
            })
            .collect();
        let r = self
            .traveler_ids
            .iter()
            .enumerate()
            .map(|(t, &id)| (id, self.route_edges[t].iter().map(|&e| self.edge_ids[e]).collect()))
            .collect();
        (s, r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdgeFeasibility {
    pub edge: EdgeId,
    /// `Σ_{i∈S_e} α_i θ̲^e`
    pub lower_bound_load: f64,
    pub capacity: f64,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValuationCheck {
    pub traveler: TravelerId,
    pub report: Assumption1Report,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub edges: Vec<EdgeFeasibility>,
    pub valuations: Vec<ValuationCheck>,
    /// Penalties γ, δ are at least 10³ × the largest |v_i| sampled on the feasible box.
    pub penalty_scale_ok: bool,
}

impl ValidationReport {
    pub fn feasible(&self) -> bool {
        self.edges.iter().all(|e| e.feasible)
    }

    pub fn valuations_ok(&self) -> bool {
        self.valuations.iter().all(|v| v.report.passed())
    }

    pub fn passes(&self) -> bool {
        self.feasible() && self.valuations_ok() && self.penalty_scale_ok
    }

    pub fn first_infeasible(&self) -> Option<&EdgeFeasibility> {
        self.edges.iter().find(|e| !e.feasible)
    }
}

/// Checks that the lower-bound point `θ_i^e = θ̲^e` fits every capacity and that
/// every valuation satisfies its declared shape assumptions.
pub fn validate_scenario(scenario: &Scenario) -> ValidationReport {
    let network = &scenario.network;
    let index = scenario.index();
    let edges = network
        .edges()
        .iter()
        .enumerate()
        .map(|(e, edge)| {
            let load: f64 = index
                .members(e)
                .iter()
                .map(|s| scenario.travelers[s.traveler].alpha * edge.min_travel_time)
                .sum();
            EdgeFeasibility {
                edge: edge.id,
                lower_bound_load: load,
                capacity: edge.capacity,
                feasible: load <= edge.capacity,
            }
        })
        .collect();

    let valuations = scenario
        .travelers
        .iter()
        .enumerate()
        .map(|(t, traveler)| {
            let grid = assumption_grid(scenario, t);
            ValuationCheck {
                traveler: traveler.id,
                report: check_assumption1(&traveler.valuation, &grid),
            }
        })
        .collect();

    let max_abs_value = max_abs_valuation(scenario);
    let params = &scenario.mechanism;
    let penalty_scale_ok = params.gamma.min(params.delta) >= 1e3 * max_abs_value;

    ValidationReport {
        edges,
        valuations,
        penalty_scale_ok,
    }
}

/// Largest `|v_i(θ)|` over the assumption grids of all travelers.
pub(crate) fn max_abs_valuation(scenario: &Scenario) -> f64 {
    scenario
        .travelers
        .iter()
        .enumerate()
        .flat_map(|(t, traveler)| {
            assumption_grid(scenario, t)
                .into_iter()
                .map(move |theta| traveler.valuation.value(theta).abs())
        })
        .fold(0.0_f64, f64::max)
}

/// 33 evenly spaced points on `[0, max_e c_e/α_i]` for traveler `t`.
fn assumption_grid(scenario: &Scenario, t: usize) -> Vec<f64> {
    let traveler = &scenario.travelers[t];
    let upper = scenario
        .index()
        .route(t)
        .iter()
        .map(|&e| scenario.network.edges()[e].capacity / traveler.alpha)
        .fold(1.0_f64, f64::max);
    (0..=32).map(|k| upper * k as f64 / 32.0).collect()
}
