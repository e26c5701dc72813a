//! Scenario files and seeded scenario generation.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::MechanismParams;
use crate::network::{build_network, derive_index_sets, max_abs_valuation, Edge, EdgeId, IndexSets, Network, Route, Traveler, TravelerId, VertexId};
use crate::solver::SolverConfig;
use crate::valuation::{Orientation, ValuationSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for AlphaBounds {
    fn default() -> Self {
        Self { lo: 1.0, hi: 10.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub orientation: Orientation,
}

#[derive(Serialize, Deserialize)]
struct RawScenario {
    network: Network,
    #[serde(default)]
    travelers: Vec<Traveler>,
    #[serde(default)]
    mechanism: MechanismParams,
    #[serde(default)]
    solver: SolverConfig,
    #[serde(default)]
    metadata: Metadata,
    #[serde(default)]
    alpha_bounds: AlphaBounds,
}

/// A network, its travelers and the run configuration.
///
/// Travelers are kept sorted by id, so every dense traveler index is stable
/// regardless of the order they were supplied in.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "RawScenario", into = "RawScenario")]
pub struct Scenario {
    pub network: Network,
    pub travelers: Vec<Traveler>,
    pub mechanism: MechanismParams,
    pub solver: SolverConfig,
    pub metadata: Metadata,
    pub alpha_bounds: AlphaBounds,
    index: IndexSets,
}

impl PartialEq for Scenario {
    fn eq(&self, other: &Self) -> bool {
        self.network == other.network
            && self.travelers == other.travelers
            && self.mechanism == other.mechanism
            && self.solver == other.solver
            && self.metadata == other.metadata
            && self.alpha_bounds == other.alpha_bounds
    }
}

impl TryFrom<RawScenario> for Scenario {
    type Error = Error;

    fn try_from(raw: RawScenario) -> Result<Self> {
        Scenario::new(
            raw.network,
            raw.travelers,
            raw.mechanism,
            raw.solver,
            raw.metadata,
            raw.alpha_bounds,
        )
    }
}

impl From<Scenario> for RawScenario {
    fn from(s: Scenario) -> Self {
        Self {
            network: s.network,
            travelers: s.travelers,
            mechanism: s.mechanism,
            solver: s.solver,
            metadata: s.metadata,
            alpha_bounds: s.alpha_bounds,
        }
    }
}

impl Scenario {
    /// Structural and attribute validation. Capacity feasibility at the lower
    /// bounds is *not* required here; see [`crate::network::validate_scenario`].
    pub fn new(
        network: Network,
        mut travelers: Vec<Traveler>,
        mechanism: MechanismParams,
        solver: SolverConfig,
        metadata: Metadata,
        alpha_bounds: AlphaBounds,
    ) -> Result<Self> {
        if !(alpha_bounds.lo >= 1.0 && alpha_bounds.lo <= alpha_bounds.hi && alpha_bounds.hi.is_finite()) {
            return Err(Error::Attribute(format!(
                "alpha_bounds must satisfy 1 <= lo <= hi < inf, got [{}, {}]",
                alpha_bounds.lo, alpha_bounds.hi
            )));
        }
        mechanism.check()?;
        solver.check()?;

        travelers.sort_by_key(|t| t.id);
        let mut seen = BTreeSet::new();
        for t in &travelers {
            if !seen.insert(t.id) {
                return Err(Error::Attribute(format!("duplicate traveler id {}", t.id)));
            }
            if !(t.alpha >= alpha_bounds.lo && t.alpha <= alpha_bounds.hi) {
                return Err(Error::Attribute(format!(
                    "traveler {}: alpha {} outside [{}, {}]",
                    t.id, t.alpha, alpha_bounds.lo, alpha_bounds.hi
                )));
            }
            if t.valuation.orientation() != metadata.orientation {
                return Err(Error::Attribute(format!(
                    "traveler {}: valuation orientation {:?} differs from scenario orientation {:?}",
                    t.id,
                    t.valuation.orientation(),
                    metadata.orientation
                )));
            }
            t.route
                .validate(&network, t.origin, t.destination)
                .map_err(|e| Error::Structural(format!("traveler {}: {e}", t.id)))?;
        }
        let index = derive_index_sets(&network, &travelers)?;
        Ok(Self {
            network,
            travelers,
            mechanism,
            solver,
            metadata,
            alpha_bounds,
            index,
        })
    }

    pub fn index(&self) -> &IndexSets {
        &self.index
    }

    pub fn traveler_index(&self, id: TravelerId) -> Option<usize> {
        self.travelers.binary_search_by_key(&id, |t| t.id).ok()
    }

    /// Position of `edge` on traveler `t`'s route.
    pub fn route_position(&self, t: usize, edge: EdgeId) -> Option<usize> {
        self.travelers[t].route.edges().iter().position(|&e| e == edge)
    }

    /// `Σ_i |R_i|`, the number of decision variables.
    pub fn dimension(&self) -> usize {
        self.travelers.iter().map(|t| t.route.len()).sum()
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.network.edges()[e]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    Scenario::from_json(&text)
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    let mut text = scenario.to_json()?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Shape of a generated scenario. Ranges are inclusive-exclusive `[lo, hi)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeSpec {
    pub edges: usize,
    pub travelers: usize,
    pub orientation: Orientation,
    /// Longest route, in edges.
    pub max_route_len: usize,
    /// Every edge that carries traffic carries at least two travelers.
    pub all_shared: bool,
    pub alpha_range: (f64, f64),
    pub min_time_range: (f64, f64),
    /// Capacity = factor × `Σ_{i∈S_e} α_i θ̲^e`; factor ≥ 1.5 keeps the lower bounds feasible.
    pub capacity_factor: (f64, f64),
}

impl Default for SizeSpec {
    fn default() -> Self {
        Self {
            edges: 3,
            travelers: 4,
            orientation: Orientation::ResourceMode,
            max_route_len: 2,
            all_shared: false,
            alpha_range: (1.0, 3.0),
            min_time_range: (0.5, 2.0),
            capacity_factor: (1.5, 3.0),
        }
    }
}

/// Deterministic for a fixed `(seed, size)`.
///
/// The network is a chain `0 → 1 → … → edges`; routes are contiguous
/// sub-chains, so every generated route is a valid simple path.
pub fn generate_random_scenario(seed: u64, size: &SizeSpec) -> Result<Scenario> {
    if size.travelers > 0 && size.edges == 0 {
        return Err(Error::Generation("travelers need at least one edge".into()));
    }
    if size.all_shared && size.travelers == 1 {
        return Err(Error::Generation("a single traveler cannot share an edge".into()));
    }
    if size.travelers > 0 && size.max_route_len == 0 {
        return Err(Error::Generation("max_route_len must be positive".into()));
    }
    let ranges = [size.alpha_range, size.min_time_range, size.capacity_factor];
    if ranges.iter().any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
        return Err(Error::Generation("malformed parameter range".into()));
    }
    if size.alpha_range.0 < 1.0 || size.min_time_range.0 < 0.0 || size.capacity_factor.0 < 1.5 {
        return Err(Error::Generation(
            "alpha >= 1, min travel time >= 0 and capacity factor >= 1.5 are required".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if lo == hi { lo } else { rng.random_range(lo..hi) };

    let min_times: Vec<f64> = (0..size.edges).map(|_| draw(&mut rng, size.min_time_range)).collect();

    // Contiguous segments [start, end) of the chain.
    let segment = |rng: &mut ChaCha8Rng| {
        let len = rng.random_range(1..=size.max_route_len.min(size.edges));
        let start = rng.random_range(0..=size.edges - len);
        (start, start + len)
    };
    let segments: Vec<(usize, usize)> = if size.all_shared {
        let distinct: Vec<_> = (0..(size.travelers / 2).max(1)).map(|_| segment(&mut rng)).collect();
        (0..size.travelers).map(|k| distinct[k % distinct.len()]).collect()
    } else {
        (0..size.travelers).map(|_| segment(&mut rng)).collect()
    };

    let mut travelers = Vec::with_capacity(size.travelers);
    for (k, &(start, end)) in segments.iter().enumerate() {
        let alpha = draw(&mut rng, size.alpha_range);
        let valuation = match size.orientation {
            Orientation::ResourceMode => ValuationSpec::log_resource(rng.random_range(1.0..5.0))?,
            Orientation::PaperLiteral => {
                if rng.random_bool(0.5) {
                    ValuationSpec::neg_quadratic(rng.random_range(0.5..2.0), rng.random_range(0.0..1.0))?
                } else {
                    ValuationSpec::neg_exponential(rng.random_range(0.5..2.0), rng.random_range(0.1..0.5))?
                }
            }
        };
        travelers.push(Traveler {
            id: TravelerId(k as u32 + 1),
            origin: VertexId(start as u32),
            destination: VertexId(end as u32),
            route: Route((start..end).map(|e| EdgeId(e as u32)).collect()),
            alpha,
            valuation,
        });
    }

    let edges = (0..size.edges)
        .map(|e| {
            let load: f64 = segments
                .iter()
                .zip(&travelers)
                .filter(|((s, t), _)| (*s..*t).contains(&e))
                .map(|(_, tr)| tr.alpha * min_times[e])
                .sum();
            let capacity = if load > 0.0 {
                draw(&mut rng, size.capacity_factor) * load
            } else {
                rng.random_range(1.0..10.0)
            };
            Edge::new(EdgeId(e as u32), VertexId(e as u32), VertexId(e as u32 + 1), capacity, min_times[e])
        })
        .collect::<Result<Vec<_>>>()?;
    let network = build_network((0..=size.edges as u32).map(VertexId), edges)?;

    let alpha_bounds = AlphaBounds {
        lo: 1.0,
        hi: AlphaBounds::default().hi.max(size.alpha_range.1),
    };
    let mut scenario = Scenario::new(
        network,
        travelers,
        MechanismParams::default(),
        SolverConfig {
            seed,
            ..SolverConfig::default()
        },
        Metadata {
            name: format!("random-{seed}"),
            seed: Some(seed),
            orientation: size.orientation,
        },
        alpha_bounds,
    )?;
    // Steep valuations on wide boxes can outgrow the default penalties.
    let floor = 1e4 * max_abs_valuation(&scenario);
    let mechanism = &mut scenario.mechanism;
    mechanism.gamma = mechanism.gamma.max(floor);
    mechanism.delta = mechanism.delta.max(floor);
    Ok(scenario)
}

/// One edge (`c = 10`, `θ̲ = 1`), two travelers with `v_i = a_i ln(1+θ)`,
/// `a = (2, 3)`, `α = (1, 1)`. Closed form: `θ* = (3.8, 6.2)`, `ν* = 5/12`.
pub fn worked_resource_example() -> Scenario {
    two_on_one_edge(
        "worked-resource-mode",
        Orientation::ResourceMode,
        10.0,
        [ValuationSpec::log_resource(2.0).unwrap(), ValuationSpec::log_resource(3.0).unwrap()],
    )
}

/// One edge (`c = 10`, `θ̲ = 1`), two travelers with `v_i = −θ²`, `α = (1, 1)`.
/// The optimum is the lower-bound corner `θ* = (1, 1)` with `ν* = 0`.
pub fn paper_literal_shared_edge() -> Scenario {
    let v = ValuationSpec::neg_quadratic(1.0, 0.0).unwrap();
    two_on_one_edge("paper-literal-shared-edge", Orientation::PaperLiteral, 10.0, [v, v])
}

/// The two-traveler single edge with capacity 1.5 < 2 = Σ α θ̲.
pub fn infeasible_example() -> Scenario {
    let v = ValuationSpec::neg_quadratic(1.0, 0.0).unwrap();
    two_on_one_edge("infeasible", Orientation::PaperLiteral, 1.5, [v, v])
}

fn two_on_one_edge(name: &str, orientation: Orientation, capacity: f64, valuations: [ValuationSpec; 2]) -> Scenario {
    let network = build_network(
        [VertexId(1), VertexId(2)],
        vec![Edge {
            id: EdgeId(1),
            tail: VertexId(1),
            head: VertexId(2),
            capacity,
            min_travel_time: 1.0,
        }],
    )
    .expect("static network");
    let travelers = valuations
        .into_iter()
        .enumerate()
        .map(|(k, valuation)| Traveler {
            id: TravelerId(k as u32 + 1),
            origin: VertexId(1),
            destination: VertexId(2),
            route: Route(vec![EdgeId(1)]),
            alpha: 1.0,
            valuation,
        })
        .collect();
    Scenario::new(
        network,
        travelers,
        MechanismParams::default(),
        SolverConfig::default(),
        Metadata {
            name: name.into(),
            seed: None,
            orientation,
        },
        AlphaBounds::default(),
    )
    .expect("static scenario")
}

/// A single traveler alone on one edge.
pub fn single_traveler(orientation: Orientation) -> Scenario {
    let valuation = match orientation {
        Orientation::PaperLiteral => ValuationSpec::neg_quadratic(1.0, 0.0).unwrap(),
        Orientation::ResourceMode => ValuationSpec::log_resource(2.0).unwrap(),
    };
    let network = build_network(
        [VertexId(1), VertexId(2)],
        vec![Edge {
            id: EdgeId(1),
            tail: VertexId(1),
            head: VertexId(2),
            capacity: 10.0,
            min_travel_time: 1.0,
        }],
    )
    .expect("static network");
    Scenario::new(
        network,
        vec![Traveler {
            id: TravelerId(1),
            origin: VertexId(1),
            destination: VertexId(2),
            route: Route(vec![EdgeId(1)]),
            alpha: 1.0,
            valuation,
        }],
        MechanismParams::default(),
        SolverConfig::default(),
        Metadata {
            name: "single-traveler".into(),
            seed: None,
            orientation,
        },
        AlphaBounds::default(),
    )
    .expect("static scenario")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::validate_scenario;
    use crate::mechanism::NuSource;

    #[test]
    fn worked_example_roundtrip() {
        let s = worked_resource_example();
        assert_eq!(s.travelers.len(), 2);
        assert_eq!(s.network.num_edges(), 1);
        let back = Scenario::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn negative_capacity_names_the_edge() {
        let mut json: serde_json::Value = serde_json::from_str(&worked_resource_example().to_json().unwrap()).unwrap();
        json["network"]["edges"][0]["capacity"] = serde_json::json!(-1.0);
        let err = Scenario::from_json(&json.to_string()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("edge 1") && msg.contains("capacity"), "{msg}");
    }

    #[test]
    fn missing_mechanism_block_gets_defaults() {
        let mut json: serde_json::Value = serde_json::from_str(&worked_resource_example().to_json().unwrap()).unwrap();
        json.as_object_mut().unwrap().remove("mechanism");
        let s = Scenario::from_json(&json.to_string()).unwrap();
        assert_eq!(s.mechanism.gamma, 1e6);
        assert_eq!(s.mechanism.delta, 1e6);
        assert_eq!(s.mechanism.nu_source, NuSource::ExternalCertificate);
    }

    #[test]
    fn traveler_order_is_normalised() {
        let s = worked_resource_example();
        let mut reversed = s.travelers.clone();
        reversed.reverse();
        let r = Scenario::new(
            s.network.clone(),
            reversed,
            s.mechanism,
            s.solver.clone(),
            s.metadata.clone(),
            s.alpha_bounds,
        )
        .unwrap();
        assert_eq!(r, s);
    }

    #[test]
    fn alpha_and_orientation_guards() {
        let s = worked_resource_example();
        let mut t = s.travelers.clone();
        t[0].alpha = 0.5;
        assert!(Scenario::new(s.network.clone(), t, s.mechanism, s.solver.clone(), s.metadata.clone(), s.alpha_bounds).is_err());
        let mut meta = s.metadata.clone();
        meta.orientation = Orientation::PaperLiteral;
        assert!(Scenario::new(s.network.clone(), s.travelers.clone(), s.mechanism, s.solver.clone(), meta, s.alpha_bounds).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let size = SizeSpec::default();
        let a = generate_random_scenario(42, &size).unwrap().to_json().unwrap();
        let b = generate_random_scenario(42, &size).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        let c = generate_random_scenario(43, &size).unwrap().to_json().unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generated_routes_valid_and_feasible() {
        for seed in 0..50 {
            for orientation in [Orientation::ResourceMode, Orientation::PaperLiteral] {
                let size = SizeSpec {
                    edges: 3,
                    travelers: 4,
                    orientation,
                    ..SizeSpec::default()
                };
                let s = generate_random_scenario(seed, &size).unwrap();
                for t in &s.travelers {
                    t.route.validate(&s.network, t.origin, t.destination).unwrap();
                }
                let report = validate_scenario(&s);
                assert!(report.passes(), "seed {seed}: {report:?}");
            }
        }
    }

    #[test]
    fn all_shared_generation() {
        for seed in 0..30 {
            let size = SizeSpec {
                edges: 2,
                travelers: 3,
                all_shared: true,
                ..SizeSpec::default()
            };
            let s = generate_random_scenario(seed, &size).unwrap();
            for e in 0..s.network.num_edges() {
                let n = s.index().crowd(e);
                assert!(n == 0 || n >= 2, "seed {seed} edge {e} has {n}");
            }
        }
    }

    #[test]
    fn empty_and_unsatisfiable_sizes() {
        let empty = generate_random_scenario(
            1,
            &SizeSpec {
                travelers: 0,
                ..SizeSpec::default()
            },
        )
        .unwrap();
        assert!(empty.travelers.is_empty());
        assert!(validate_scenario(&empty).passes());

        let none = SizeSpec {
            edges: 0,
            travelers: 2,
            ..SizeSpec::default()
        };
        assert!(matches!(generate_random_scenario(1, &none), Err(Error::Generation(_))));
        let lonely = SizeSpec {
            travelers: 1,
            all_shared: true,
            ..SizeSpec::default()
        };
        assert!(matches!(generate_random_scenario(1, &lonely), Err(Error::Generation(_))));
    }

    #[test]
    fn validation_examples() {
        assert!(validate_scenario(&paper_literal_shared_edge()).feasible());
        let bad = validate_scenario(&infeasible_example());
        assert!(!bad.feasible());
        assert_eq!(bad.first_infeasible().unwrap().lower_bound_load, 2.0);
        assert!(validate_scenario(&worked_resource_example()).passes());
    }
}
