//! Travel-time allocation for networks of connected and automated vehicles.
//!
//! A centralized welfare-maximizing solver with a KKT certificate, an indirect
//! mechanism that implements it through reported demands and bids, and tools
//! for checking the equilibria of the game the mechanism induces.

pub mod error;
pub mod game;
pub mod harness;
pub mod mechanism;
pub mod network;
pub mod scenario;
pub mod solver;
pub mod valuation;

pub use error::{Error, Result};
pub use mechanism::{MechanismParams, Message, MessageProfile, NuSource, Outcome, Penalty};
pub use network::{EdgeId, Network, Route, Traveler, TravelerId, VertexId};
pub use scenario::{Scenario, SizeSpec};
pub use solver::{Allocation, KktCertificate, SolverConfig, SolverResult};
pub use valuation::{Orientation, ValuationSpec};
