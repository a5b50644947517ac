//! Broker and informed-trader filtering game.
//!
//! Coefficient solvers and filters for both agents, plus a market simulator
//! with a Monte Carlo harness on top.

pub mod analytics;
pub mod broker;
pub mod error;
pub mod filters;
pub mod numerics;
pub mod params;
pub mod sim;
pub mod trader;

pub use broker::BrokerCoefficients;
pub use error::{Error, Result};
pub use numerics::{Direction, ScalarTable, Table, TimeGrid};
pub use params::{LearningParam, ModelParams, RiskAversion};
pub use sim::{BrokerMode, Model, PathResult, SignalSource, StrategyConfig};
pub use trader::{AdmissibilityPolicy, TraderCoefficients};
