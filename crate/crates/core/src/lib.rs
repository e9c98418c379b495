//! Game-theoretic multi-agent trajectory prediction and planning with player
//! selection.
//!
//! The crate provides:
//!
//! - an open-loop Nash equilibrium solver for N-player trajectory games over
//!   double-integrator dynamics, differentiable with respect to selection-mask
//!   entries and goal positions ([`solver`]);
//! - masked games: an ego agent plans against a selected subset of the other
//!   agents, chosen either by explicit heuristics (distance, kNN, gradient,
//!   Hessian, cost evolution, barrier functions) or by a trained Player
//!   Selection Network ([`selection`], [`nn`]);
//! - a Goal Inference Network for games where other agents' goals are not
//!   known ([`nn`]);
//! - receding-horizon prediction and planning loops ([`rollout`]);
//! - the evaluation metric suite and a Monte Carlo benchmark harness with
//!   bootstrap statistics ([`metrics`], [`harness`]).

pub mod error;
pub mod game;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod plot;
pub mod rollout;
pub mod selection;
pub mod solver;

pub use error::{GameError, HarnessError, IngestError, SolverError, TrainError};
pub use game::{
    agent_total_cost, build_masked_game, ego_first_order, reference_position, stage_cost,
    step_dynamics, AgentState, Control, CostWeights, DynamicsSpec, GameSpec, JointTrajectory,
    MaskedGame, ObservationKind, ObservationWindow, SelectionMask, StageCost, Vec2,
};
