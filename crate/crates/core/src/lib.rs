//! Adversarial-bandit neighbor samplers for minibatch GNN training.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`] stores CSR graphs with fixed aggregation weights and loads
//!   or generates datasets.
//! * [`policy`] holds per-vertex EXP3 / EXP3.M state and DepRound.
//! * [`estimators`] has the Monte Carlo aggregators, variance functionals,
//!   rewards and the optimal sampling distribution.
//! * [`gnn`] is a two-layer GCN / single-head attention model with a
//!   hand-written backward pass and Adam.
//! * [`harness`] runs training, regret simulations and variance reports.

pub mod estimators;
pub mod gnn;
pub mod graph;
pub mod harness;
pub mod matrix;
pub mod policy;
