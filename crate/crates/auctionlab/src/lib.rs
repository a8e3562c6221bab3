//! Laboratory for single-demand energy procurement auctions.
//!
//! A market buys one unit of energy from producers with public supplies and
//! integer marginal costs. This crate implements the cost-minimizing
//! allocation with merit-order tie-breaking, the Pay-as-Bid / Pay-as-Clear /
//! VCG pricing rules, best-response bound analysis and equilibrium search
//! over the integer bid space, and Hedge (multiplicative-weights) bidding
//! dynamics. All market arithmetic is exact rational; floating point is
//! confined to the learning module.

pub mod equilibrium;
pub mod harness;
pub mod learning;
pub mod market;
pub mod mechanism;

pub use equilibrium::{
    b_high, b_low, best_response_set, bounds_summary, construct_pc_pure_ne, enumerate_mixed_ne_2p,
    enumerate_pure_ne, is_mixed_ne, is_pure_ne, refined_pb_upper_bound, truthful_manipulability,
    BoundsReport, MixedProfile, NeReport, SupportEnumOptions,
};
pub use learning::{
    hedge_init, run_simulation, summarize, FeedbackMode, HedgeState, SimConfig, Snapshot,
    Trajectory,
};
pub use market::{
    allocate, clearing_price, merit_order, pivotal_agent, precedes, rat, validate_instance, Bid,
    Error, MarketInstance, Producer, Rational, ValidationReport,
};
pub use mechanism::{counterfactual_utilities, run_mechanism, utility, vcg_prices, Mechanism, Outcome};
