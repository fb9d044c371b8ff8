//! A finite-MDP laboratory for Q-learning with clock-based learning rates.
//!
//! The crate solves discounted MDPs exactly ([`mdp`]), certifies the
//! communicating property and its `(n, δ)` certificate ([`chain`]), draws
//! actions from persistent or decaying exploration strategies
//! ([`exploration`]), evaluates learning-rate schedules over the global,
//! state and pair clocks with analytic Robbins-Monro verdicts
//! ([`schedules`]), simulates Q-learning trajectories ([`qlearn`]) and runs
//! seeded Monte Carlo checks of the resulting guarantees ([`verify`]).

pub mod chain;
pub mod exploration;
pub mod mdp;
pub mod qlearn;
pub mod reference;
pub mod schedules;
pub mod verify;

pub use chain::{
    brute_force_communicating, communication_certificate, induced_chain, is_communicating, is_irreducible,
    lemma1_exact_check, uniform_strategy, visit_rate_lower_bound, ChainError, CommunicationCertificate,
    Lemma1Report, StationaryStrategy, TransitionMatrix,
};
pub use exploration::{
    action_distribution, persistent_lower_bound, sample_action, ActionDistribution, ExplorationError, PolicySpec,
    PowerFloor,
};
pub use mdp::{q_backup, solve_q, validate_mdp, value_from_q, Mdp, MdpError, MdpFile, QTable, VTable, ValidationReport};
pub use qlearn::{q_update, run, ClockState, QLearnConfig, QLearnError, RunResult, Simulation};
pub use schedules::{
    decaying_compatibility, diagonal_rm_verdict, rate, theorem2_admissible, RmVerdict, ScheduleError, ScheduleSpec,
};
pub use verify::{Check, ExperimentSpec, Tolerances, VerificationReport, VerifyError};
