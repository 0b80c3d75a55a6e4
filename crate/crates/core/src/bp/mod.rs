//! Belief-propagation inference for the SBM and degree-corrected SBM, with
//! EM parameter learning and multi-restart selection by Bethe free energy.

mod engine;
mod learn;

pub use engine::{bp_converge, expected_block_edges, free_energy, BpConfig, BpInit, BpState, ModelParams, NonEdgeMode};
pub use learn::{
    default_em_config, em_from, em_learn, hard_m_step, initial_affinity, initial_params, m_step, restart_select,
    select_min, EmConfig, HardEstimates, InitScheme, LearnedModel, ModelKind, RestartOutcome, RestartRecord,
};
