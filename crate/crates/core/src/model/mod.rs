//! Unit HMM structure, the stick-breaking phone loop and decoding graphs.

mod graph;
mod layout;
mod phone_loop;

pub use graph::{
    build_alignment_graph, build_phone_loop_graph, DecodingGraph, GraphState, Incoming, Transition,
    FORWARD_PROB, SELF_LOOP_PROB,
};
pub use layout::{
    pack_eta, pack_gaussian_params, unpack_eta, EtaBlocks, GaussianParams, ParamLayout, StateBlocks,
    StateGmm, DEFAULT_COMPONENTS, N_HMM_STATES, VAR_CEIL, VAR_FLOOR,
};
pub use phone_loop::{
    stick_breaking_expected_log_weights, update_stick_breaking, PhoneLoop, DEFAULT_CONCENTRATION,
    DEFAULT_TRUNCATION,
};
