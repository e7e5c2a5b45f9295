//! Optimal prefix-alignments computed incrementally over event streams.
//!
//! A process model is a workflow net ([`petri::WorkflowNet`]). For every case
//! in a stream the engine keeps a synchronous product of the model and the
//! case's trace so far ([`spn::SyncProductNet`]) and extends it by one event
//! at a time. After each event it reports a cheapest prefix-alignment,
//! computed by continuing the previous A* search ([`search::astar_inc`]) or,
//! for the windowed baseline, by partially reverting and re-searching
//! ([`occ`]).

pub mod alignment;
pub mod assets;
pub mod experiments;
pub mod heuristic;
pub mod lp;
pub mod occ;
pub mod par;
pub mod petri;
pub mod search;
pub mod spn;
pub mod stream;
