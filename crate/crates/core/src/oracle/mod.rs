//! Brute-force cross-checks for tiny systems: exhaustive exploration of a
//! lock's interleavings, an RMR recount from raw events, and a naive
//! compliance checker to diff the real one against.

mod definition;
mod explore;
mod recount;

pub use definition::{compliance_by_definition, DefinitionVerdict, Outcome, MAX_DEFINITION_ENTRIES};
pub use explore::{
    explore, explore_states, ExplorationBounds, OracleError, PropertyVerdict, SafetyReport, Stall,
    SAFETY_SCHEMA_VERSION,
};
pub use recount::recount_rmr;
