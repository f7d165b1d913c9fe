//! Schedule arrays and the compliance checker.

mod array;
mod check;

pub use array::{
    ArrayEntry, ArrayError, ArrayFile, GroupFragment, Layer, ScheduleArray, SubstituteLayer, ARRAY_SCHEMA_VERSION,
};
pub use check::{
    check_compliance, find_smax, subsets_to_visit, CheckError, CheckMode, CheckOptions, ComplianceReport, Invariant,
    SmaxInfo, Verdict, Witness, REPORT_SCHEMA_VERSION,
};
