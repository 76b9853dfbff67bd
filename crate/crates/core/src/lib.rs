//! Row-hammer mitigation simulator: counter-based adaptive trees (static and
//! dynamically reconfigured), a static counter array baseline and probabilistic
//! adjacent-row refresh, driven by synthetic or recorded activation traces.

pub mod model;
pub mod oracle;
pub mod prng;
pub mod reliability;
pub mod schemes;
pub mod sim;
pub mod thresholds;
pub mod tree;
pub mod workloads;

pub use model::{
    load_trace, AccessEvent, BankConfig, BankId, ConfigError, RefreshCause, RefreshEvent, Row, Trace,
    TraceError, TraceFormat, TraceMeta,
};
pub use thresholds::{resolve_thresholds, Provenance, SplitThresholds, ThresholdError, ThresholdTable};
pub use tree::{CatState, Child, CounterSlot, IntermediateNode, LeafRange, TreeError};
