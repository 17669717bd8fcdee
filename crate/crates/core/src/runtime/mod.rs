//! Dataflow execution: blocking token FIFOs, the threaded engine, and the
//! statistics a run leaves behind.

pub mod engine;
pub mod fifo;
pub mod stats;

pub use engine::{run_local, run_manifest, run_with_registry, RunOptions, RuntimeError};
pub use fifo::{EdgeCounters, Fifo, FifoError, Popped, Pushed};
pub use stats::{ActorStats, EdgeStats, FrameStat, MergedStats, RunStats};
