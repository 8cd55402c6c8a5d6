//! A persistent hash table over simulated persistent memory, plus the pieces
//! needed to drive it like a small disaggregated KV store: an in-process
//! transport with one-sided reads, a client that resolves gets from a single
//! read, a multi-threaded server loop, workload generators, and a crash/
//! linearizability harness.

pub mod bench;
pub mod client;
pub mod error;
pub mod harness;
pub mod hash;
pub mod layout;
pub mod pm;
pub mod server;
pub mod sync;
pub mod table;
pub mod transport;

pub use bench::{
    key_of_id, load_factor_experiment, run_workload, BenchConfig, LoadFactorPoint, RunReport,
    Workload,
};
pub use client::{Client, GetStats};
pub use error::{Error, Result};
pub use harness::{
    apply_to_model, check_sealed, crash_sweep, mixed_script, sealed_value, table_as_model, Model,
    Script, ScriptOp, SweepReport,
};
pub use hash::{Fnv1a64, KeyHasher};
pub use layout::{Key, TableGeometry, Value};
pub use pm::{CrashImage, OpTag, PmRegion, PmStats, TagStats, Trip};
pub use server::{execute_op, execute_request, MetaBus, Server};
pub use table::{
    AddedRatio, DeleteOutcome, HashTable, InsertOutcome, MetaSnapshot, Occupancy, TableMeta,
    UpdateOutcome,
};
pub use transport::{Endpoint, Fabric, OpCode, RequestFrame, ResponseFrame, Status};
