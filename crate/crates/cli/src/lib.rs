//! Benchmark driver, workload generation and the analytic bottleneck model
//! behind the `bpaxos` command-line tool.

pub mod bench;
pub mod model;
pub mod settings;
pub mod workload;

pub use bench::{run_bench, write_csv, BenchConfig, BenchError, BenchReport, Transport, CSV_HEADER};
pub use model::{bottleneck_model, Bottleneck};
pub use workload::generate_workload;
