//! Deterministic simulation, fault injection, message accounting and the
//! history checker.

pub mod checker;
pub mod counts;
pub mod faults;
pub mod fuzz;
pub mod history;
pub mod sim;

pub use checker::{check_history, Violation, ViolationKind};
pub use counts::MessageCounts;
pub use faults::{parse_schedule, random_schedule, Fault, Link};
pub use history::{Event, History};
pub use sim::{run_simulation, SimConfig, SimResult, Simulation};
