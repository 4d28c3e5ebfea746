//! Deterministic discrete-event network simulation in virtual milliseconds.

pub mod baseline;
pub mod hosts;
pub mod script;
pub mod sim;

pub use baseline::{baseline_handshake_model, legs, Baseline, TLS_FOUR_RTT_FIGURE};
pub use hosts::{ClientHost, Fetch, ServerHost};
pub use script::{parse_script, pattern, run_script, send_streams, Action, FlowReport, ScriptError, Trace};
pub use sim::{Host, HostId, NetStats, Sim, SimConfig, TraceEvent};
