//! Port-agnostic protocol detection for packet captures.

pub mod attrs;
pub mod compliance;
pub mod engine;
pub mod fingerprint;
pub mod flow;
pub mod hexfmt;
pub mod model;
pub mod packet_io;
pub mod pipeline;
pub mod report;
pub mod synth;
