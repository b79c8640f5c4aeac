//! Batch analysis of DNS spoofing in anycast measurement data.
//!
//! The library ingests longitudinal DNS / ping / traceroute measurements
//! toward the anycast root letters, classifies each vantage-point hour as
//! valid, overtly spoofed, covertly delayed, or timed out, infers the
//! spoofing mechanism (rogue anycast vs. proxy/injection), clusters spoofing
//! parties, validates detections against authoritative server-side logs, and
//! produces aggregate trend / geography / latency reports.
//!
//! A labeled-scenario simulator ([`simulate`]) generates both client-side
//! observation streams and the matching server-side logs under configurable
//! adversary models, and serves as the ground-truth oracle for the test
//! suites.

pub mod aggregate;
pub mod detect_covert;
pub mod detect_overt;
pub mod identity;
pub mod ingest;
pub mod mechanism;
pub mod model;
pub mod pipeline;
pub mod simulate;
pub mod stats;
pub mod validate;

pub use model::{
    Classification, DnsObservation, HourlyWindow, Letter, Mechanism, Observation, PingObservation,
    Prefix24, Schedule, TracerouteObservation, VantagePoint, Verdict, VpId,
};
