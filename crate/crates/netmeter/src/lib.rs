//! netmeter: measurement, recording, simulation, and analysis of
//! point-to-point wireless link performance (RSSI, throughput, round-trip
//! delay, retransmit errors) between a mobile node and a fixed station.
//!
//! - [`model`]: the shared sample/trace data model and its wire format
//! - [`channel`]: the radio and link performance equations
//! - [`collect`]: OS-statistics collectors (wireless, device, protocol)
//! - [`probe`]: round-trip delay probe client and echo server
//! - [`record`]: trace persistence, summary statistics, case comparison
//! - [`sim`]: trajectory-driven synthetic trace generation with case presets

pub mod channel;
pub mod collect;
pub mod model;
pub mod probe;
pub mod record;
pub mod sim;
