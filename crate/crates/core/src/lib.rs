//! Proximity-based bi-directional trust for mesh-connected devices.
//!
//! The crate is organised bottom-up:
//!
//! * [`trust`] scores peers from proximity, shared interests and history.
//! * [`discovery`] finds peers in radio range or through a zone registry.
//! * [`routing`] builds the mesh and routes offline, online and hybrid sessions.
//! * [`messaging`] gates sending and decoding on trust, revealing partitions
//!   of a message as trust grows.
//! * [`sim`] drives everything from a seeded, single-threaded tick loop.
//! * [`epidemic`] runs SEIR dynamics on the contacts the simulator observes
//!   and traces outbreaks from the event log.

pub mod discovery;
pub mod epidemic;
pub mod log;
pub mod messaging;
pub mod routing;
pub mod sim;
pub mod trust;
pub mod validation;

pub use trust::{DeviceId, ProfileKey, Tick, TrustModelParams, TrustStore, TrustView};
pub use validation::Violation;
