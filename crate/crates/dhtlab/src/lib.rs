//! A network-steganography laboratory.
//!
//! Five carrier methods embed secret bits into fields of simulated packets
//! (stream index, destination address, chunk count, frame padding, flagged
//! retransmissions). On top of them sit five hiding-technique groups:
//! scattering across flows and hosts ([`sgs`]), method hopping inside one
//! flow ([`sgh`]), camouflage of the insertion itself ([`cmc`]),
//! protocol-gated padding channels ([`ips`]), and a timing channel layered
//! on another method's activity ([`mls`]). The [`steganalysis`] module
//! scores traffic with the statistical detectors these techniques are
//! designed to evade, and [`runner`] drives seeded naive-versus-hidden
//! experiments from a JSON scenario.

pub mod carriers;
pub mod cmc;
pub mod config;
pub mod core;
pub mod ips;
pub mod mls;
pub mod report;
pub mod runner;
pub mod sgh;
pub mod sgs;
pub mod simnet;
pub mod steganalysis;

pub use crate::core::{BitString, FlowId, HostId, Steganogram};
pub use carriers::{CarrierConfig, CarrierMethodId};
pub use ips::CarrierProtocolTag;
pub use simnet::{Network, NetworkConfig, OvertPacket};
