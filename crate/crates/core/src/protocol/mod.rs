//! Client-server replication over an unreliable datagram transport.
//!
//! The server folds inbound messages into the [`Engine`](crate::Engine),
//! broadcasts the resulting events as numbered `Event` messages and sends a
//! self-contained snapshot on a fixed cadence. Replicas apply events in tick
//! order and let snapshots cover any loss.

pub mod client;
pub mod codec;
pub mod server;
pub mod transport;
pub mod view;

pub use client::{ClientSession, Replica};
pub use codec::{decode, encode, Body, ClientRole, HelloStatus, MalformedMessage, WireMessage, MAX_DATAGRAM};
pub use server::{Server, ServerConfig, DEFAULT_PORT};
pub use transport::{DatagramEndpoint, FaultConfig, SimAddr, SimEndpoint, SimNetwork, UdpEndpoint};
pub use view::WorldView;
