//! Topic-based pub-sub broker over the smartfridge wire format, plus the
//! async client that devices and the backend use to talk to it.

pub mod client;
pub mod core;
pub mod queue;
pub mod server;

pub use client::{Client, ClientError, Message, Publisher};
pub use core::{Action, Broker, BrokerConfig, Connection, DEFAULT_KEEPALIVE, DEFAULT_QUEUE_CAPACITY};
pub use queue::OutboundQueue;
pub use server::{serve, spawn, BrokerHandle};
