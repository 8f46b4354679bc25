//! Realtime auction server core.
//!
//! An auction is a deterministic state machine ([`engine`]) fed by timestamped
//! commands. Late bids extend the auction along a decaying schedule up to a
//! hard cap, and closing happens in two phases so that in-flight bids are not
//! lost. Clients replicate a gapless message stream by polling ([`rpc`]),
//! see only what their role permits ([`views`]), and render the server's
//! countdown through a clock-offset estimate ([`timesync`]). Every command is
//! written to an append-only log ([`store`]) from which state is rebuilt after
//! a crash. [`report`] produces post-auction reports and [`sim`] runs whole
//! auctions over simulated links in virtual time.

pub mod clock;
pub mod domain;
pub mod engine;
pub mod report;
pub mod rpc;
pub mod sim;
pub mod store;
pub mod timesync;
pub mod views;
