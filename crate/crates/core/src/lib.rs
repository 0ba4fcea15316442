//! Cooperative proof-of-stake protocol library and deterministic network simulator.
//!
//! The crate is layered bottom-up: [`crypto`] and [`codec`] supply hashing,
//! signatures and canonical encodings; [`tamper_log`] builds hash-chained,
//! entangled per-node logs; [`ledger`] holds the UTXO chain; [`overlay`]
//! manages the super-peer topology; [`consensus`] tallies stake-weighted
//! votes and resolves disputes; [`agents`] implements the nomadic singleton
//! roles; [`simnet`] runs everything inside a deterministic event loop; and
//! [`cli`] exposes run, trace, verify-log and report commands.

pub mod codec;
pub mod crypto;
pub mod tamper_log;
pub mod ledger;
pub mod overlay;
pub mod journal;
pub mod consensus;
pub mod agents;
pub mod simnet;
pub mod cli;
