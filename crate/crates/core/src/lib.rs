//! Free-space daylight BB84 link simulator and two-party sifting stack.
//!
//! The physical layer runs source → channel → receiver as a seeded
//! Monte-Carlo simulation; `sync` recovers the pulse grid from time tags,
//! `protocol` runs basis reconciliation and QBER estimation over a framed
//! byte stream, and `analysis` gives the closed-form link budget used to
//! cross-check simulated sessions.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod channel;
pub mod cli;
pub mod dump;
pub mod protocol;
pub mod receiver;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod simulate;
pub mod source;
pub mod sync;
