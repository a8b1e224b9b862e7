//! Stolen-coin taint analysis over UTXO transaction graphs.
//!
//! The pipeline is: load a chain ([`ingest`]), classify service addresses
//! ([`profiling`]), propagate taint from a seed transaction under one of five
//! rules ([`taint`]), compute behaviour metrics and compare against control
//! transactions ([`metrics`], [`control`]), and write a report bundle
//! ([`report`]). [`synthgen`] builds synthetic chains with exact ground truth.

pub mod chain;
pub mod control;
pub mod ingest;
pub mod metrics;
pub mod par;
pub mod profiling;
pub mod report;
pub mod synthgen;
pub mod taint;

pub use chain::{
    tx_fee, ChainError, ChainView, OutPoint, Role, Transaction, TxOutput, Txid, ValidationReport, SATS_PER_BTC,
};
pub use par::Exec;
pub use taint::{propagate, PropagationPolicy, Strategy, TaintLedger, TaintMark, TaintSeed};
