//! Address classes (service / tainted / clean) and the reused and fresh
//! flags.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::chain::{ChainView, Role};
use crate::par::Exec;
use crate::taint::{ServiceSet, TaintLedger, Window};

pub const DEFAULT_PERCENTILE: f64 = 0.99;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfilingError {
    #[error("no transactions inside the window")]
    EmptyWindow,
    #[error("percentile {0} outside (0, 1]")]
    InvalidPercentile(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AddressClass {
    Service,
    Tainted,
    Clean,
}

impl AddressClass {
    pub fn as_str(self) -> &'static str {
        match self {
            AddressClass::Service => "service",
            AddressClass::Tainted => "tainted",
            AddressClass::Clean => "clean",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AddressProfile {
    pub address: String,
    pub tx_count_in_window: usize,
    pub first_activity: i64,
    /// Transactions spending from the address up to the window end.
    pub sent_tx_count: usize,
    pub class: AddressClass,
    pub reused: bool,
    pub fresh: bool,
}

#[derive(Clone, Debug)]
pub struct ServiceClassification {
    /// Percentile transaction count; service addresses exceed it strictly.
    pub threshold: usize,
    pub service_set: ServiceSet,
    /// Per-address transaction counts inside the window.
    pub counts: BTreeMap<String, usize>,
}

/// Number of distinct transactions per address with a timestamp inside
/// `window`, counting input and output sides together.
pub fn window_tx_counts(chain: &ChainView, window: Window) -> HashMap<&str, usize> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut seen: HashSet<&str> = HashSet::new();
    for tx in chain.transactions().iter().filter(|t| window.contains(t.timestamp)) {
        seen.clear();
        seen.extend(chain.input_addresses(tx));
        seen.extend(tx.outputs.iter().map(|o| o.address.as_str()));
        for a in &seen {
            *counts.entry(a).or_default() += 1;
        }
    }
    counts
}

/// Nearest-rank percentile of `sorted` (ascending, non-empty).
pub fn nearest_rank(sorted: &[usize], percentile: f64) -> usize {
    let n = sorted.len();
    // Guard against 0.99 * 100 = 99.000…01 rounding up a whole rank.
    let rank = ((percentile * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[rank - 1]
}

/// Flags addresses whose in-window transaction count is strictly above the
/// nearest-rank `percentile` of all counts.
pub fn classify_service_addresses(
    chain: &ChainView,
    window: Window,
    percentile: f64,
) -> Result<ServiceClassification, ProfilingError> {
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(ProfilingError::InvalidPercentile(percentile));
    }
    let counts = window_tx_counts(chain, window);
    if counts.is_empty() {
        return Err(ProfilingError::EmptyWindow);
    }
    let mut sorted: Vec<usize> = counts.values().copied().collect();
    sorted.sort_unstable();
    let threshold = nearest_rank(&sorted, percentile);
    let service_set: BTreeSet<String> = counts
        .iter()
        .filter(|(_, &c)| c > threshold)
        .map(|(a, _)| a.to_string())
        .collect();
    Ok(ServiceClassification {
        threshold,
        service_set: Arc::new(service_set),
        counts: counts.into_iter().map(|(a, c)| (a.to_string(), c)).collect(),
    })
}

/// Profiles every address active inside the ledger's window plus every
/// tainted address.
pub fn profile_addresses(
    chain: &ChainView,
    ledger: &TaintLedger,
    service_set: &BTreeSet<String>,
) -> BTreeMap<String, AddressProfile> {
    profile_addresses_with(chain, ledger, service_set, Exec::default())
}

pub fn profile_addresses_with(
    chain: &ChainView,
    ledger: &TaintLedger,
    service_set: &BTreeSet<String>,
    exec: Exec,
) -> BTreeMap<String, AddressProfile> {
    let window = ledger.window();
    let counts = window_tx_counts(chain, window);

    let mut first_receipt: HashMap<&str, i64> = HashMap::new();
    for op in ledger.marks.keys() {
        let (Some(tx), Some(out)) = (chain.get(&op.txid), chain.output(op)) else {
            continue;
        };
        first_receipt
            .entry(out.address.as_str())
            .and_modify(|t| *t = (*t).min(tx.timestamp))
            .or_insert(tx.timestamp);
    }

    let mut addresses: Vec<&str> = counts.keys().copied().collect();
    addresses.extend(ledger.tainted_addresses.iter().map(String::as_str));
    addresses.sort_unstable();
    addresses.dedup();

    let window_end = window.end();
    let profiles = exec.map(&addresses, |&address| {
        let sent_tx_count = chain
            .address_history(address)
            .filter(|(tx, role)| *role == Role::Sender && tx.timestamp < window_end)
            .count();
        let first_activity = chain.first_activity(address).unwrap_or(i64::MAX);
        let class = if service_set.contains(address) {
            AddressClass::Service
        } else if ledger.tainted_addresses.contains(address) {
            AddressClass::Tainted
        } else {
            AddressClass::Clean
        };
        let fresh = ledger.tainted_addresses.contains(address)
            && first_receipt.get(address).is_some_and(|&t| first_activity >= t);
        AddressProfile {
            address: address.to_string(),
            tx_count_in_window: counts.get(address).copied().unwrap_or(0),
            first_activity,
            sent_tx_count,
            class,
            reused: sent_tx_count >= 2,
            fresh,
        }
    });
    profiles.into_iter().map(|p| (p.address.clone(), p)).collect()
}
