use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::distribute::{DistributeError, InputMark, Strategy};
use super::mark::{mark_value, sats, sum_sats, Sats, TaintMark};
use crate::chain::{tx_fee, ChainError, ChainView, OutPoint, Transaction, Txid};

pub const SECONDS_PER_DAY: i64 = 86_400;

pub type ServiceSet = Arc<BTreeSet<String>>;

/// Half-open time window `[start, start + days)` split into day buckets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: i64,
    pub days: u32,
}

impl Window {
    pub fn new(start: i64, days: u32) -> Self {
        Window { start, days }
    }

    pub fn end(&self) -> i64 {
        self.start + self.days as i64 * SECONDS_PER_DAY
    }

    pub fn contains(&self, ts: i64) -> bool {
        ts >= self.start && ts < self.end()
    }

    /// Zero-based day bucket of `ts`, if inside the window.
    pub fn day_of(&self, ts: i64) -> Option<usize> {
        self.contains(ts)
            .then(|| ((ts - self.start) / SECONDS_PER_DAY) as usize)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaintError {
    #[error("seed transaction {0} not found")]
    SeedNotFound(Txid),
    #[error("seed output {0} does not exist")]
    SeedOutputOutOfRange(OutPoint),
    #[error("service halting requested without a service address set")]
    MissingServiceSet,
    #[error("window must span at least one day")]
    InvalidWindow,
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("transaction {txid}: {source}")]
    Distribute { txid: Txid, source: DistributeError },
}

/// Transaction whose outputs start fully tainted.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaintSeed {
    pub txid: Txid,
    /// Output indices to seed; `None` seeds every output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vouts: Option<Vec<u32>>,
}

impl TaintSeed {
    pub fn new(txid: Txid) -> Self {
        TaintSeed { txid, vouts: None }
    }

    pub fn with_vouts(txid: Txid, vouts: Vec<u32>) -> Self {
        TaintSeed {
            txid,
            vouts: Some(vouts),
        }
    }

    /// Seeded outpoints, checked against the chain.
    pub fn outpoints(&self, chain: &ChainView) -> Result<Vec<OutPoint>, TaintError> {
        let tx = chain.get(&self.txid).ok_or(TaintError::SeedNotFound(self.txid))?;
        match &self.vouts {
            None => Ok((0..tx.outputs.len() as u32).map(|v| tx.outpoint(v)).collect()),
            Some(vouts) => {
                let mut ops = Vec::with_capacity(vouts.len());
                for &v in vouts {
                    let op = tx.outpoint(v);
                    if v as usize >= tx.outputs.len() {
                        return Err(TaintError::SeedOutputOutOfRange(op));
                    }
                    ops.push(op);
                }
                ops.sort();
                ops.dedup();
                Ok(ops)
            }
        }
    }

    /// Total value of the seeded outputs.
    pub fn value(&self, chain: &ChainView) -> Result<u64, TaintError> {
        Ok(self
            .outpoints(chain)?
            .iter()
            .filter_map(|op| chain.output(op))
            .map(|o| o.value)
            .sum())
    }

    /// The earliest transaction spending any seeded output.
    pub fn first_distribution<'a>(&self, chain: &'a ChainView) -> Result<Option<&'a Transaction>, TaintError> {
        Ok(self
            .outpoints(chain)?
            .iter()
            .filter_map(|op| chain.spender(op))
            .min_by_key(|tx| tx.position()))
    }

    /// Start of the tainting window: the first distribution's timestamp, or
    /// the seed's own timestamp when nothing spends it.
    pub fn start_time(&self, chain: &ChainView) -> Result<i64, TaintError> {
        let seed_tx = chain.get(&self.txid).ok_or(TaintError::SeedNotFound(self.txid))?;
        Ok(self
            .first_distribution(chain)?
            .map_or(seed_tx.timestamp, |tx| tx.timestamp))
    }
}

#[derive(Clone, Debug)]
pub struct PropagationPolicy {
    pub window_days: u32,
    /// Stop propagating taint that reaches a service address.
    pub service_halt: bool,
    pub service_set: Option<ServiceSet>,
}

impl Default for PropagationPolicy {
    fn default() -> Self {
        PropagationPolicy {
            window_days: 15,
            service_halt: false,
            service_set: None,
        }
    }
}

impl PropagationPolicy {
    pub fn unhalted(window_days: u32) -> Self {
        PropagationPolicy {
            window_days,
            ..Default::default()
        }
    }

    pub fn halting(window_days: u32, service_set: ServiceSet) -> Self {
        PropagationPolicy {
            window_days,
            service_halt: true,
            service_set: Some(service_set),
        }
    }

    fn halts_at(&self, address: &str) -> bool {
        self.service_halt && self.service_set.as_ref().is_some_and(|s| s.contains(address))
    }
}

/// Result of one propagation run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaintLedger {
    pub strategy: Strategy,
    pub seed: TaintSeed,
    pub window_days: u32,
    pub service_halt: bool,
    /// Start of the window (first distribution time).
    pub t0: i64,
    pub marks: BTreeMap<OutPoint, TaintMark>,
    /// Transactions that spent taint inside the window. Excludes the seed.
    pub tainted_txids: BTreeSet<Txid>,
    pub tainted_addresses: BTreeSet<String>,
    /// Marks on service addresses whose spenders are never processed.
    pub halted: BTreeSet<OutPoint>,
    /// Marks spent onward by a tainted transaction.
    pub consumed: BTreeSet<OutPoint>,
    pub seed_taint: Sats,
    pub fee_burned: Sats,
    pub service_stopped: Sats,
}

impl TaintLedger {
    pub fn window(&self) -> Window {
        Window::new(self.t0, self.window_days)
    }

    pub fn window_end(&self) -> i64 {
        self.window().end()
    }

    pub fn mark_value(&self, chain: &ChainView, op: &OutPoint) -> Sats {
        let value = chain.output(op).map_or(0, |o| o.value);
        mark_value(self.marks.get(op), value)
    }

    /// Taint still sitting on marks that were not spent onward, halted
    /// marks included.
    pub fn resting_taint(&self, chain: &ChainView) -> Sats {
        sum_sats(
            self.marks
                .keys()
                .filter(|op| !self.consumed.contains(op))
                .map(|op| self.mark_value(chain, op)),
        )
    }

    /// Seed taint equals resting taint plus burned fees (conserving
    /// strategies only).
    pub fn is_conserved(&self, chain: &ChainView) -> bool {
        self.seed_taint == self.resting_taint(chain) + &self.fee_burned
    }
}

/// Propagates taint from `seed` through `chain` under `strategy`.
pub fn propagate(
    chain: &ChainView,
    seed: &TaintSeed,
    strategy: Strategy,
    policy: &PropagationPolicy,
) -> Result<TaintLedger, TaintError> {
    if policy.window_days == 0 {
        return Err(TaintError::InvalidWindow);
    }
    if policy.service_halt && policy.service_set.is_none() {
        return Err(TaintError::MissingServiceSet);
    }
    let txs = chain.temporal_order()?.as_slice();
    let seed_pos = chain
        .position_of(&seed.txid)
        .ok_or(TaintError::SeedNotFound(seed.txid))?;
    let seed_tx = &txs[seed_pos];
    let t0 = seed.start_time(chain)?;
    let window_end = t0 + policy.window_days as i64 * SECONDS_PER_DAY;

    let mut live: HashMap<OutPoint, TaintMark> = HashMap::new();
    let mut settled: BTreeMap<OutPoint, TaintMark> = BTreeMap::new();
    let mut tainted_addresses = BTreeSet::new();
    let mut seed_taint = Sats::ZERO;
    for op in seed.outpoints(chain)? {
        let out = &seed_tx.outputs[op.vout as usize];
        if out.value == 0 {
            continue;
        }
        seed_taint += sats(out.value);
        tainted_addresses.insert(out.address.clone());
        live.insert(op, TaintMark::Full);
    }

    let mut tainted_txids = BTreeSet::new();
    let mut halted = BTreeSet::new();
    let mut consumed = BTreeSet::new();
    let mut fee_burned = Sats::ZERO;
    let mut service_stopped = Sats::ZERO;

    let mut taken: Vec<Option<TaintMark>> = Vec::new();
    let mut input_values: Vec<u64> = Vec::new();
    for tx in &txs[seed_pos + 1..] {
        if live.is_empty() {
            break;
        }
        if tx.timestamp >= window_end || !tx.inputs.iter().any(|op| live.contains_key(op)) {
            continue;
        }

        taken.clear();
        taken.extend(tx.inputs.iter().map(|op| live.remove(op)));
        input_values.clear();
        input_values.extend(chain.input_values(tx)?);
        let inputs: Vec<InputMark<'_>> = input_values.iter().zip(&taken).map(|(&v, m)| (v, m.as_ref())).collect();
        let output_values: Vec<u64> = tx.outputs.iter().map(|o| o.value).collect();
        let fee = tx_fee(chain, tx)?;
        let dist = strategy
            .distribute(&inputs, &output_values, fee)
            .map_err(|source| TaintError::Distribute { txid: tx.txid, source })?;

        tainted_txids.insert(tx.txid);
        fee_burned += dist.fee_taint;
        for (op, mark) in tx.inputs.iter().zip(taken.drain(..)) {
            if let Some(mark) = mark {
                consumed.insert(*op);
                settled.insert(*op, mark);
            }
        }
        for (vout, (mark, out)) in dist.outputs.into_iter().zip(&tx.outputs).enumerate() {
            let Some(mark) = mark else { continue };
            let op = tx.outpoint(vout as u32);
            tainted_addresses.insert(out.address.clone());
            if policy.halts_at(&out.address) {
                service_stopped += mark.taint_value(out.value);
                halted.insert(op);
                settled.insert(op, mark);
            } else {
                live.insert(op, mark);
            }
        }
    }
    settled.extend(live);

    Ok(TaintLedger {
        strategy,
        seed: seed.clone(),
        window_days: policy.window_days,
        service_halt: policy.service_halt,
        t0,
        marks: settled,
        tainted_txids,
        tainted_addresses,
        halted,
        consumed,
        seed_taint,
        fee_burned,
        service_stopped,
    })
}
