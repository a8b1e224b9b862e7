//! Immutable transaction records and the indexed chain view built over them.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Satoshis per bitcoin.
pub const SATS_PER_BTC: u64 = 100_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChainError {
    #[error("input {0} does not resolve to a known output")]
    UnresolvedInput(OutPoint),
    #[error("transaction {txid} spends {inputs} sat but creates {outputs} sat")]
    NegativeFee { txid: Txid, inputs: u64, outputs: u64 },
    #[error("duplicate transaction id {0}")]
    DuplicateTxid(Txid),
    #[error("transaction {spender} spends an output of {spent}, which does not precede it")]
    CycleDetected { spender: Txid, spent: Txid },
    #[error("invalid transaction {txid}: {reason}")]
    Malformed { txid: Txid, reason: String },
    #[error("chain failed validation: {0}")]
    Invalid(ValidationReport),
}

/// 32-byte transaction identifier, lowercase hex in interchange.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Txid(pub [u8; 32]);

impl Txid {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Builds an id whose last eight bytes hold `n`; handy for fixtures.
    pub fn from_u64(n: u64) -> Self {
        let mut bytes = [0u8; 32];
        bytes[24..].copy_from_slice(&n.to_be_bytes());
        Txid(bytes)
    }
}

impl FromStr for Txid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut bytes = [0u8; 32];
        hex::decode_to_slice(s, &mut bytes).map_err(|e| format!("bad txid {s:?}: {e}"))?;
        Ok(Txid(bytes))
    }
}

impl fmt::Display for Txid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Txid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Txid({})", &self.to_hex()[48..])
    }
}

impl Serialize for Txid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Txid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Reference to a previous transaction's output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct OutPoint {
    pub txid: Txid,
    pub vout: u32,
}

impl OutPoint {
    pub fn new(txid: Txid, vout: u32) -> Self {
        OutPoint { txid, vout }
    }
}

impl fmt::Display for OutPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.txid, self.vout)
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct TxOutput {
    pub address: String,
    #[serde(rename = "value_sat")]
    pub value: u64,
}

impl TxOutput {
    pub fn new(address: impl Into<String>, value: u64) -> Self {
        TxOutput {
            address: address.into(),
            value,
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Transaction {
    pub txid: Txid,
    pub timestamp: i64,
    pub block_height: u64,
    pub tx_index: u32,
    pub size_bytes: u32,
    /// Empty iff coinbase.
    pub inputs: Vec<OutPoint>,
    pub outputs: Vec<TxOutput>,
}

impl Transaction {
    pub fn is_coinbase(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn position(&self) -> (u64, u32) {
        (self.block_height, self.tx_index)
    }

    pub fn output_total(&self) -> u64 {
        self.outputs.iter().map(|o| o.value).sum()
    }

    pub fn outpoint(&self, vout: u32) -> OutPoint {
        OutPoint::new(self.txid, vout)
    }

    fn check_shape(&self) -> Result<(), ChainError> {
        let bad = |reason: &str| ChainError::Malformed {
            txid: self.txid,
            reason: reason.to_string(),
        };
        if self.outputs.is_empty() {
            return Err(bad("no outputs"));
        }
        if self.size_bytes == 0 {
            return Err(bad("size_bytes must be positive"));
        }
        if self.outputs.iter().any(|o| o.address.is_empty()) {
            return Err(bad("empty output address"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Sender,
    Receiver,
}

/// Integrity problems found in a loaded chain. Empty means propagation-safe.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub unresolved_inputs: Vec<(Txid, OutPoint)>,
    /// Outpoint and every transaction that spends it, in temporal order.
    pub double_spends: Vec<(OutPoint, Vec<Txid>)>,
    pub negative_fees: Vec<Txid>,
    pub duplicate_positions: Vec<((u64, u32), Vec<Txid>)>,
    /// Spender listed before the transaction it spends.
    pub order_violations: Vec<(Txid, Txid)>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.unresolved_inputs.is_empty()
            && self.double_spends.is_empty()
            && self.negative_fees.is_empty()
            && self.duplicate_positions.is_empty()
            && self.order_violations.is_empty()
    }

    /// Transactions implicated by any entry.
    pub fn offending_txids(&self) -> Vec<Txid> {
        let mut out: Vec<Txid> = self
            .unresolved_inputs
            .iter()
            .map(|(t, _)| *t)
            .chain(self.double_spends.iter().flat_map(|(_, ts)| ts.iter().skip(1).copied()))
            .chain(self.negative_fees.iter().copied())
            .chain(
                self.duplicate_positions
                    .iter()
                    .flat_map(|(_, ts)| ts.iter().skip(1).copied()),
            )
            .chain(self.order_violations.iter().map(|(spender, _)| *spender))
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} unresolved input(s), {} double spend(s), {} negative fee(s), {} duplicate position(s), {} order violation(s)",
            self.unresolved_inputs.len(),
            self.double_spends.len(),
            self.negative_fees.len(),
            self.duplicate_positions.len(),
            self.order_violations.len()
        )
    }
}

/// Read-only indexed view over a set of transactions, ordered by
/// `(block_height, tx_index)`.
#[derive(Clone, Debug, Default)]
pub struct ChainView {
    txs: Vec<Transaction>,
    by_txid: HashMap<Txid, usize>,
    spenders: HashMap<OutPoint, Vec<usize>>,
    address_index: HashMap<String, Vec<(usize, Role)>>,
    first_activity: HashMap<String, i64>,
    /// First spender found ahead of its spendee, if any.
    order_violation: Option<(Txid, Txid)>,
}

impl ChainView {
    /// Builds the indices. Only structural problems (duplicate txids,
    /// empty outputs, zero size) are errors; integrity problems are left for
    /// [`ChainView::validate`].
    pub fn build(mut txs: Vec<Transaction>) -> Result<Self, ChainError> {
        txs.sort_by(|a, b| a.position().cmp(&b.position()).then(a.txid.cmp(&b.txid)));

        let mut by_txid = HashMap::with_capacity(txs.len());
        for (i, tx) in txs.iter().enumerate() {
            tx.check_shape()?;
            if by_txid.insert(tx.txid, i).is_some() {
                return Err(ChainError::DuplicateTxid(tx.txid));
            }
        }

        let mut spenders: HashMap<OutPoint, Vec<usize>> = HashMap::new();
        let mut address_index: HashMap<String, Vec<(usize, Role)>> = HashMap::new();
        let mut first_activity: HashMap<String, i64> = HashMap::new();
        let mut touch = |addr: &str, i: usize, role: Role, ts: i64| {
            let entry = address_index.entry(addr.to_string()).or_default();
            if entry.last() != Some(&(i, role)) {
                entry.push((i, role));
            }
            first_activity
                .entry(addr.to_string())
                .and_modify(|t| *t = (*t).min(ts))
                .or_insert(ts);
        };
        for (i, tx) in txs.iter().enumerate() {
            for op in &tx.inputs {
                spenders.entry(*op).or_default().push(i);
                let prev = by_txid
                    .get(&op.txid)
                    .and_then(|&j| txs[j].outputs.get(op.vout as usize));
                if let Some(prev) = prev {
                    touch(&prev.address, i, Role::Sender, tx.timestamp);
                }
            }
            for out in &tx.outputs {
                touch(&out.address, i, Role::Receiver, tx.timestamp);
            }
        }

        let order_violation = txs.iter().enumerate().find_map(|(i, tx)| {
            tx.inputs.iter().find_map(|op| match by_txid.get(&op.txid) {
                Some(&j) if j >= i => Some((tx.txid, op.txid)),
                _ => None,
            })
        });

        Ok(ChainView {
            txs,
            by_txid,
            spenders,
            address_index,
            first_activity,
            order_violation,
        })
    }

    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }

    pub fn transactions(&self) -> &[Transaction] {
        &self.txs
    }

    pub fn get(&self, txid: &Txid) -> Option<&Transaction> {
        self.by_txid.get(txid).map(|&i| &self.txs[i])
    }

    /// Index of `txid` in temporal order.
    pub fn position_of(&self, txid: &Txid) -> Option<usize> {
        self.by_txid.get(txid).copied()
    }

    pub fn output(&self, op: &OutPoint) -> Option<&TxOutput> {
        self.get(&op.txid)?.outputs.get(op.vout as usize)
    }

    /// Number of outputs reachable through the outpoint index.
    pub fn output_count(&self) -> usize {
        self.txs.iter().map(|t| t.outputs.len()).sum()
    }

    /// The first (in temporal order) transaction spending `op`.
    pub fn spender(&self, op: &OutPoint) -> Option<&Transaction> {
        self.spenders
            .get(op)
            .and_then(|v| v.iter().min())
            .map(|&i| &self.txs[i])
    }

    /// Transactions mentioning `address`, in temporal order, with role.
    pub fn address_history(&self, address: &str) -> impl Iterator<Item = (&Transaction, Role)> {
        self.address_index
            .get(address)
            .into_iter()
            .flatten()
            .map(move |&(i, role)| (&self.txs[i], role))
    }

    pub fn addresses(&self) -> impl Iterator<Item = &str> {
        self.address_index.keys().map(String::as_str)
    }

    pub fn first_activity(&self, address: &str) -> Option<i64> {
        self.first_activity.get(address).copied()
    }

    /// Resolved input values of `tx`, in input order.
    pub fn input_values(&self, tx: &Transaction) -> Result<Vec<u64>, ChainError> {
        tx.inputs
            .iter()
            .map(|op| self.output(op).map(|o| o.value).ok_or(ChainError::UnresolvedInput(*op)))
            .collect()
    }

    /// Distinct input-side addresses of `tx` (unresolved inputs skipped).
    pub fn input_addresses<'a>(&'a self, tx: &'a Transaction) -> impl Iterator<Item = &'a str> + 'a {
        tx.inputs
            .iter()
            .filter_map(|op| self.output(op))
            .map(|o| o.address.as_str())
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();

        let mut positions: BTreeMap<(u64, u32), Vec<Txid>> = BTreeMap::new();
        for tx in &self.txs {
            positions.entry(tx.position()).or_default().push(tx.txid);
        }
        report.duplicate_positions = positions.into_iter().filter(|(_, v)| v.len() > 1).collect();

        for (i, tx) in self.txs.iter().enumerate() {
            let mut resolved = true;
            for op in &tx.inputs {
                match self.position_of(&op.txid) {
                    Some(j) if (op.vout as usize) < self.txs[j].outputs.len() => {
                        if j >= i {
                            report.order_violations.push((tx.txid, op.txid));
                        }
                    }
                    _ => {
                        resolved = false;
                        report.unresolved_inputs.push((tx.txid, *op));
                    }
                }
            }
            if resolved && matches!(tx_fee(self, tx), Err(ChainError::NegativeFee { .. })) {
                report.negative_fees.push(tx.txid);
            }
        }

        let mut doubles: Vec<(OutPoint, Vec<Txid>)> = self
            .spenders
            .iter()
            .filter(|(_, v)| v.len() > 1)
            .map(|(op, v)| {
                let mut v = v.clone();
                v.sort();
                (*op, v.into_iter().map(|i| self.txs[i].txid).collect())
            })
            .collect();
        doubles.sort();
        report.double_spends = doubles;
        report
    }

    /// Transactions in ascending `(block_height, tx_index)` order.
    pub fn temporal_order(&self) -> Result<std::slice::Iter<'_, Transaction>, ChainError> {
        match self.order_violation {
            Some((spender, spent)) => Err(ChainError::CycleDetected { spender, spent }),
            None => Ok(self.txs.iter()),
        }
    }

    /// Rebuilds the view without the given transactions.
    pub fn without(&self, drop: &[Txid]) -> Result<Self, ChainError> {
        let keep = self
            .txs
            .iter()
            .filter(|t| drop.binary_search(&t.txid).is_err())
            .cloned()
            .collect();
        ChainView::build(keep)
    }
}

/// Input value minus output value. Coinbase transactions pay no fee.
pub fn tx_fee(chain: &ChainView, tx: &Transaction) -> Result<u64, ChainError> {
    if tx.is_coinbase() {
        return Ok(0);
    }
    let inputs: u64 = chain.input_values(tx)?.iter().sum();
    let outputs = tx.output_total();
    inputs.checked_sub(outputs).ok_or(ChainError::NegativeFee {
        txid: tx.txid,
        inputs,
        outputs,
    })
}
