//! `taintflow-ledger/1` files.
//!
//! Line 1 is the version tag, line 2 a JSON header (strategy, seed, policy,
//! totals), then one JSON record per line: tainted transactions, tainted
//! addresses and marks, each group in ascending order (marks by
//! `(txid, vout)`).

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};

use dashu_int::{IBig, UBig};
use dashu_ratio::RBig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::distribute::Strategy;
use super::mark::{round_half_even, Sats, Segments, TaintMark};
use super::propagate::{TaintLedger, TaintSeed};
use crate::chain::{OutPoint, Txid};

pub const LEDGER_FORMAT: &str = "taintflow-ledger/1";

#[derive(Debug, Error)]
pub enum LedgerIoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq, Eq)]
pub struct Ratio {
    pub num: String,
    pub den: String,
    /// Rounded half-to-even, informational.
    pub sat: String,
}

impl Ratio {
    fn from_sats(x: &Sats) -> Self {
        Ratio {
            num: x.numerator().to_string(),
            den: x.denominator().to_string(),
            sat: round_half_even(x).to_string(),
        }
    }

    fn to_sats(&self) -> Result<Sats, String> {
        let num: IBig = self.num.parse().map_err(|e| format!("numerator: {e:?}"))?;
        let den: UBig = self.den.parse().map_err(|e| format!("denominator: {e:?}"))?;
        if den.is_zero() {
            return Err("zero denominator".into());
        }
        Ok(RBig::from_parts(num, den))
    }
}

#[derive(Serialize, Deserialize, Debug)]
struct Policy {
    window_days: u32,
    service_halt: bool,
}

#[derive(Serialize, Deserialize, Debug)]
struct Totals {
    tainted_txs: usize,
    tainted_addresses: usize,
    marks: usize,
    halted: usize,
    seed_taint: Ratio,
    fee_burned: Ratio,
    service_stopped: Ratio,
}

#[derive(Serialize, Deserialize, Debug)]
struct Header {
    strategy: Strategy,
    seed: TaintSeed,
    policy: Policy,
    t0: i64,
    totals: Totals,
}

#[derive(Serialize, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum MarkState {
    Live,
    Consumed,
    Halted,
}

#[derive(Serialize, Deserialize, Debug, PartialEq, Eq)]
#[serde(tag = "type", rename_all = "lowercase")]
enum MarkRecord {
    Full,
    Fraction { num: String, den: String },
    Segments { segments: Vec<(u64, u64)> },
    Amount { sat: u64 },
}

impl MarkRecord {
    fn from_mark(m: &TaintMark) -> Self {
        match m {
            TaintMark::Full => MarkRecord::Full,
            TaintMark::Fraction(f) => MarkRecord::Fraction {
                num: f.numerator().to_string(),
                den: f.denominator().to_string(),
            },
            TaintMark::Segments(s) => MarkRecord::Segments {
                segments: s.ranges().to_vec(),
            },
            TaintMark::Amount(a) => MarkRecord::Amount { sat: *a },
        }
    }

    fn into_mark(self) -> Result<TaintMark, String> {
        Ok(match self {
            MarkRecord::Full => TaintMark::Full,
            MarkRecord::Fraction { num, den } => TaintMark::Fraction(
                Ratio {
                    num,
                    den,
                    sat: String::new(),
                }
                .to_sats()?,
            ),
            MarkRecord::Segments { segments } => TaintMark::Segments(Segments::from_ranges(segments)),
            MarkRecord::Amount { sat } => TaintMark::Amount(sat),
        })
    }
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Line {
    Tx {
        txid: Txid,
    },
    Address {
        address: String,
    },
    Mark {
        txid: Txid,
        vout: u32,
        state: MarkState,
        mark: MarkRecord,
    },
}

pub fn write_ledger<W: Write>(ledger: &TaintLedger, mut out: W) -> io::Result<()> {
    let header = Header {
        strategy: ledger.strategy,
        seed: ledger.seed.clone(),
        policy: Policy {
            window_days: ledger.window_days,
            service_halt: ledger.service_halt,
        },
        t0: ledger.t0,
        totals: Totals {
            tainted_txs: ledger.tainted_txids.len(),
            tainted_addresses: ledger.tainted_addresses.len(),
            marks: ledger.marks.len(),
            halted: ledger.halted.len(),
            seed_taint: Ratio::from_sats(&ledger.seed_taint),
            fee_burned: Ratio::from_sats(&ledger.fee_burned),
            service_stopped: Ratio::from_sats(&ledger.service_stopped),
        },
    };
    writeln!(out, "{LEDGER_FORMAT}")?;
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let mut emit = |line: &Line| -> io::Result<()> {
        serde_json::to_writer(&mut out, line)?;
        out.write_all(b"\n")
    };
    for txid in &ledger.tainted_txids {
        emit(&Line::Tx { txid: *txid })?;
    }
    for address in &ledger.tainted_addresses {
        emit(&Line::Address {
            address: address.clone(),
        })?;
    }
    for (op, mark) in &ledger.marks {
        let state = if ledger.halted.contains(op) {
            MarkState::Halted
        } else if ledger.consumed.contains(op) {
            MarkState::Consumed
        } else {
            MarkState::Live
        };
        emit(&Line::Mark {
            txid: op.txid,
            vout: op.vout,
            state,
            mark: MarkRecord::from_mark(mark),
        })?;
    }
    out.flush()
}

pub fn read_ledger<R: BufRead>(input: R) -> Result<TaintLedger, LedgerIoError> {
    let mut lines = input.lines();
    let parse_err = |line: usize, reason: String| LedgerIoError::Parse { line, reason };

    match lines.next().transpose()? {
        Some(v) if v.trim() == LEDGER_FORMAT => {}
        other => return Err(parse_err(1, format!("expected {LEDGER_FORMAT:?}, found {other:?}"))),
    }
    let header: Header = match lines.next().transpose()? {
        Some(h) => serde_json::from_str(&h).map_err(|e| parse_err(2, e.to_string()))?,
        None => return Err(parse_err(2, "missing header".into())),
    };
    let ratio = |r: &Ratio| r.to_sats().map_err(|e| parse_err(2, e));

    let mut ledger = TaintLedger {
        strategy: header.strategy,
        seed: header.seed,
        window_days: header.policy.window_days,
        service_halt: header.policy.service_halt,
        t0: header.t0,
        marks: BTreeMap::new(),
        tainted_txids: BTreeSet::new(),
        tainted_addresses: BTreeSet::new(),
        halted: BTreeSet::new(),
        consumed: BTreeSet::new(),
        seed_taint: ratio(&header.totals.seed_taint)?,
        fee_burned: ratio(&header.totals.fee_burned)?,
        service_stopped: ratio(&header.totals.service_stopped)?,
    };

    for (i, line) in lines.enumerate() {
        let n = i + 3;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Line>(&line).map_err(|e| parse_err(n, e.to_string()))? {
            Line::Tx { txid } => {
                ledger.tainted_txids.insert(txid);
            }
            Line::Address { address } => {
                ledger.tainted_addresses.insert(address);
            }
            Line::Mark {
                txid,
                vout,
                state,
                mark,
            } => {
                let op = OutPoint::new(txid, vout);
                match state {
                    MarkState::Halted => {
                        ledger.halted.insert(op);
                    }
                    MarkState::Consumed => {
                        ledger.consumed.insert(op);
                    }
                    MarkState::Live => {}
                }
                ledger.marks.insert(op, mark.into_mark().map_err(|e| parse_err(n, e))?);
            }
        }
    }
    if ledger.tainted_txids.len() != header.totals.tainted_txs
        || ledger.tainted_addresses.len() != header.totals.tainted_addresses
        || ledger.marks.len() != header.totals.marks
    {
        return Err(parse_err(2, "header totals disagree with records".into()));
    }
    Ok(ledger)
}
