//! Control-group selection: transactions resembling the theft's first
//! distribution in time, value and address shape, outside the theft's Poison
//! closure, one per closure group.

use std::collections::{BTreeSet, HashMap};
use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::chain::{ChainView, Transaction, Txid, SATS_PER_BTC};
use crate::par::Exec;
use crate::taint::{propagate, PropagationPolicy, Strategy, TaintError, TaintLedger, TaintSeed, SECONDS_PER_DAY};

pub const CONTROLS_FORMAT: &str = "taintflow-controls/1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ControlError {
    #[error("no transaction matches the control criteria")]
    NoCandidates,
    #[error("theft seed {0} is never spent, so it has no distribution shape")]
    NoDistribution(Txid),
    #[error("control radii must be positive")]
    InvalidRadius,
    #[error(transparent)]
    Taint(#[from] TaintError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeMode {
    /// Input and output address counts must both match.
    Exact,
    /// Only the input address count must match.
    InputOnly,
}

/// Distinct input and output address counts of a transaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Shape {
    pub inputs: usize,
    pub outputs: usize,
}

impl Shape {
    pub fn of(chain: &ChainView, tx: &Transaction) -> Shape {
        let inputs: BTreeSet<&str> = chain.input_addresses(tx).collect();
        let outputs: BTreeSet<&str> = tx.outputs.iter().map(|o| o.address.as_str()).collect();
        Shape {
            inputs: inputs.len(),
            outputs: outputs.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ControlCriteria {
    pub time_radius_days: u32,
    pub value_radius_sat: u64,
    pub shape: Shape,
    pub shape_mode: ShapeMode,
    /// First distribution time of the theft.
    pub reference_time: i64,
    /// Stolen value the candidate's total output is compared to.
    pub reference_value: u64,
    /// Window used when grouping candidates by Poison closure.
    pub closure_window_days: u32,
    #[serde(skip)]
    pub exclusion_set: BTreeSet<Txid>,
}

impl ControlCriteria {
    pub const DEFAULT_TIME_RADIUS_DAYS: u32 = 30;
    pub const DEFAULT_VALUE_RADIUS_SAT: u64 = 1_000 * SATS_PER_BTC;

    /// Criteria derived from a theft seed and its Poison ledger.
    pub fn for_theft(chain: &ChainView, seed: &TaintSeed, poison: &TaintLedger) -> Result<Self, ControlError> {
        let first = seed
            .first_distribution(chain)?
            .ok_or(ControlError::NoDistribution(seed.txid))?;
        let mut exclusion_set = poison.tainted_txids.clone();
        exclusion_set.insert(seed.txid);
        Ok(ControlCriteria {
            time_radius_days: Self::DEFAULT_TIME_RADIUS_DAYS,
            value_radius_sat: Self::DEFAULT_VALUE_RADIUS_SAT,
            shape: Shape::of(chain, first),
            shape_mode: ShapeMode::Exact,
            reference_time: first.timestamp,
            reference_value: seed.value(chain)?,
            closure_window_days: poison.window_days,
            exclusion_set,
        })
    }

    pub fn matches(&self, chain: &ChainView, tx: &Transaction) -> bool {
        let radius = self.time_radius_days as i64 * SECONDS_PER_DAY;
        if (tx.timestamp - self.reference_time).abs() > radius {
            return false;
        }
        if tx.output_total().abs_diff(self.reference_value) > self.value_radius_sat {
            return false;
        }
        if self.exclusion_set.contains(&tx.txid) {
            return false;
        }
        let shape = Shape::of(chain, tx);
        match self.shape_mode {
            ShapeMode::Exact => shape == self.shape,
            ShapeMode::InputOnly => shape.inputs == self.shape.inputs,
        }
    }
}

pub fn relax_shape(criteria: &ControlCriteria, mode: ShapeMode) -> ControlCriteria {
    ControlCriteria {
        shape_mode: mode,
        ..criteria.clone()
    }
}

/// Transactions satisfying every criterion, in temporal order.
pub fn candidates(chain: &ChainView, criteria: &ControlCriteria, exec: Exec) -> Vec<Txid> {
    let txs = chain.transactions();
    exec.map(txs, |tx| criteria.matches(chain, tx).then_some(tx.txid))
        .into_iter()
        .flatten()
        .collect()
}

/// Picks the earliest candidate of every Poison-closure group.
pub fn select_controls(chain: &ChainView, criteria: &ControlCriteria, exec: Exec) -> Result<Vec<Txid>, ControlError> {
    if criteria.time_radius_days == 0 || criteria.value_radius_sat == 0 {
        return Err(ControlError::InvalidRadius);
    }
    let found = candidates(chain, criteria, exec);
    if found.is_empty() {
        return Err(ControlError::NoCandidates);
    }
    let policy = PropagationPolicy::unhalted(criteria.closure_window_days.max(1));
    let closures = exec.try_map(&found, |txid| {
        propagate(chain, &TaintSeed::new(*txid), Strategy::Poison, &policy).map(|l| l.tainted_txids)
    })?;

    let mut group_of: HashMap<Txid, usize> = HashMap::new();
    let mut leaders = Vec::new();
    for (i, txid) in found.iter().enumerate() {
        let group = (0..i)
            .find(|&j| closures[j].contains(txid))
            .map(|j| group_of[&found[j]]);
        match group {
            Some(g) => {
                group_of.insert(*txid, g);
            }
            None => {
                group_of.insert(*txid, leaders.len());
                leaders.push(*txid);
            }
        }
    }
    Ok(leaders)
}

/// Writes the control list: a criteria header line, then one txid per line.
pub fn write_controls<W: Write>(criteria: &ControlCriteria, controls: &[Txid], mut out: W) -> io::Result<()> {
    writeln!(
        out,
        "# {CONTROLS_FORMAT} {}",
        serde_json::to_string(criteria).map_err(io::Error::other)?
    )?;
    for txid in controls {
        writeln!(out, "{txid}")?;
    }
    out.flush()
}
