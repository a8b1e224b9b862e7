//! Per-transaction taint distribution rules.
//!
//! Every rule takes the inputs in transaction order as `(value, mark)` pairs
//! (`None` = clean), the output values in transaction order and the fee, and
//! returns one optional mark per output plus the taint that lands in the fee.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::mark::{mark_value, sats, sum_sats, Sats, Segments, TaintMark};

pub type InputMark<'a> = (u64, Option<&'a TaintMark>);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DistributeError {
    #[error("inputs carry no value")]
    ZeroInputValue,
    #[error("inputs total {inputs} sat but outputs plus fee total {outputs} + {fee} sat")]
    ValueMismatch { inputs: u64, outputs: u64, fee: u64 },
    #[error("input {index} carries a {kind} mark, which has no satoshi positions")]
    IncompatibleMark { index: usize, kind: &'static str },
    #[error("input {index} carries a mark that does not fit its value")]
    InvalidMark { index: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Distribution {
    pub outputs: Vec<Option<TaintMark>>,
    pub fee_taint: Sats,
}

impl Distribution {
    fn clean(n: usize) -> Self {
        Distribution {
            outputs: vec![None; n],
            fee_taint: Sats::ZERO,
        }
    }

    /// Σ output taint values.
    pub fn output_taint(&self, outputs: &[u64]) -> Sats {
        sum_sats(
            self.outputs
                .iter()
                .zip(outputs)
                .map(|(m, &v)| mark_value(m.as_ref(), v)),
        )
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown strategy {0:?}; expected one of poison, haircut, fifo, lifo, tiho")]
pub struct UnknownStrategy(pub String);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Poison,
    Haircut,
    Fifo,
    Lifo,
    Tiho,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Poison,
        Strategy::Haircut,
        Strategy::Fifo,
        Strategy::Lifo,
        Strategy::Tiho,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Poison => "poison",
            Strategy::Haircut => "haircut",
            Strategy::Fifo => "fifo",
            Strategy::Lifo => "lifo",
            Strategy::Tiho => "tiho",
        }
    }

    /// Whether Σ output taint + fee taint equals Σ input taint.
    pub fn conserves_taint(self) -> bool {
        self != Strategy::Poison
    }

    pub fn distribute(
        self,
        inputs: &[InputMark<'_>],
        outputs: &[u64],
        fee: u64,
    ) -> Result<Distribution, DistributeError> {
        match self {
            Strategy::Poison => Ok(distribute_poison(inputs, outputs, fee)),
            Strategy::Haircut => distribute_haircut(inputs, outputs, fee),
            Strategy::Fifo => distribute_fifo(inputs, outputs, fee),
            Strategy::Lifo => distribute_lifo(inputs, outputs, fee),
            Strategy::Tiho => distribute_tiho(inputs, outputs, fee),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownStrategy(s.to_string()))
    }
}

fn input_taint(inputs: &[InputMark<'_>]) -> Sats {
    sum_sats(inputs.iter().map(|&(v, m)| mark_value(m, v)))
}

fn check_marks(inputs: &[InputMark<'_>]) -> Result<(), DistributeError> {
    for (index, &(v, m)) in inputs.iter().enumerate() {
        if m.is_some_and(|m| !m.is_valid_for(v)) {
            return Err(DistributeError::InvalidMark { index });
        }
    }
    Ok(())
}

fn check_conservation(inputs: &[InputMark<'_>], outputs: &[u64], fee: u64) -> Result<u64, DistributeError> {
    let total_in: u64 = inputs.iter().map(|(v, _)| v).sum();
    let total_out: u64 = outputs.iter().sum();
    if total_in != total_out + fee {
        return Err(DistributeError::ValueMismatch {
            inputs: total_in,
            outputs: total_out,
            fee,
        });
    }
    Ok(total_out)
}

/// Any tainted input taints every output entirely.
pub fn distribute_poison(inputs: &[InputMark<'_>], outputs: &[u64], fee: u64) -> Distribution {
    if input_taint(inputs).is_zero() {
        return Distribution::clean(outputs.len());
    }
    Distribution {
        outputs: outputs.iter().map(|&v| (v > 0).then_some(TaintMark::Full)).collect(),
        fee_taint: sats(fee),
    }
}

/// Every output receives the inputs' overall tainted share.
pub fn distribute_haircut(
    inputs: &[InputMark<'_>],
    outputs: &[u64],
    fee: u64,
) -> Result<Distribution, DistributeError> {
    check_marks(inputs)?;
    let total_in: u64 = inputs.iter().map(|(v, _)| v).sum();
    if total_in == 0 {
        return Err(DistributeError::ZeroInputValue);
    }
    let taint = input_taint(inputs);
    if taint.is_zero() {
        return Ok(Distribution::clean(outputs.len()));
    }
    let share = taint / sats(total_in);
    Ok(Distribution {
        outputs: outputs
            .iter()
            .map(|&v| (v > 0).then(|| TaintMark::Fraction(share.clone())))
            .collect(),
        fee_taint: &share * sats(fee),
    })
}

/// Inputs are laid end to end in order and outputs, then the fee, take
/// consecutive slices of that line.
pub fn distribute_fifo(inputs: &[InputMark<'_>], outputs: &[u64], fee: u64) -> Result<Distribution, DistributeError> {
    check_marks(inputs)?;
    let total_out = check_conservation(inputs, outputs, fee)?;

    let mut line = Segments::new();
    let mut offset = 0u64;
    for (index, &(value, mark)) in inputs.iter().enumerate() {
        if let Some(mark) = mark {
            let segs = mark.as_segments(value).ok_or(DistributeError::IncompatibleMark {
                index,
                kind: mark.kind(),
            })?;
            for &(a, b) in segs.ranges() {
                line.push_back(offset + a, offset + b);
            }
        }
        offset += value;
    }
    if line.is_empty() {
        return Ok(Distribution::clean(outputs.len()));
    }

    let mut start = 0u64;
    let marks = outputs
        .iter()
        .map(|&v| {
            let segs = line.window(start, start + v);
            start += v;
            (!segs.is_empty()).then_some(TaintMark::Segments(segs))
        })
        .collect();
    let fee_taint = line.window(total_out, total_out + fee).total_len();
    Ok(Distribution {
        outputs: marks,
        fee_taint: sats(fee_taint),
    })
}

/// FIFO over the reversed input list; positions inside each input keep
/// their orientation.
pub fn distribute_lifo(inputs: &[InputMark<'_>], outputs: &[u64], fee: u64) -> Result<Distribution, DistributeError> {
    let reversed: Vec<InputMark<'_>> = inputs.iter().rev().copied().collect();
    distribute_fifo(&reversed, outputs, fee).map_err(|e| match e {
        DistributeError::IncompatibleMark { index, kind } => DistributeError::IncompatibleMark {
            index: inputs.len() - 1 - index,
            kind,
        },
        DistributeError::InvalidMark { index } => DistributeError::InvalidMark {
            index: inputs.len() - 1 - index,
        },
        other => other,
    })
}

/// Total input taint fills outputs greedily from the highest value down
/// (ties by position); the fee is filled last.
///
/// Whole satoshis go to outputs; a fractional remainder of the input taint
/// (only possible with non-integral inputs) is booked to the fee.
pub fn distribute_tiho(inputs: &[InputMark<'_>], outputs: &[u64], fee: u64) -> Result<Distribution, DistributeError> {
    check_marks(inputs)?;
    check_conservation(inputs, outputs, fee)?;

    let taint = input_taint(inputs);
    if taint.is_zero() {
        return Ok(Distribution::clean(outputs.len()));
    }
    let whole = taint.floor();
    let remainder = &taint - Sats::from(whole.clone());
    let mut left = u64::try_from(whole).expect("input taint bounded by input value");

    let mut order: Vec<usize> = (0..outputs.len()).collect();
    order.sort_by(|&a, &b| outputs[b].cmp(&outputs[a]).then(a.cmp(&b)));

    let mut marks = vec![None; outputs.len()];
    for i in order {
        if left == 0 {
            break;
        }
        let take = left.min(outputs[i]);
        if take > 0 {
            marks[i] = Some(TaintMark::Amount(take));
            left -= take;
        }
    }
    debug_assert!(left <= fee);
    Ok(Distribution {
        outputs: marks,
        fee_taint: sats(left) + remainder,
    })
}
