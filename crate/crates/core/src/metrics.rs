//! Behaviour metrics for one ledger, strategy overlaps, and hypothesis
//! verdicts against control ledgers.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::chain::{tx_fee, ChainError, ChainView, Txid};
use crate::profiling::{AddressClass, AddressProfile};
use crate::taint::{round_half_even, Sats, TaintLedger, Window};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("window {given:?} does not match the ledger window {ledger:?}")]
    WindowMismatch { given: Window, ledger: Window },
    #[error("no profile for tainted address {0}")]
    MissingProfile(String),
    #[error("ledger transaction {0} is not in the chain")]
    UnknownTransaction(Txid),
    #[error("ledgers have different seeds")]
    MixedSeeds,
    #[error("need at least two ledgers, got {0}")]
    TooFewLedgers(usize),
    #[error("no control reports to compare against")]
    EmptyControls,
    #[error(transparent)]
    Chain(#[from] ChainError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AddressTypePercentages {
    pub service: f64,
    pub reused: f64,
    pub fresh: f64,
}

/// Five-number summary plus mean and the raw values.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub values: Vec<u64>,
}

impl Summary {
    pub fn of(mut values: Vec<u64>) -> Self {
        values.sort_unstable();
        if values.is_empty() {
            return Summary {
                count: 0,
                min: 0.0,
                q1: 0.0,
                median: 0.0,
                q3: 0.0,
                max: 0.0,
                mean: 0.0,
                values,
            };
        }
        let q = |p: f64| {
            // Linear interpolation between closest ranks.
            let h = p * (values.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            values[lo] as f64 + (h - lo as f64) * (values[hi] as f64 - values[lo] as f64)
        };
        let sum: u128 = values.iter().map(|&v| v as u128).sum();
        Summary {
            count: values.len(),
            min: values[0] as f64,
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: values[values.len() - 1] as f64,
            mean: sum as f64 / values.len() as f64,
            values,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ServiceReach {
    /// Marked outpoints on service addresses.
    pub outpoints: usize,
    pub addresses: usize,
    /// Taint value on those outpoints, rounded half-to-even.
    pub taint_sat: String,
}

/// Columns of the per-strategy summary table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Totals {
    pub tainted_tx: usize,
    pub tainted_adr: usize,
    pub service_adr: usize,
    pub reused_adr: usize,
    pub fresh_adr: usize,
    pub avg_adr_per_tx: f64,
    pub avg_tx_fee_value_sat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub window: Window,
    /// Tainted transactions per day, day 1 first.
    pub per_day_tx_counts: Vec<usize>,
    pub address_type_percentages: AddressTypePercentages,
    pub addresses_per_tx: Summary,
    pub avg_fee_value_sat: f64,
    /// Per-day mean of fee / size in sat/byte; `None` on days without
    /// tainted transactions.
    pub fee_per_byte_series: Vec<Option<f64>>,
    pub service_reach: ServiceReach,
    pub totals: Totals,
}

impl MetricsReport {
    pub fn service_reach_count(&self) -> usize {
        self.service_reach.outpoints
    }

    pub fn mean_per_day_tx(&self) -> f64 {
        if self.per_day_tx_counts.is_empty() {
            return 0.0;
        }
        self.per_day_tx_counts.iter().sum::<usize>() as f64 / self.per_day_tx_counts.len() as f64
    }
}

fn pct(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

pub fn compute_metrics(
    chain: &ChainView,
    ledger: &TaintLedger,
    profiles: &BTreeMap<String, AddressProfile>,
    window: Window,
) -> Result<MetricsReport, MetricsError> {
    if window != ledger.window() {
        return Err(MetricsError::WindowMismatch {
            given: window,
            ledger: ledger.window(),
        });
    }
    let days = window.days as usize;
    let mut per_day = vec![0usize; days];
    let mut ratio_sums = vec![(0.0f64, 0usize); days];
    let mut fees: u128 = 0;
    let mut per_tx_addresses = Vec::with_capacity(ledger.tainted_txids.len());

    for txid in &ledger.tainted_txids {
        let tx = chain.get(txid).ok_or(MetricsError::UnknownTransaction(*txid))?;
        let fee = tx_fee(chain, tx)?;
        fees += fee as u128;
        let distinct: BTreeSet<&str> = chain
            .input_addresses(tx)
            .chain(tx.outputs.iter().map(|o| o.address.as_str()))
            .collect();
        per_tx_addresses.push(distinct.len() as u64);
        if let Some(d) = window.day_of(tx.timestamp) {
            per_day[d] += 1;
            ratio_sums[d].0 += fee as f64 / tx.size_bytes as f64;
            ratio_sums[d].1 += 1;
        }
    }

    let mut service_adr = 0;
    let mut reused_adr = 0;
    let mut fresh_adr = 0;
    for address in &ledger.tainted_addresses {
        let p = profiles
            .get(address)
            .ok_or_else(|| MetricsError::MissingProfile(address.clone()))?;
        service_adr += (p.class == AddressClass::Service) as usize;
        reused_adr += p.reused as usize;
        fresh_adr += p.fresh as usize;
    }

    let mut reach_outpoints = 0;
    let mut reach_addresses = BTreeSet::new();
    let mut reach_value = Sats::ZERO;
    for (op, mark) in &ledger.marks {
        let Some(out) = chain.output(op) else { continue };
        if profiles
            .get(&out.address)
            .is_some_and(|p| p.class == AddressClass::Service)
        {
            reach_outpoints += 1;
            reach_addresses.insert(out.address.as_str());
            reach_value += mark.taint_value(out.value);
        }
    }

    let n_tx = ledger.tainted_txids.len();
    let n_adr = ledger.tainted_addresses.len();
    let avg_fee = if n_tx == 0 { 0.0 } else { fees as f64 / n_tx as f64 };
    let addresses_per_tx = Summary::of(per_tx_addresses);

    Ok(MetricsReport {
        window,
        per_day_tx_counts: per_day,
        address_type_percentages: AddressTypePercentages {
            service: pct(service_adr, n_adr),
            reused: pct(reused_adr, n_adr),
            fresh: pct(fresh_adr, n_adr),
        },
        avg_fee_value_sat: avg_fee,
        fee_per_byte_series: ratio_sums
            .into_iter()
            .map(|(s, n)| (n > 0).then(|| s / n as f64))
            .collect(),
        service_reach: ServiceReach {
            outpoints: reach_outpoints,
            addresses: reach_addresses.len(),
            taint_sat: round_half_even(&reach_value).to_string(),
        },
        totals: Totals {
            tainted_tx: n_tx,
            tainted_adr: n_adr,
            service_adr,
            reused_adr,
            fresh_adr,
            avg_adr_per_tx: addresses_per_tx.mean,
            avg_tx_fee_value_sat: avg_fee,
        },
        addresses_per_tx,
    })
}

/// Tainted-transaction intersection size for one subset of ledgers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Overlap {
    /// Ledger indices in the subset, ascending.
    pub members: Vec<usize>,
    /// Transactions tainted by every member.
    pub intersection: usize,
    /// Transactions tainted by exactly these members (Venn region).
    pub exclusive: usize,
}

/// Intersection and exclusive-region counts for every non-empty subset of
/// `ledgers`, ordered by subset bitmask.
pub fn overlap_sets(ledgers: &[&TaintLedger]) -> Result<Vec<Overlap>, MetricsError> {
    let n = ledgers.len();
    if n < 2 {
        return Err(MetricsError::TooFewLedgers(n));
    }
    if ledgers.iter().any(|l| l.seed != ledgers[0].seed) {
        return Err(MetricsError::MixedSeeds);
    }
    assert!(n < usize::BITS as usize, "too many ledgers for subset enumeration");

    let mut membership: HashMap<&Txid, usize> = HashMap::new();
    for (i, l) in ledgers.iter().enumerate() {
        for t in &l.tainted_txids {
            *membership.entry(t).or_default() |= 1 << i;
        }
    }
    let mut exclusive = vec![0usize; 1 << n];
    for &mask in membership.values() {
        exclusive[mask] += 1;
    }

    Ok((1usize..1 << n)
        .map(|mask| {
            let intersection = membership.values().filter(|&&m| m & mask == mask).count();
            Overlap {
                members: (0..n).filter(|i| mask & (1 << i) != 0).collect(),
                intersection,
                exclusive: exclusive[mask],
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Hypothesis {
    H1,
    H2,
    H3,
    H4,
    H5,
    H6,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Higher,
    Lower,
}

impl Hypothesis {
    pub const ALL: [Hypothesis; 6] = [
        Hypothesis::H1,
        Hypothesis::H2,
        Hypothesis::H3,
        Hypothesis::H4,
        Hypothesis::H5,
        Hypothesis::H6,
    ];

    pub fn metric(self) -> &'static str {
        match self {
            Hypothesis::H1 => "reused_address_pct",
            Hypothesis::H2 => "fresh_address_pct",
            Hypothesis::H3 => "avg_tx_fee_value_sat",
            Hypothesis::H4 => "service_reach_outpoints",
            Hypothesis::H5 => "mean_tainted_tx_per_day",
            Hypothesis::H6 => "mean_addresses_per_tx",
        }
    }

    /// All six are stated as "theft higher than control". H1's own
    /// motivation expects the opposite; the rank is reported so either
    /// reading can be checked.
    pub fn direction(self) -> Direction {
        Direction::Higher
    }

    pub fn value(self, report: &MetricsReport) -> f64 {
        match self {
            Hypothesis::H1 => report.address_type_percentages.reused,
            Hypothesis::H2 => report.address_type_percentages.fresh,
            Hypothesis::H3 => report.avg_fee_value_sat,
            Hypothesis::H4 => report.service_reach_count() as f64,
            Hypothesis::H5 => report.mean_per_day_tx(),
            Hypothesis::H6 => report.addresses_per_tx.mean,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Consistent,
    Inconsistent,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Consistent => "consistent",
            Verdict::Inconsistent => "inconsistent",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VerdictThresholds {
    /// Rank at or above which a "higher" hypothesis is consistent.
    pub consistent: f64,
    /// Rank at or below which a "higher" hypothesis is inconsistent.
    pub inconsistent: f64,
}

impl Default for VerdictThresholds {
    fn default() -> Self {
        VerdictThresholds {
            consistent: 0.75,
            inconsistent: 0.25,
        }
    }
}

impl VerdictThresholds {
    pub fn verdict(&self, rank: f64, direction: Direction) -> Verdict {
        let rank = match direction {
            Direction::Higher => rank,
            Direction::Lower => 1.0 - rank,
        };
        if rank >= self.consistent {
            Verdict::Consistent
        } else if rank <= self.inconsistent {
            Verdict::Inconsistent
        } else {
            Verdict::Inconclusive
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HypothesisVerdict {
    pub id: Hypothesis,
    pub theft_value: f64,
    pub control_values: Vec<f64>,
    pub theft_percentile_rank: f64,
    pub direction_expected: Direction,
    pub verdict: Verdict,
}

/// Mid-rank of `value` among `others`: share strictly below plus half the
/// share equal.
pub fn percentile_rank(value: f64, others: &[f64]) -> f64 {
    let below = others.iter().filter(|&&c| c < value).count() as f64;
    let equal = others.iter().filter(|&&c| c == value).count() as f64;
    (below + 0.5 * equal) / others.len() as f64
}

pub fn evaluate_hypotheses(
    theft: &MetricsReport,
    controls: &[MetricsReport],
    thresholds: &VerdictThresholds,
) -> Result<Vec<HypothesisVerdict>, MetricsError> {
    if controls.is_empty() {
        return Err(MetricsError::EmptyControls);
    }
    Ok(Hypothesis::ALL
        .iter()
        .map(|&h| {
            let theft_value = h.value(theft);
            let control_values: Vec<f64> = controls.iter().map(|c| h.value(c)).collect();
            let rank = percentile_rank(theft_value, &control_values);
            HypothesisVerdict {
                id: h,
                theft_value,
                control_values,
                theft_percentile_rank: rank,
                direction_expected: h.direction(),
                verdict: thresholds.verdict(rank, h.direction()),
            }
        })
        .collect())
}
