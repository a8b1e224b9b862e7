#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taintflow::taint::{ratio, Segments, SECONDS_PER_DAY};
use taintflow::{ChainView, OutPoint, TaintMark, TaintSeed, Transaction, TxOutput, Txid};

pub const T0: i64 = 1_600_000_000;
pub const DAY: i64 = SECONDS_PER_DAY;

pub fn tx(n: u64, ts: i64, inputs: &[(u64, u32)], outs: &[(&str, u64)]) -> Transaction {
    Transaction {
        txid: Txid::from_u64(n),
        timestamp: ts,
        block_height: n,
        tx_index: 0,
        size_bytes: 200,
        inputs: inputs
            .iter()
            .map(|&(t, v)| OutPoint::new(Txid::from_u64(t), v))
            .collect(),
        outputs: outs.iter().map(|(a, v)| TxOutput::new(*a, *v)).collect(),
    }
}

pub fn id(n: u64) -> Txid {
    Txid::from_u64(n)
}

/// One satoshi per entry, `true` = tainted.
pub fn bits(mark: Option<&TaintMark>, value: u64) -> Vec<bool> {
    let mut b = vec![false; value as usize];
    match mark {
        None => {}
        Some(TaintMark::Full) => b.fill(true),
        Some(TaintMark::Segments(s)) => {
            for &(lo, hi) in s.ranges() {
                b[lo as usize..hi as usize].fill(true);
            }
        }
        Some(other) => panic!("no satoshi positions in a {} mark", other.kind()),
    }
    b
}

/// Inputs laid end to end, outputs then fee take consecutive slices.
pub fn oracle_fifo(inputs: &[Vec<bool>], outputs: &[u64], fee: u64) -> (Vec<Vec<bool>>, u64) {
    let line: Vec<bool> = inputs.iter().flatten().copied().collect();
    assert_eq!(line.len() as u64, outputs.iter().sum::<u64>() + fee);
    let mut at = 0;
    let outs = outputs
        .iter()
        .map(|&v| {
            let s = line[at..at + v as usize].to_vec();
            at += v as usize;
            s
        })
        .collect();
    let fee_taint = line[at..].iter().filter(|&&b| b).count() as u64;
    (outs, fee_taint)
}

pub fn oracle_lifo(inputs: &[Vec<bool>], outputs: &[u64], fee: u64) -> (Vec<Vec<bool>>, u64) {
    let rev: Vec<Vec<bool>> = inputs.iter().rev().cloned().collect();
    oracle_fifo(&rev, outputs, fee)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Full,
    Fraction,
    Segments,
    Amount,
}

#[derive(Clone, Debug)]
pub struct RandomTx {
    pub inputs: Vec<(u64, Option<TaintMark>)>,
    pub outputs: Vec<u64>,
    pub fee: u64,
}

impl RandomTx {
    pub fn input_marks(&self) -> Vec<(u64, Option<&TaintMark>)> {
        self.inputs.iter().map(|(v, m)| (*v, m.as_ref())).collect()
    }

    pub fn reversed(&self) -> RandomTx {
        RandomTx {
            inputs: self.inputs.iter().rev().cloned().collect(),
            ..self.clone()
        }
    }
}

fn random_segments(rng: &mut ChaCha8Rng, value: u64) -> Option<Segments> {
    let k = rng.gen_range(1..=4) * 2;
    let mut cuts: Vec<u64> = (0..k).map(|_| rng.gen_range(0..=value)).collect();
    cuts.sort_unstable();
    let s = Segments::from_ranges(cuts.chunks(2).map(|c| (c[0], c[1])));
    (!s.is_empty()).then_some(s)
}

fn random_mark(rng: &mut ChaCha8Rng, value: u64, kinds: &[Kind]) -> Option<TaintMark> {
    if value == 0 || rng.gen_bool(0.35) {
        return None;
    }
    match *kinds.choose(rng).unwrap() {
        Kind::Full => Some(TaintMark::Full),
        Kind::Fraction => {
            let den = rng.gen_range(1..=1_000);
            Some(TaintMark::Fraction(ratio(rng.gen_range(1..=den), den)))
        }
        Kind::Segments => random_segments(rng, value).map(TaintMark::Segments),
        Kind::Amount => Some(TaintMark::Amount(rng.gen_range(1..=value))),
    }
}

/// Up to 8 inputs and 8 outputs, values up to `max_value`, random fee.
pub fn random_tx(seed: u64, max_value: u64, kinds: &[Kind]) -> RandomTx {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_in = rng.gen_range(1..=8);
    let inputs: Vec<(u64, Option<TaintMark>)> = (0..n_in)
        .map(|_| {
            let v = rng.gen_range(1..=max_value);
            (v, random_mark(&mut rng, v, kinds))
        })
        .collect();
    let total: u64 = inputs.iter().map(|(v, _)| v).sum();
    let fee = if rng.gen_bool(0.2) {
        0
    } else {
        rng.gen_range(0..=total / 4)
    };
    let n_out = rng.gen_range(1..=8usize);
    let mut cuts: Vec<u64> = (1..n_out).map(|_| rng.gen_range(0..=total - fee)).collect();
    cuts.push(0);
    cuts.push(total - fee);
    cuts.sort_unstable();
    let mut outputs: Vec<u64> = cuts.windows(2).map(|w| w[1] - w[0]).collect();
    outputs.shuffle(&mut rng);
    RandomTx { inputs, outputs, fee }
}

/// Random spend graph: a funding coinbase, a two-output theft, then `n`
/// transactions an hour apart spending random unspent outputs.
pub fn random_chain(seed: u64, n: usize, max_value: u64) -> (ChainView, TaintSeed) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let addr = |rng: &mut ChaCha8Rng| format!("a{}", rng.gen_range(0..25));
    let mut pool: Vec<(OutPoint, u64)> = Vec::new();
    let mut txs = Vec::new();

    let funding: Vec<TxOutput> = (0..12)
        .map(|_| TxOutput::new(addr(&mut rng), rng.gen_range(1..=max_value)))
        .collect();
    let theft: Vec<TxOutput> = (0..2)
        .map(|i| TxOutput::new(format!("thief{i}"), rng.gen_range(1..=max_value)))
        .collect();
    for (n, outputs) in [(1u64, funding), (2, theft)] {
        let t = Transaction {
            txid: id(n),
            timestamp: T0 - DAY,
            block_height: n,
            tx_index: 0,
            size_bytes: 150,
            inputs: vec![],
            outputs,
        };
        pool.extend(
            t.outputs
                .iter()
                .enumerate()
                .map(|(i, o)| (t.outpoint(i as u32), o.value)),
        );
        txs.push(t);
    }

    for k in 0..n {
        let n_in = rng.gen_range(1..=pool.len().min(4));
        let mut spent = Vec::new();
        for _ in 0..n_in {
            let i = rng.gen_range(0..pool.len());
            spent.push(pool.swap_remove(i));
        }
        let total: u64 = spent.iter().map(|(_, v)| v).sum();
        let n_out = rng.gen_range(1..=4u64).min(total);
        let fee = rng.gen_range(0..=(total - n_out) / 10);
        let mut cuts: Vec<u64> = (1..n_out).map(|_| rng.gen_range(1..total - fee)).collect();
        cuts.push(0);
        cuts.push(total - fee);
        cuts.sort_unstable();
        cuts.dedup();
        let outputs: Vec<TxOutput> = cuts
            .windows(2)
            .map(|w| TxOutput::new(addr(&mut rng), w[1] - w[0]))
            .collect();
        let t = Transaction {
            txid: id(100 + k as u64),
            timestamp: T0 + k as i64 * 3_600,
            block_height: 100 + k as u64,
            tx_index: 0,
            size_bytes: 100 + 40 * n_in as u32,
            inputs: spent.iter().map(|(op, _)| *op).collect(),
            outputs,
        };
        pool.extend(
            t.outputs
                .iter()
                .enumerate()
                .map(|(i, o)| (t.outpoint(i as u32), o.value)),
        );
        txs.push(t);
    }
    (ChainView::build(txs).unwrap(), TaintSeed::new(id(2)))
}

/// Per-satoshi replay of a whole chain from `seed` under FIFO or LIFO,
/// without service halting. Returns every output holding any taint.
pub fn chain_oracle(
    chain: &ChainView,
    seed: &TaintSeed,
    lifo: bool,
    window_days: u32,
) -> BTreeMap<OutPoint, Vec<bool>> {
    let seed_tx = chain.get(&seed.txid).unwrap();
    let seed_ops: Vec<OutPoint> = match &seed.vouts {
        Some(v) => v.iter().map(|&i| seed_tx.outpoint(i)).collect(),
        None => (0..seed_tx.outputs.len() as u32).map(|i| seed_tx.outpoint(i)).collect(),
    };
    let t0 = seed_ops
        .iter()
        .filter_map(|op| chain.spender(op))
        .map(|t| t.timestamp)
        .min()
        .unwrap_or(seed_tx.timestamp);
    let end = t0 + window_days as i64 * DAY;

    let mut tainted: HashMap<OutPoint, Vec<bool>> = HashMap::new();
    for op in seed_ops {
        let v = chain.output(&op).unwrap().value;
        if v > 0 {
            tainted.insert(op, vec![true; v as usize]);
        }
    }
    let mut order: Vec<&Transaction> = chain.transactions().iter().collect();
    order.sort_by_key(|t| (t.block_height, t.tx_index));
    for t in order {
        if t.timestamp < t0 || t.timestamp >= end || !t.inputs.iter().any(|op| tainted.contains_key(op)) {
            continue;
        }
        let ins: Vec<Vec<bool>> = t
            .inputs
            .iter()
            .map(|op| {
                tainted
                    .get(op)
                    .cloned()
                    .unwrap_or_else(|| vec![false; chain.output(op).unwrap().value as usize])
            })
            .collect();
        let values: Vec<u64> = t.outputs.iter().map(|o| o.value).collect();
        let fee = ins.iter().map(|b| b.len() as u64).sum::<u64>() - values.iter().sum::<u64>();
        let (outs, _) = if lifo {
            oracle_lifo(&ins, &values, fee)
        } else {
            oracle_fifo(&ins, &values, fee)
        };
        for (i, b) in outs.into_iter().enumerate() {
            if b.iter().any(|&x| x) {
                tainted.insert(t.outpoint(i as u32), b);
            }
        }
    }
    tainted.into_iter().collect()
}
