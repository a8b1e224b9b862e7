//! Deterministic synthetic chains with scripted thief behaviour and exact
//! ground truth.
//!
//! Every output carries a run-length tape of satoshi labels (stolen or
//! clean). Transactions move satoshis according to a per-transaction truth
//! rule, so the location of every stolen satoshi is known exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chain::{ChainView, OutPoint, Transaction, TxOutput, Txid, SATS_PER_BTC};
use crate::par::Exec;
use crate::taint::{sats, sum_sats, to_f64, Sats, TaintLedger, TaintSeed, SECONDS_PER_DAY};

pub const TRUTH_FORMAT: &str = "taintflow-truth/1";
const BLOCK_SECONDS: i64 = 600;
const BLOCKS_PER_DAY: i64 = SECONDS_PER_DAY / BLOCK_SECONDS;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    SpecError(String),
    #[error("ledger and ground truth describe different chains: {0}")]
    ChainMismatch(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Behavior {
    /// Peel small payments off a shrinking stolen output.
    PeelChain,
    /// Split the loot across many fresh addresses, then spend them.
    FanOut,
    /// Mix stolen and clean inputs with stolen inputs listed first and the
    /// stolen destination first; stolen coins move first-in-first-out.
    FifoConsistent,
    /// Stolen inputs listed last; stolen coins move last-in-first-out.
    LifoConsistent,
    /// Stolen inputs listed last and the stolen destination is the largest
    /// output, placed first: defeats FIFO ordering.
    ReorderAdversarial,
}

impl Behavior {
    pub const ALL: [Behavior; 5] = [
        Behavior::PeelChain,
        Behavior::FanOut,
        Behavior::FifoConsistent,
        Behavior::LifoConsistent,
        Behavior::ReorderAdversarial,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Behavior::PeelChain => "peel-chain",
            Behavior::FanOut => "fan-out",
            Behavior::FifoConsistent => "fifo-consistent",
            Behavior::LifoConsistent => "lifo-consistent",
            Behavior::ReorderAdversarial => "reorder-adversarial",
        }
    }

    fn background_rule(self) -> TruthRule {
        match self {
            Behavior::LifoConsistent => TruthRule::Lifo,
            _ => TruthRule::Fifo,
        }
    }

    fn thief_rule(self) -> TruthRule {
        match self {
            Behavior::LifoConsistent => TruthRule::Lifo,
            Behavior::ReorderAdversarial => TruthRule::HighestOut,
            _ => TruthRule::Fifo,
        }
    }
}

impl FromStr for Behavior {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Behavior::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| SynthError::SpecError(format!("unknown behavior {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheftSpec {
    pub amount_sat: u64,
    /// Day (from scenario start) of the first distribution.
    pub distribution_day: u32,
    pub behavior: Behavior,
    /// Number of thief transactions after the theft.
    pub hops: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub rng_seed: u64,
    /// Background wallets.
    pub population: usize,
    pub duration_days: u32,
    /// Tainting window the scenario must accommodate.
    pub window_days: u32,
    pub txs_per_day: usize,
    pub theft: Option<TheftSpec>,
    pub service_count: usize,
    /// Relative sending rate of a service compared to a regular wallet.
    pub service_activity: u32,
    /// Probability that a background payment goes to a service.
    pub service_share: f64,
    /// Fee rate band in sat/byte, inclusive.
    pub fee_rate: (u64, u64),
    pub wallet_funding_sat: u64,
    pub fresh_address_prob: f64,
    pub start_time: i64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            rng_seed: 1,
            population: 300,
            duration_days: 20,
            window_days: 15,
            txs_per_day: 200,
            theft: Some(TheftSpec {
                amount_sat: 500 * SATS_PER_BTC,
                distribution_day: 2,
                behavior: Behavior::FanOut,
                hops: 40,
            }),
            service_count: 3,
            service_activity: 20,
            service_share: 0.2,
            fee_rate: (5, 50),
            wallet_funding_sat: 100 * SATS_PER_BTC,
            fresh_address_prob: 0.6,
            start_time: 1_600_000_000,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::SpecError(m.to_string()));
        if self.population < 2 {
            return bad("population must be at least 2");
        }
        if self.window_days == 0 || self.duration_days < self.window_days {
            return bad("duration must cover the window");
        }
        if self.fee_rate.0 > self.fee_rate.1 {
            return bad("fee rate band is inverted");
        }
        if self.wallet_funding_sat == 0 {
            return bad("wallet funding must be positive");
        }
        if !(0.0..=1.0).contains(&self.service_share) || !(0.0..=1.0).contains(&self.fresh_address_prob) {
            return bad("probabilities must lie in [0, 1]");
        }
        if let Some(t) = &self.theft {
            if t.amount_sat == 0 {
                return bad("theft amount must be positive");
            }
            if t.distribution_day == 0 || t.distribution_day + self.window_days > self.duration_days {
                return bad("distribution day must leave a full window before the end");
            }
        }
        Ok(())
    }
}

/// Satoshi labels of one output as runs of `(length, stolen)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct Tape(Vec<(u64, bool)>);

impl Tape {
    fn clean(len: u64) -> Self {
        let mut t = Tape::default();
        t.push(len, false);
        t
    }

    fn stolen(len: u64) -> Self {
        let mut t = Tape::default();
        t.push(len, true);
        t
    }

    fn push(&mut self, len: u64, stolen: bool) {
        if len == 0 {
            return;
        }
        match self.0.last_mut() {
            Some((l, s)) if *s == stolen => *l += len,
            _ => self.0.push((len, stolen)),
        }
    }

    fn append(&mut self, other: &Tape) {
        for &(l, s) in &other.0 {
            self.push(l, s);
        }
    }

    fn len(&self) -> u64 {
        self.0.iter().map(|r| r.0).sum()
    }

    fn stolen_count(&self) -> u64 {
        self.0.iter().filter(|r| r.1).map(|r| r.0).sum()
    }

    /// Removes and returns the first `n` satoshis.
    fn take_front(&mut self, mut n: u64) -> Tape {
        let mut out = Tape::default();
        let mut i = 0;
        while n > 0 && i < self.0.len() {
            let (l, s) = self.0[i];
            if l <= n {
                out.push(l, s);
                n -= l;
                i += 1;
            } else {
                out.push(n, s);
                self.0[i].0 -= n;
                n = 0;
            }
        }
        self.0.drain(..i);
        out
    }

    fn stolen_ranges(&self) -> Vec<(u64, u64)> {
        let mut pos = 0;
        let mut out = Vec::new();
        for &(l, s) in &self.0 {
            if s {
                out.push((pos, pos + l));
            }
            pos += l;
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TruthRule {
    Fifo,
    Lifo,
    HighestOut,
}

/// Moves input tapes to outputs; returns output tapes and the fee tape.
fn route(rule: TruthRule, inputs: &[&Tape], outputs: &[u64]) -> (Vec<Tape>, Tape) {
    match rule {
        TruthRule::Fifo | TruthRule::Lifo => {
            let mut line = Tape::default();
            if rule == TruthRule::Fifo {
                inputs.iter().for_each(|t| line.append(t));
            } else {
                inputs.iter().rev().for_each(|t| line.append(t));
            }
            let outs = outputs.iter().map(|&v| line.take_front(v)).collect();
            (outs, line)
        }
        TruthRule::HighestOut => {
            let total: u64 = inputs.iter().map(|t| t.len()).sum();
            let mut stolen: u64 = inputs.iter().map(|t| t.stolen_count()).sum();
            let mut order: Vec<usize> = (0..outputs.len()).collect();
            order.sort_by(|&a, &b| outputs[b].cmp(&outputs[a]).then(a.cmp(&b)));
            let mut outs = vec![Tape::default(); outputs.len()];
            for i in order {
                let k = stolen.min(outputs[i]);
                stolen -= k;
                outs[i].push(k, true);
                outs[i].push(outputs[i] - k, false);
            }
            let fee = total - outputs.iter().sum::<u64>();
            let mut fee_tape = Tape::default();
            fee_tape.push(stolen, true);
            fee_tape.push(fee - stolen, false);
            (outs, fee_tape)
        }
    }
}

/// Exact location of stolen satoshis.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub theft_txid: Option<Txid>,
    pub amount_sat: u64,
    /// Stolen satoshi positions of every output holding any.
    pub stolen: BTreeMap<OutPoint, Vec<(u64, u64)>>,
    pub fee_stolen_sat: u64,
    pub thief_addresses: BTreeSet<String>,
}

impl GroundTruth {
    pub fn stolen_sat(&self, op: &OutPoint) -> u64 {
        self.stolen.get(op).map_or(0, |r| r.iter().map(|(a, b)| b - a).sum())
    }

    /// Seed for tracking the theft, if there is one.
    pub fn seed(&self) -> Option<TaintSeed> {
        self.theft_txid.map(TaintSeed::new)
    }

    /// Stolen satoshis on unspent outputs plus stolen fees; equals the
    /// theft amount.
    pub fn accounted(&self, chain: &ChainView) -> u64 {
        let unspent: u64 = self
            .stolen
            .keys()
            .filter(|op| chain.spender(op).is_none())
            .map(|op| self.stolen_sat(op))
            .sum();
        unspent + self.fee_stolen_sat
    }
}

struct Utxo {
    op: OutPoint,
    value: u64,
    tape: Tape,
}

struct Wallet {
    name: String,
    addresses: Vec<String>,
    utxos: Vec<Utxo>,
}

impl Wallet {
    fn new(name: String) -> Self {
        Wallet {
            name,
            addresses: Vec::new(),
            utxos: Vec::new(),
        }
    }

    fn address(&mut self, rng: &mut ChaCha8Rng, fresh_prob: f64) -> String {
        if self.addresses.is_empty() || rng.gen_bool(fresh_prob) {
            let a = format!("{}-{}", self.name, self.addresses.len());
            self.addresses.push(a.clone());
            a
        } else {
            self.addresses[rng.gen_range(0..self.addresses.len())].clone()
        }
    }

    fn fresh_address(&mut self) -> String {
        let a = format!("{}-{}", self.name, self.addresses.len());
        self.addresses.push(a.clone());
        a
    }
}

fn tx_size(n_in: usize, n_out: usize) -> u32 {
    (10 + 148 * n_in + 34 * n_out) as u32
}

fn make_txid(height: u64, index: u32, inputs: &[OutPoint], outputs: &[TxOutput]) -> Txid {
    let mut h = Sha256::new();
    h.update(height.to_le_bytes());
    h.update(index.to_le_bytes());
    for op in inputs {
        h.update(op.txid.0);
        h.update(op.vout.to_le_bytes());
    }
    for o in outputs {
        h.update(o.address.as_bytes());
        h.update(o.value.to_le_bytes());
    }
    Txid(h.finalize().into())
}

const THIEF: usize = usize::MAX;

struct Generator {
    spec: ScenarioSpec,
    rng: ChaCha8Rng,
    wallets: Vec<Wallet>,
    thief: Wallet,
    txs: Vec<Transaction>,
    truth: GroundTruth,
    height: u64,
    index: u32,
}

impl Generator {
    fn time(&self) -> i64 {
        self.spec.start_time + self.height as i64 * BLOCK_SECONDS
    }

    fn wallet_mut(&mut self, w: usize) -> &mut Wallet {
        if w == THIEF {
            &mut self.thief
        } else {
            &mut self.wallets[w]
        }
    }

    /// Appends a transaction, spending `spent` and paying `outputs` to
    /// `(wallet, address, value)`.
    fn emit(&mut self, spent: Vec<Utxo>, outputs: Vec<(usize, String, u64)>, rule: TruthRule) -> Txid {
        let inputs: Vec<OutPoint> = spent.iter().map(|u| u.op).collect();
        let outs: Vec<TxOutput> = outputs.iter().map(|(_, a, v)| TxOutput::new(a.clone(), *v)).collect();
        let txid = make_txid(self.height, self.index, &inputs, &outs);
        let values: Vec<u64> = outputs.iter().map(|o| o.2).collect();
        let tapes: Vec<&Tape> = spent.iter().map(|u| &u.tape).collect();
        let (out_tapes, fee_tape) = if spent.is_empty() {
            (values.iter().map(|&v| Tape::clean(v)).collect(), Tape::default())
        } else {
            route(rule, &tapes, &values)
        };
        self.truth.fee_stolen_sat += fee_tape.stolen_count();

        let size_bytes = tx_size(inputs.len(), outs.len());
        self.txs.push(Transaction {
            txid,
            timestamp: self.time(),
            block_height: self.height,
            tx_index: self.index,
            size_bytes,
            inputs,
            outputs: outs,
        });
        self.index += 1;

        for (vout, ((w, address, value), tape)) in outputs.into_iter().zip(out_tapes).enumerate() {
            let op = OutPoint::new(txid, vout as u32);
            if tape.stolen_count() > 0 {
                self.truth.stolen.insert(op, tape.stolen_ranges());
            }
            if w == THIEF {
                self.truth.thief_addresses.insert(address);
            }
            if value > 0 {
                self.wallet_mut(w).utxos.push(Utxo { op, value, tape });
            }
        }
        txid
    }

    fn fee_for(&mut self, n_in: usize, n_out: usize) -> u64 {
        let (lo, hi) = self.spec.fee_rate;
        tx_size(n_in, n_out) as u64 * self.rng.gen_range(lo..=hi)
    }

    fn pick_recipient(&mut self, exclude: usize) -> usize {
        let services = self.spec.service_count;
        let n = self.wallets.len();
        if services > 0 && self.rng.gen_bool(self.spec.service_share) {
            return n - services + self.rng.gen_range(0..services);
        }
        loop {
            let w = self.rng.gen_range(0..n - services.min(n - 1));
            if w != exclude || n - services <= 1 {
                return w;
            }
        }
    }

    fn background_tx(&mut self, sender: usize, rule: TruthRule) {
        let fresh = self.spec.fresh_address_prob;
        let wallet = &mut self.wallets[sender];
        if wallet.utxos.is_empty() {
            return;
        }
        let n_in = self.rng.gen_range(1..=wallet.utxos.len().min(3));
        let mut spent = Vec::with_capacity(n_in);
        for _ in 0..n_in {
            let i = self.rng.gen_range(0..wallet.utxos.len());
            spent.push(wallet.utxos.swap_remove(i));
        }
        spent.sort_by_key(|u| u.op);
        spent.shuffle(&mut self.rng);
        let total: u64 = spent.iter().map(|u| u.value).sum();
        let n_pay = self.rng.gen_range(1..=2);
        let fee = self.fee_for(n_in, n_pay + 1);
        if total <= fee + 2 * n_pay as u64 {
            // Too small to move: put the coins back.
            self.wallets[sender].utxos.extend(spent);
            return;
        }
        let mut spendable = total - fee;
        let mut outputs = Vec::with_capacity(n_pay + 1);
        for _ in 0..n_pay {
            let share = self.rng.gen_range(0.05..0.6);
            let amount = ((spendable as f64 * share) as u64).max(1);
            spendable -= amount;
            let to = self.pick_recipient(sender);
            let addr = self.wallets[to].address(&mut self.rng, fresh);
            outputs.push((to, addr, amount));
        }
        if spendable > 0 {
            let addr = self.wallets[sender].address(&mut self.rng, fresh);
            outputs.push((sender, addr, spendable));
        }
        outputs.shuffle(&mut self.rng);
        self.emit(spent, outputs, rule);
    }

    fn take_thief_stolen(&mut self, largest: bool) -> Option<Utxo> {
        let stolen: Vec<usize> = (0..self.thief.utxos.len())
            .filter(|&i| self.thief.utxos[i].tape.stolen_count() > 0)
            .collect();
        let i = if largest {
            *stolen
                .iter()
                .max_by_key(|&&i| (self.thief.utxos[i].value, std::cmp::Reverse(i)))?
        } else {
            *stolen.get(self.rng.gen_range(0..stolen.len().max(1)))?
        };
        Some(self.thief.utxos.swap_remove(i))
    }

    fn take_thief_clean(&mut self, below: u64) -> Option<Utxo> {
        let i = (0..self.thief.utxos.len())
            .filter(|&i| {
                let u = &self.thief.utxos[i];
                u.tape.stolen_count() == 0 && u.value < below
            })
            .max_by_key(|&i| (self.thief.utxos[i].value, std::cmp::Reverse(i)))?;
        Some(self.thief.utxos.swap_remove(i))
    }

    fn thief_step(&mut self, behavior: Behavior, step: usize) {
        let rule = behavior.thief_rule();
        let cash_out = step % 3 == 2;
        let Some(stolen) = self.take_thief_stolen(!cash_out) else {
            return;
        };
        // Every third step cashes a stolen output out to a service or wallet.
        if cash_out {
            let fee = self.fee_for(1, 1);
            if stolen.value > fee {
                let to = self.pick_recipient(usize::MAX - 1);
                let addr = self.wallets[to].address(&mut self.rng, self.spec.fresh_address_prob);
                let value = stolen.value - fee;
                self.emit(vec![stolen], vec![(to, addr, value)], rule);
            } else {
                self.thief.utxos.push(stolen);
            }
            return;
        }
        match behavior {
            Behavior::PeelChain => {
                let fee = self.fee_for(1, 2);
                if stolen.value <= fee + 100 {
                    self.thief.utxos.push(stolen);
                    return;
                }
                let peel = ((stolen.value - fee) as f64 * self.rng.gen_range(0.02..0.08)) as u64;
                let rest = stolen.value - fee - peel;
                let to = self.pick_recipient(usize::MAX - 1);
                let addr = self.wallets[to].address(&mut self.rng, self.spec.fresh_address_prob);
                let keep = self.thief.fresh_address();
                self.emit(vec![stolen], vec![(THIEF, keep, rest), (to, addr, peel)], rule);
            }
            Behavior::FanOut => {
                let k = if step == 0 { self.rng.gen_range(5..=10) } else { 2 };
                let fee = self.fee_for(1, k);
                if stolen.value <= fee + k as u64 * 100 {
                    self.thief.utxos.push(stolen);
                    return;
                }
                let each = (stolen.value - fee) / k as u64;
                let mut outs: Vec<(usize, String, u64)> =
                    (0..k).map(|_| (THIEF, self.thief.fresh_address(), each)).collect();
                outs[0].2 += stolen.value - fee - each * k as u64;
                self.emit(vec![stolen], outs, rule);
            }
            Behavior::FifoConsistent | Behavior::LifoConsistent | Behavior::ReorderAdversarial => {
                let Some(clean) = self.take_thief_clean(stolen.value) else {
                    self.fresh_clean_for_thief(stolen.value / 3);
                    self.thief.utxos.push(stolen);
                    return;
                };
                let fee = self.fee_for(2, 3);
                if clean.value <= fee + 1 || stolen.value < 2 {
                    self.thief.utxos.push(stolen);
                    return;
                }
                // The loot is split in two; the larger part leads.
                let part = (stolen.value as f64 * self.rng.gen_range(0.5..0.9)) as u64;
                let dest = (THIEF, self.thief.fresh_address(), part);
                let rest = (THIEF, self.thief.fresh_address(), stolen.value - part);
                let change = (THIEF, self.thief.fresh_address(), clean.value - fee);
                let (inputs, outputs) = match behavior {
                    Behavior::FifoConsistent => (vec![stolen, clean], vec![dest, rest, change]),
                    _ => (vec![clean, stolen], vec![dest, rest, change]),
                };
                self.emit(inputs, outputs, rule);
            }
        }
    }

    /// Thief buys clean coins from a random wallet.
    fn fresh_clean_for_thief(&mut self, want: u64) {
        let n = self.wallets.len() - self.spec.service_count;
        let from = self.rng.gen_range(0..n);
        let Some(i) = (0..self.wallets[from].utxos.len())
            .filter(|&i| {
                self.wallets[from].utxos[i].value > want.max(1) && self.wallets[from].utxos[i].tape.stolen_count() == 0
            })
            .min_by_key(|&i| self.wallets[from].utxos[i].value)
        else {
            return;
        };
        let u = self.wallets[from].utxos.swap_remove(i);
        let fee = self.fee_for(1, 2);
        if u.value <= want + fee {
            self.wallets[from].utxos.push(u);
            return;
        }
        let change = u.value - want - fee;
        let to_thief = self.thief.fresh_address();
        let back = self.wallets[from].address(&mut self.rng, self.spec.fresh_address_prob);
        let rule = self
            .spec
            .theft
            .as_ref()
            .map_or(TruthRule::Fifo, |t| t.behavior.background_rule());
        self.emit(u_vec(u), vec![(THIEF, to_thief, want), (from, back, change)], rule);
    }
}

fn u_vec(u: Utxo) -> Vec<Utxo> {
    vec![u]
}

/// Generates a chain and its ground truth. Deterministic in `rng_seed`.
pub fn generate(spec: &ScenarioSpec) -> Result<(ChainView, GroundTruth), SynthError> {
    spec.validate()?;
    let mut wallets: Vec<Wallet> = (0..spec.population).map(|i| Wallet::new(format!("w{i:04}"))).collect();
    wallets.extend((0..spec.service_count).map(|i| Wallet::new(format!("svc{i:02}"))));
    let mut g = Generator {
        spec: spec.clone(),
        rng: ChaCha8Rng::seed_from_u64(spec.rng_seed),
        wallets,
        thief: Wallet::new("thief".into()),
        txs: Vec::new(),
        truth: GroundTruth::default(),
        height: 0,
        index: 0,
    };

    // Genesis funding: two outputs per wallet, services funded ten times
    // over, thief holds a few clean coins, victim holds the loot plus fee.
    let n_wallets = g.wallets.len();
    let mut funding = Vec::new();
    for w in 0..n_wallets {
        let scale = if w >= spec.population { 10 } else { 1 };
        for _ in 0..2 {
            let a = g.wallets[w].fresh_address();
            funding.push((w, a, spec.wallet_funding_sat * scale));
        }
    }
    let theft_fee = 10_000;
    let mut victim = Wallet::new("victim".into());
    if let Some(t) = &spec.theft {
        for _ in 0..3 {
            let a = g.thief.fresh_address();
            funding.push((THIEF, a, t.amount_sat / 4 + 1));
        }
        victim.utxos.clear();
        funding.push((usize::MAX - 2, "victim-0".to_string(), t.amount_sat + theft_fee));
    }
    // Victim output is handled separately below.
    let victim_slot = funding.iter().position(|f| f.0 == usize::MAX - 2);
    let genesis_outputs: Vec<(usize, String, u64)> = funding
        .iter()
        .map(|(w, a, v)| (if *w == usize::MAX - 2 { 0 } else { *w }, a.clone(), *v))
        .collect();
    let genesis = g.emit(Vec::new(), genesis_outputs, TruthRule::Fifo);
    if let Some(slot) = victim_slot {
        // The victim output went to wallet 0 by the placeholder above; move it.
        let op = OutPoint::new(genesis, slot as u32);
        if let Some(i) = g.wallets[0].utxos.iter().position(|u| u.op == op) {
            victim.utxos.push(g.wallets[0].utxos.swap_remove(i));
        }
    }

    let theft = spec.theft.clone();
    let background_rule = theft.as_ref().map_or(TruthRule::Fifo, |t| t.behavior.background_rule());
    let mut weights: Vec<u32> = vec![1; spec.population];
    weights.extend(std::iter::repeat_n(spec.service_activity.max(1), spec.service_count));
    let sender_dist = WeightedIndex::new(&weights).map_err(|e| SynthError::SpecError(e.to_string()))?;

    // Thief schedule: theft one day before distribution, then hops spread
    // over 90% of the window.
    let mut thief_blocks: Vec<u64> = Vec::new();
    let mut theft_block = None;
    if let Some(t) = &theft {
        let dist_block = t.distribution_day as u64 * BLOCKS_PER_DAY as u64;
        theft_block = Some(dist_block - BLOCKS_PER_DAY as u64 / 2);
        let span = (spec.window_days as u64 * BLOCKS_PER_DAY as u64 * 9) / 10;
        for i in 0..t.hops {
            thief_blocks.push(dist_block + (i as u64 * span) / t.hops.max(1) as u64);
        }
    }

    let total_blocks = spec.duration_days as u64 * BLOCKS_PER_DAY as u64;
    let per_block = spec.txs_per_day as f64 / BLOCKS_PER_DAY as f64;
    let mut step = 0;
    for height in 1..total_blocks {
        g.height = height;
        g.index = 0;
        if theft_block == Some(height) {
            let t = theft.as_ref().expect("theft scheduled");
            let loot = victim.utxos.pop().expect("victim funded");
            let addr = g.thief.fresh_address();
            let txid = g.emit_theft(loot, addr, t.amount_sat);
            g.truth.theft_txid = Some(txid);
            g.truth.amount_sat = t.amount_sat;
        }
        while step < thief_blocks.len() && thief_blocks[step] == height {
            let behavior = theft.as_ref().expect("theft scheduled").behavior;
            g.thief_step(behavior, step);
            step += 1;
        }
        let mut n = per_block.floor() as usize;
        if g.rng.gen_bool(per_block.fract()) {
            n += 1;
        }
        for _ in 0..n {
            let sender = sender_dist.sample(&mut g.rng);
            g.background_tx(sender, background_rule);
        }
    }

    let Generator { txs, truth, .. } = g;
    let chain = ChainView::build(txs).map_err(|e| SynthError::SpecError(e.to_string()))?;
    Ok((chain, truth))
}

impl Generator {
    fn emit_theft(&mut self, loot: Utxo, address: String, amount: u64) -> Txid {
        // The stolen amount leads the victim's coin; the fee is the victim's own.
        let mut tape = Tape::stolen(amount);
        tape.push(loot.value - amount, false);
        let loot = Utxo { tape, ..loot };
        self.emit(vec![loot], vec![(THIEF, address, amount)], TruthRule::Fifo)
    }
}

/// Satoshi- and address-level tracking accuracy of a ledger.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Score {
    pub sat_recall: f64,
    pub sat_precision: f64,
    pub addr_recall: f64,
    pub addr_precision: f64,
    pub stolen_sat: f64,
    pub tainted_sat: f64,
    pub overlap_sat: f64,
}

/// Compares ledger taint with ground truth over outputs created before the
/// ledger's window end. Per output, the overlap is the smaller of taint and
/// stolen content.
pub fn score(chain: &ChainView, ledger: &TaintLedger, truth: &GroundTruth) -> Result<Score, SynthError> {
    if truth.theft_txid.is_some_and(|t| t != ledger.seed.txid) {
        return Err(SynthError::ChainMismatch(
            "ledger seed is not the theft transaction".into(),
        ));
    }
    if let Some(op) = ledger.marks.keys().find(|op| chain.output(op).is_none()) {
        return Err(SynthError::ChainMismatch(format!("marked output {op} not in chain")));
    }
    let end = ledger.window_end();
    let in_window = |op: &OutPoint| {
        chain
            .get(&op.txid)
            .is_some_and(|t| t.timestamp < end || t.txid == ledger.seed.txid)
    };

    let mut stolen = 0u64;
    let mut overlap = Sats::ZERO;
    for op in truth.stolen.keys().filter(|op| in_window(op)) {
        let s = truth.stolen_sat(op);
        stolen += s;
        let t = ledger.mark_value(chain, op);
        overlap += if t < sats(s) { t } else { sats(s) };
    }
    let tainted = sum_sats(ledger.marks.keys().map(|op| ledger.mark_value(chain, op)));

    let ratio = |num: &Sats, den: &Sats| if den.is_zero() { 1.0 } else { to_f64(&(num / den)) };
    let hits = ledger.tainted_addresses.intersection(&truth.thief_addresses).count();
    let frac = |n: usize, d: usize| if d == 0 { 1.0 } else { n as f64 / d as f64 };
    Ok(Score {
        sat_recall: ratio(&overlap, &sats(stolen)),
        sat_precision: ratio(&overlap, &tainted),
        addr_recall: frac(hits, truth.thief_addresses.len()),
        addr_precision: frac(hits, ledger.tainted_addresses.len()),
        stolen_sat: stolen as f64,
        tainted_sat: to_f64(&tainted),
        overlap_sat: to_f64(&overlap),
    })
}

/// Scores several ledgers against the same truth.
pub fn score_all(
    chain: &ChainView,
    ledgers: &[TaintLedger],
    truth: &GroundTruth,
    exec: Exec,
) -> Result<Vec<Score>, SynthError> {
    exec.try_map(ledgers, |l| score(chain, l, truth))
}

#[derive(Serialize, Deserialize)]
struct TruthHeader {
    theft_txid: Option<Txid>,
    amount_sat: u64,
    fee_stolen_sat: u64,
    thief_addresses: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TruthLine {
    txid: Txid,
    vout: u32,
    stolen_sat: u64,
    segments: Vec<(u64, u64)>,
}

/// Writes the `taintflow-truth/1` sidecar.
pub fn write_truth<W: Write>(truth: &GroundTruth, mut out: W) -> io::Result<()> {
    writeln!(out, "{TRUTH_FORMAT}")?;
    let header = TruthHeader {
        theft_txid: truth.theft_txid,
        amount_sat: truth.amount_sat,
        fee_stolen_sat: truth.fee_stolen_sat,
        thief_addresses: truth.thief_addresses.iter().cloned().collect(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for (op, segs) in &truth.stolen {
        let line = TruthLine {
            txid: op.txid,
            vout: op.vout,
            stolen_sat: truth.stolen_sat(op),
            segments: segs.clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_truth<R: BufRead>(input: R) -> io::Result<GroundTruth> {
    let bad = |m: String| io::Error::new(io::ErrorKind::InvalidData, m);
    let mut lines = input.lines();
    match lines.next().transpose()? {
        Some(v) if v.trim() == TRUTH_FORMAT => {}
        other => return Err(bad(format!("expected {TRUTH_FORMAT:?}, found {other:?}"))),
    }
    let header: TruthHeader = serde_json::from_str(&lines.next().transpose()?.unwrap_or_default())?;
    let mut truth = GroundTruth {
        theft_txid: header.theft_txid,
        amount_sat: header.amount_sat,
        fee_stolen_sat: header.fee_stolen_sat,
        thief_addresses: header.thief_addresses.into_iter().collect(),
        stolen: BTreeMap::new(),
    };
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let l: TruthLine = serde_json::from_str(&line)?;
        truth.stolen.insert(OutPoint::new(l.txid, l.vout), l.segments);
    }
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tape_take_front_splits_runs() {
        let mut t = Tape::clean(3);
        t.append(&Tape::stolen(4));
        t.push(2, false);
        let head = t.take_front(5);
        assert_eq!(head.0, vec![(3, false), (2, true)]);
        assert_eq!(t.0, vec![(2, true), (2, false)]);
        assert_eq!(head.stolen_ranges(), vec![(3, 5)]);
    }

    #[test]
    fn route_rules() {
        let clean = Tape::clean(7);
        let dirty = Tape::stolen(3);
        let (outs, fee) = route(TruthRule::Fifo, &[&clean, &dirty], &[9, 1]);
        assert_eq!(outs[0].stolen_count(), 2);
        assert_eq!(outs[1].stolen_count(), 1);
        assert_eq!(fee.len(), 0);
        let (outs, _) = route(TruthRule::Lifo, &[&clean, &dirty], &[9, 1]);
        assert_eq!((outs[0].stolen_count(), outs[1].stolen_count()), (3, 0));
        let (outs, fee) = route(TruthRule::HighestOut, &[&clean, &dirty], &[2, 6, 1]);
        assert_eq!(outs.iter().map(Tape::stolen_count).collect::<Vec<_>>(), vec![0, 3, 0]);
        assert_eq!(fee.len(), 1);
    }

    #[test]
    fn spec_validation() {
        let spec = ScenarioSpec {
            duration_days: 10,
            ..ScenarioSpec::default()
        };
        assert!(generate(&spec).is_err());
        let mut spec = ScenarioSpec::default();
        spec.theft.as_mut().unwrap().amount_sat = 0;
        assert!(matches!(generate(&spec), Err(SynthError::SpecError(_))));
        assert!("zigzag".parse::<Behavior>().is_err());
        assert_eq!("fan-out".parse::<Behavior>(), Ok(Behavior::FanOut));
    }

    #[test]
    fn small_scenario_is_valid_and_accounted() {
        for behavior in Behavior::ALL {
            let spec = ScenarioSpec {
                population: 12,
                txs_per_day: 60,
                theft: Some(TheftSpec {
                    amount_sat: 300 * SATS_PER_BTC,
                    distribution_day: 2,
                    behavior,
                    hops: 20,
                }),
                ..Default::default()
            };
            let (chain, truth) = generate(&spec).unwrap();
            assert!(chain.validate().is_empty(), "{behavior:?}");
            assert_eq!(truth.accounted(&chain), truth.amount_sat, "{behavior:?}");
            assert!(truth.theft_txid.is_some());
        }
    }

    #[test]
    fn truth_sidecar_round_trip() {
        let spec = ScenarioSpec {
            population: 8,
            txs_per_day: 30,
            ..Default::default()
        };
        let (_, truth) = generate(&spec).unwrap();
        let mut buf = Vec::new();
        write_truth(&truth, &mut buf).unwrap();
        assert_eq!(read_truth(buf.as_slice()).unwrap(), truth);
    }
}
