//! Taint propagation under the Poison, Haircut, FIFO, LIFO and TIHO rules.

mod distribute;
mod ledger_io;
mod mark;
mod propagate;

pub use distribute::{
    distribute_fifo, distribute_haircut, distribute_lifo, distribute_poison, distribute_tiho, DistributeError,
    Distribution, InputMark, Strategy, UnknownStrategy,
};
pub use ledger_io::{read_ledger, write_ledger, LedgerIoError, LEDGER_FORMAT};
pub use mark::{mark_value, ratio, round_half_even, sats, sum_sats, to_f64, Sats, Segments, TaintMark};
pub use propagate::{
    propagate, PropagationPolicy, ServiceSet, TaintError, TaintLedger, TaintSeed, Window, SECONDS_PER_DAY,
};
