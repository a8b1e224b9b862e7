mod common;

use common::Kind::*;
use common::*;
use proptest::prelude::*;
use taintflow::taint::{
    distribute_fifo, distribute_haircut, distribute_lifo, distribute_poison, distribute_tiho, mark_value, read_ledger,
    sum_sats, write_ledger, Sats,
};
use taintflow::{propagate, PropagationPolicy, Strategy, TaintMark};

fn input_taint(t: &RandomTx) -> Sats {
    sum_sats(t.inputs.iter().map(|(v, m)| mark_value(m.as_ref(), *v)))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn conserving_strategies_conserve(seed in any::<u64>()) {
        for (s, kinds) in [
            (Strategy::Haircut, &[Full, Fraction, Segments, Amount][..]),
            (Strategy::Fifo, &[Full, Segments][..]),
            (Strategy::Lifo, &[Full, Segments][..]),
            (Strategy::Tiho, &[Full, Fraction, Segments, Amount][..]),
        ] {
            let t = random_tx(seed, 1_000_000, kinds);
            let d = s.distribute(&t.input_marks(), &t.outputs, t.fee).unwrap();
            prop_assert_eq!(d.output_taint(&t.outputs) + &d.fee_taint, input_taint(&t));
        }
    }

    #[test]
    fn poison_is_all_or_nothing(seed in any::<u64>()) {
        let t = random_tx(seed, 10_000, &[Full, Fraction, Segments, Amount]);
        let d = distribute_poison(&t.input_marks(), &t.outputs, t.fee);
        let any = t.inputs.iter().any(|(_, m)| m.is_some());
        for (m, &v) in d.outputs.iter().zip(&t.outputs) {
            prop_assert_eq!(m.is_some(), any && v > 0);
        }
    }

    #[test]
    fn haircut_share_is_uniform(seed in any::<u64>()) {
        let t = random_tx(seed, 10_000, &[Full, Fraction, Segments, Amount]);
        let d = distribute_haircut(&t.input_marks(), &t.outputs, t.fee).unwrap();
        let total: u64 = t.inputs.iter().map(|(v, _)| v).sum();
        let share = input_taint(&t) / Sats::from(total);
        for (m, &v) in d.outputs.iter().zip(&t.outputs) {
            match m {
                Some(TaintMark::Fraction(f)) => prop_assert_eq!(f, &share),
                None => prop_assert!(v == 0 || share == Sats::ZERO),
                Some(other) => prop_assert!(false, "unexpected {:?}", other),
            }
        }
    }

    #[test]
    fn tiho_fills_highest_outputs_first(seed in any::<u64>()) {
        let t = random_tx(seed, 10_000, &[Full, Segments, Amount]);
        let d = distribute_tiho(&t.input_marks(), &t.outputs, t.fee).unwrap();
        let mut order: Vec<usize> = (0..t.outputs.len()).collect();
        order.sort_by(|&a, &b| t.outputs[b].cmp(&t.outputs[a]).then(a.cmp(&b)));
        let filled: Vec<u64> = order
            .iter()
            .map(|&i| match &d.outputs[i] {
                Some(TaintMark::Amount(a)) => *a,
                None => 0,
                Some(other) => panic!("unexpected {other:?}"),
            })
            .collect();
        // Full outputs, then at most one partial, then clean.
        let full = order.iter().zip(&filled).take_while(|(&i, &f)| f == t.outputs[i] && f > 0).count();
        prop_assert!(filled[full..].iter().skip(1).all(|&f| f == 0));

        let shuffled = t.reversed();
        let again = distribute_tiho(&shuffled.input_marks(), &shuffled.outputs, shuffled.fee).unwrap();
        prop_assert_eq!(again, d);
    }

    #[test]
    fn fifo_and_lifo_match_satoshi_oracle(seed in any::<u64>()) {
        let t = random_tx(seed, 500, &[Full, Segments]);
        let bits_in: Vec<Vec<bool>> = t.inputs.iter().map(|(v, m)| bits(m.as_ref(), *v)).collect();
        for lifo in [false, true] {
            let d = if lifo {
                distribute_lifo(&t.input_marks(), &t.outputs, t.fee).unwrap()
            } else {
                distribute_fifo(&t.input_marks(), &t.outputs, t.fee).unwrap()
            };
            let (want, fee) = if lifo { oracle_lifo(&bits_in, &t.outputs, t.fee) } else { oracle_fifo(&bits_in, &t.outputs, t.fee) };
            for (i, (m, &v)) in d.outputs.iter().zip(&t.outputs).enumerate() {
                prop_assert_eq!(&bits(m.as_ref(), v), &want[i]);
            }
            prop_assert_eq!(d.fee_taint, Sats::from(fee));
        }
    }

    #[test]
    fn lifo_is_fifo_over_reversed_inputs(seed in any::<u64>()) {
        let t = random_tx(seed, 1_000_000, &[Full, Segments]);
        let r = t.reversed();
        prop_assert_eq!(
            distribute_lifo(&t.input_marks(), &t.outputs, t.fee).unwrap(),
            distribute_fifo(&r.input_marks(), &r.outputs, r.fee).unwrap()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn chain_ledgers_conserve_and_round_trip(seed in any::<u64>()) {
        let (chain, theft) = random_chain(seed, 50, 5_000);
        let policy = PropagationPolicy::unhalted(15);
        let poison = propagate(&chain, &theft, Strategy::Poison, &policy).unwrap();
        for s in Strategy::ALL {
            let l = propagate(&chain, &theft, s, &policy).unwrap();
            if s.conserves_taint() {
                prop_assert!(l.is_conserved(&chain), "{} not conserved", s);
            }
            prop_assert!(l.tainted_txids.is_subset(&poison.tainted_txids));
            let mut buf = Vec::new();
            write_ledger(&l, &mut buf).unwrap();
            prop_assert_eq!(read_ledger(buf.as_slice()).unwrap(), l);
        }
    }

    #[test]
    fn chain_fifo_matches_satoshi_replay(seed in any::<u64>()) {
        let (chain, theft) = random_chain(seed, 50, 2_000);
        for (s, lifo) in [(Strategy::Fifo, false), (Strategy::Lifo, true)] {
            let l = propagate(&chain, &theft, s, &PropagationPolicy::unhalted(15)).unwrap();
            let oracle = chain_oracle(&chain, &theft, lifo, 15);
            prop_assert_eq!(l.marks.len(), oracle.len());
            for (op, b) in &oracle {
                prop_assert_eq!(&bits(l.marks.get(op), chain.output(op).unwrap().value), b);
            }
        }
    }
}
