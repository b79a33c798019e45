use std::collections::BTreeSet;

use oneside::collectives::{allgather_push_intra, reducescatter_push_intra, AgBuffers, RsBuffers};
use oneside::elem::{from_bytes, to_bytes};
use oneside::{spmd, Opts, SchedulerMode, SignalOpKind, SyncStyle, World, WorldSpec};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn concurrent_atomic_adds_return_a_contiguous_ladder(
        lw in 1usize..8,
        v0 in any::<u64>(),
        d in 1u64..1000,
        seed in any::<u64>(),
        free in any::<bool>(),
    ) {
        let w = World::init(WorldSpec::new(1, lw).with_heap(1024)).unwrap();
        let s = w.alloc_signals(1).unwrap().at(0);
        w.pe(0).signal_op(0, s, SignalOpKind::Set, v0).unwrap();
        let mode = if free { SchedulerMode::Free } else { SchedulerMode::Random { seed } };
        let got = spmd(&w, mode, |pe| pe.atomic_add(0, s, d)).unwrap();
        let got: BTreeSet<u64> = got.into_iter().collect();
        let want: BTreeSet<u64> = (0..lw as u64).map(|i| v0.wrapping_add(i.wrapping_mul(d))).collect();
        prop_assert_eq!(got, want);
        prop_assert_eq!(w.signal_value(0, s), v0.wrapping_add(lw as u64 * d));
    }

    #[test]
    fn multimem_store_then_reduce_is_n_times_v(lw in 1usize..8, v in prop::collection::vec(-1000i64..1000, 1..8)) {
        let w = World::init(WorldSpec::new(2, lw).with_heap(4096)).unwrap();
        let h = w.alloc_symmetric(v.len() * 8, 8).unwrap();
        let bytes = to_bytes(&v);
        let sums = spmd(&w, SchedulerMode::Free, |pe| {
            if pe.ctx().my_pe() % lw == 0 {
                pe.multimem_st(h, &bytes, bytes.len())?;
            }
            pe.barrier_all()?;
            pe.multimem_ld_reduce::<i64>(h)
        })
        .unwrap();
        let want: Vec<i64> = v.iter().map(|x| x * lw as i64).collect();
        for s in sums {
            prop_assert_eq!(&s, &want);
        }
    }

    #[test]
    fn token_and_wait_until_formulations_agree(lw in 1usize..7, seed in any::<u64>(), chunk in 1usize..8) {
        let chunk = chunk * 4;
        let inputs: Vec<Vec<u8>> = (0..lw).map(|r| (0..chunk).map(|i| (seed as usize + r * 31 + i) as u8).collect()).collect();
        let rs_in: Vec<Vec<u8>> = (0..lw).map(|r| (0..lw * chunk).map(|i| (seed as usize ^ (r * 7 + i)) as u8).collect()).collect();
        let mut outs = Vec::new();
        for sync in [SyncStyle::WaitUntil, SyncStyle::Token] {
            let w = World::init(WorldSpec::new(1, lw).with_heap(1 << 14)).unwrap();
            let opts = Opts::default().with_mode(SchedulerMode::Random { seed }).with_sync(sync);
            let ag = allgather_push_intra(&w, AgBuffers::alloc(&w, chunk).unwrap(), &inputs, &opts).unwrap();
            let rs = reducescatter_push_intra::<i32>(&w, RsBuffers::alloc(&w, chunk).unwrap(), &rs_in, &opts).unwrap();
            outs.push((ag.outputs, rs.outputs));
        }
        prop_assert_eq!(&outs[0], &outs[1]);
    }
}

#[test]
fn signal_add_wraps_around() {
    let w = World::init(WorldSpec::new(1, 2).with_heap(1024)).unwrap();
    let s = w.alloc_signals(1).unwrap().at(0);
    let pe = w.pe(0);
    pe.signal_op(1, s, SignalOpKind::Set, u64::MAX).unwrap();
    pe.signal_op(1, s, SignalOpKind::Add, 2).unwrap();
    assert_eq!(w.signal_value(1, s), 1);
}

#[test]
fn signal_observer_sees_the_whole_payload() {
    for seed in 0..50 {
        let w = World::init(WorldSpec::new(1, 2).with_heap(1 << 12)).unwrap();
        let h = w.alloc_symmetric(512, 8).unwrap();
        let s = w.alloc_signals(1).unwrap().at(0);
        let payload: Vec<u64> = (0..64).map(|i| seed * 1000 + i).collect();
        let bytes = to_bytes(&payload);
        let got = spmd(&w, SchedulerMode::Random { seed }, |pe| {
            if pe.my_pe() == 0 {
                pe.putmem_signal(h, &bytes, bytes.len(), s, 1, SignalOpKind::Set, 1)?;
                Ok(Vec::new())
            } else {
                let t = pe.wait(s, 1)?;
                pe.consume_token(&t, from_bytes::<u64>(&pe.local(h)?.to_vec()))
            }
        })
        .unwrap();
        assert_eq!(got[1], payload, "seed {seed}");
    }
}
