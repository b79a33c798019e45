use std::collections::BTreeSet;

use oneside::{ag_order_fullmesh, ag_order_switch, rs_inter_order, TileSchedule};
use proptest::prelude::*;

fn visits_cover(s: &TileSchedule, chunks: usize) -> bool {
    let v: Vec<(usize, usize)> = s.visits();
    let set: BTreeSet<_> = v.iter().copied().collect();
    set.len() == v.len() && set.len() == chunks * s.subchunks
}

proptest! {
    #[test]
    fn switch_order_is_a_contention_free_permutation(w in 1usize..64) {
        let all: Vec<TileSchedule> = (0..w).map(|r| ag_order_switch(r, w)).collect();
        for s in &all {
            prop_assert!(visits_cover(s, w));
            prop_assert_eq!(s.chunk_order()[0], s.rank);
        }
        for k in 1..w {
            let targets: BTreeSet<usize> = all.iter().map(|s| s.steps[k].peers[0]).collect();
            prop_assert_eq!(targets.len(), w);
        }
        let starts: BTreeSet<usize> = all.iter().map(|s| s.chunk_order()[0]).collect();
        prop_assert_eq!(starts.len(), w);
    }

    #[test]
    fn fullmesh_order_saturates_every_link(w in 1usize..24, sub in 1usize..6, r in 0usize..24) {
        let r = r % w;
        let s = ag_order_fullmesh(r, w, sub).unwrap();
        prop_assert!(visits_cover(&s, w));
        prop_assert_eq!(&s.steps[0].chunks, &vec![r]);
        for st in &s.steps[1..] {
            let peers: BTreeSet<usize> = st.peers.iter().copied().collect();
            prop_assert_eq!(peers.len(), w - 1);
            prop_assert!(!peers.contains(&r));
        }
    }

    #[test]
    fn inter_order_ends_on_own_chunk(n in 1usize..6, lw in 1usize..10, r in 0usize..60) {
        let w = n * lw;
        let r = r % w;
        let s = rs_inter_order(r, n, lw);
        prop_assert!(visits_cover(&s, w));
        let order = s.chunk_order();
        prop_assert_eq!(*order.last().unwrap(), r);
        let node = r / lw;
        let own_block: Vec<usize> = order[w - lw..].to_vec();
        prop_assert!(own_block.iter().all(|c| c / lw == node));
    }
}

#[test]
fn zero_subchunks_are_rejected() {
    assert!(ag_order_fullmesh(0, 4, 0).is_err());
}
