//! Small-message AllGather timelines: the loop-and-signal baseline and the
//! LL + multimem variant. Each rank owns an NVLink port, a NIC and a
//! communication block; wire flights are lanes that never contend.

use super::des::{Dag, TaskId, Timeline};
use super::CostParams;
use crate::instrument::PrimKind;

fn rank(node: usize, local: usize, lw: usize) -> usize {
    node * lw + local
}

/// Intra-node put + signal wait, then sequential inter-node puts each paying
/// an issue gap, a data flight and a separate signal flight, then a skewed
/// forwarding stage onto the node.
pub fn simulate_ag_baseline(p: &CostParams, n_nodes: usize, local_world: usize) -> Timeline {
    let (n, lw) = (n_nodes.max(1), local_world.max(1));
    let world = n * lw;
    let mut d = Dag::new();
    let nvlink: Vec<usize> = (0..world)
        .map(|r| d.resource(&format!("nvlink[{r}]"), r, true))
        .collect();
    let nic: Vec<usize> = (0..world)
        .map(|r| d.resource(&format!("nic[{r}]"), r, true))
        .collect();
    let comm: Vec<usize> = (0..world)
        .map(|r| d.resource(&format!("comm[{r}]"), r, true))
        .collect();
    let wire: Vec<usize> = (0..world)
        .map(|r| d.resource(&format!("wire[{r}]"), r, false))
        .collect();

    let put_local: Vec<TaskId> = (0..world)
        .map(|r| {
            d.add_kind(
                format!("put_local r{r}"),
                nvlink[r],
                p.nvlink_small_msg_us,
                &[],
                Some(PrimKind::PutSignal),
            )
        })
        .collect();
    if lw > 1 {
        for r in 0..world {
            let node = r / lw;
            let peers: Vec<TaskId> = (0..lw)
                .map(|l| rank(node, l, lw))
                .filter(|&q| q != r)
                .map(|q| put_local[q])
                .collect();
            d.add_kind(
                format!("wait_local_peers r{r}"),
                comm[r],
                p.signal_pair_cost_us,
                &peers,
                Some(PrimKind::Wait),
            );
        }
    }
    if n == 1 {
        return d.run();
    }

    // signal_flight[s][k]: arrival of sender s's k-th inter-node message.
    let mut signal_flight = vec![vec![0; n]; world];
    for s in 0..world {
        let (node, local) = (s / lw, s % lw);
        for k in 1..n {
            let dst = rank((node + k) % n, local, lw);
            let send = d.add_kind(
                format!("ib_put r{s}->r{dst}"),
                nic[s],
                p.nvlink_small_msg_us,
                &[],
                Some(PrimKind::PutSignalNbi),
            );
            let data = d.add(
                format!("ib_data r{s}->r{dst}"),
                wire[s],
                p.inter_small_msg_us,
                &[send],
            );
            signal_flight[s][k] = d.add(
                format!("ib_signal r{s}->r{dst}"),
                wire[s],
                p.inter_small_msg_us,
                &[data],
            );
        }
    }
    let mut forward = vec![0; world];
    for r in 0..world {
        let (node, local) = (r / lw, r % lw);
        let waits: Vec<TaskId> = (1..n)
            .map(|k| {
                let src = rank((node + n - k) % n, local, lw);
                d.add_kind(
                    format!("wait_remote r{r}<-r{src}"),
                    comm[r],
                    p.signal_pair_cost_us,
                    &[signal_flight[src][k]],
                    Some(PrimKind::Wait),
                )
            })
            .collect();
        let stage = ((n - 1) as f64 * p.nvlink_small_msg_us).max(p.skew_worst_us);
        forward[r] = d.add_kind(
            format!("forward r{r}"),
            nvlink[r],
            stage,
            &waits,
            Some(PrimKind::Put),
        );
    }
    if lw > 1 {
        for r in 0..world {
            let node = r / lw;
            let peers: Vec<TaskId> = (0..lw)
                .map(|l| rank(node, l, lw))
                .filter(|&q| q != r)
                .map(|q| forward[q])
                .collect();
            d.add_kind(
                format!("wait_forwarded r{r}"),
                comm[r],
                p.signal_pair_cost_us,
                &peers,
                Some(PrimKind::Wait),
            );
        }
    }
    d.run()
}

/// One block packs and sends LL slots to every peer node at once, then
/// multimem-broadcasts its own chunk. One block per remote node spins on
/// the incoming slots, re-broadcasts them with multimem and unpacks. Every
/// other block unpacks one chunk broadcast by a node peer.
pub fn simulate_ag_ll(p: &CostParams, n_nodes: usize, local_world: usize) -> Timeline {
    let (n, lw) = (n_nodes.max(1), local_world.max(1));
    let world = n * lw;
    let mut d = Dag::new();
    let own_blk: Vec<usize> = (0..world)
        .map(|r| d.resource(&format!("blk_own[{r}]"), r, true))
        .collect();
    let wire: Vec<usize> = (0..world)
        .map(|r| d.resource(&format!("wire[{r}]"), r, false))
        .collect();

    let pack: Vec<TaskId> = (0..world)
        .map(|r| {
            d.add_kind(
                format!("ll_pack r{r}"),
                own_blk[r],
                p.ll_step_us,
                &[],
                Some(PrimKind::LlPack),
            )
        })
        .collect();
    // flight[s][k]: LL slots of sender s reaching node (node_s + k).
    let mut flight = vec![vec![0; n]; world];
    for s in 0..world {
        let (node, local) = (s / lw, s % lw);
        for k in 1..n {
            let dst = rank((node + k) % n, local, lw);
            flight[s][k] = d.add_kind(
                format!("ll_put r{s}->r{dst}"),
                wire[s],
                p.inter_small_msg_us,
                &[pack[s]],
                Some(PrimKind::PutNbi),
            );
        }
    }
    // deliver[r][seg]: the multimem store that lands chunk `seg` on r's node.
    let mut deliver = vec![vec![None; world]; n];
    for r in 0..world {
        let mm = d.add_kind(
            format!("multimem_own r{r}"),
            own_blk[r],
            p.multimem_cost_us,
            &[pack[r]],
            Some(PrimKind::MultimemSt),
        );
        deliver[r / lw][r] = Some(mm);
    }
    for r in 0..world {
        let (node, local) = (r / lw, r % lw);
        for k in 1..n {
            let src_node = (node + n - k) % n;
            let src = rank(src_node, local, lw);
            let blk = d.resource(&format!("blk_fwd[{r}][{src_node}]"), r, true);
            let rp = d.add_kind(
                format!("recv_ll_pack r{r}<-r{src}"),
                blk,
                p.ll_step_us,
                &[flight[src][k]],
                Some(PrimKind::LlRecvPack),
            );
            let mm = d.add_kind(
                format!("multimem_fwd r{r} seg{src}"),
                blk,
                p.multimem_cost_us,
                &[rp],
                Some(PrimKind::MultimemSt),
            );
            d.add_kind(
                format!("recv_ll_unpack r{r} seg{src}"),
                blk,
                p.ll_step_us,
                &[mm],
                Some(PrimKind::LlRecvUnpack),
            );
            deliver[node][src] = Some(mm);
        }
    }
    for r in 0..world {
        let (node, local) = (r / lw, r % lw);
        for seg in 0..world {
            if seg % lw == local {
                continue;
            }
            let Some(mm) = deliver[node][seg] else {
                continue;
            };
            let blk = d.resource(&format!("blk_recv[{r}][{seg}]"), r, true);
            d.add_kind(
                format!("recv_ll_unpack r{r} seg{seg}"),
                blk,
                p.ll_step_us,
                &[mm],
                Some(PrimKind::LlRecvUnpack),
            );
        }
    }
    d.run()
}
