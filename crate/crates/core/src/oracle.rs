//! Dense reference implementations every distributed path is checked against.

use crate::collectives::{ExpertRouting, Received};
use crate::elem::{add_assign_bytes, Elem};

/// Concatenation by rank.
pub fn gather(inputs: &[Vec<u8>]) -> Vec<u8> {
    inputs.concat()
}

/// Rank `k` gets the sum over ranks (ascending) of chunk `k` of each input.
pub fn reduce_scatter<T: Elem>(inputs: &[Vec<u8>]) -> Vec<Vec<u8>> {
    let w = inputs.len();
    if w == 0 {
        return Vec::new();
    }
    let chunk = inputs[0].len() / w;
    (0..w)
        .map(|k| {
            let mut acc = inputs[0][k * chunk..(k + 1) * chunk].to_vec();
            for inp in &inputs[1..] {
                add_assign_bytes::<T>(&mut acc, &inp[k * chunk..(k + 1) * chunk]);
            }
            acc
        })
        .collect()
}

/// Entries each rank should receive, ordered by (source, token, k).
pub fn routing_table(
    routing: &ExpertRouting,
    tokens: &[Vec<u8>],
    token_bytes: usize,
) -> Vec<Vec<Received>> {
    let w = routing.experts.len();
    let mut out = vec![Vec::new(); w];
    for (src, toks) in routing.experts.iter().enumerate() {
        for (t, ks) in toks.iter().enumerate() {
            for (k, &e) in ks.iter().enumerate() {
                out[routing.owner(e, w)].push(Received {
                    src,
                    token: t as u32,
                    k: k as u32,
                    expert: e,
                    data: tokens[src][t * token_bytes..(t + 1) * token_bytes].to_vec(),
                });
            }
        }
    }
    for v in &mut out {
        v.sort_by_key(|e| (e.src, e.token, e.k));
    }
    out
}

/// Per source rank, each token's expert outputs summed over k ascending.
pub fn combine<T: Elem>(
    routing: &ExpertRouting,
    tokens: &[Vec<u8>],
    token_bytes: usize,
    expert: impl Fn(u32, &[u8]) -> Vec<u8>,
) -> Vec<Vec<u8>> {
    routing
        .experts
        .iter()
        .enumerate()
        .map(|(src, toks)| {
            let mut out = vec![0u8; toks.len() * token_bytes];
            for (t, ks) in toks.iter().enumerate() {
                let x = &tokens[src][t * token_bytes..(t + 1) * token_bytes];
                for &e in ks {
                    add_assign_bytes::<T>(
                        &mut out[t * token_bytes..(t + 1) * token_bytes],
                        &expert(e, x),
                    );
                }
            }
            out
        })
        .collect()
}

/// Row-major `a[m×k] × b[k×n]`.
pub fn matmul<T: Elem>(a: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    assert_eq!(a.len(), m * k, "lhs is not {m}x{k}");
    assert_eq!(b.len(), k * n, "rhs is not {k}x{n}");
    let mut c = vec![T::default(); m * n];
    for i in 0..m {
        for p in 0..k {
            let x = a[i * k + p];
            for j in 0..n {
                c[i * n + j] = c[i * n + j].add(x.mul(b[p * n + j]));
            }
        }
    }
    c
}

/// Row-block `k` of the sum over ranks of `a[r] × b`.
pub fn gemm_reduce_scatter<T: Elem>(
    a: &[Vec<T>],
    b: &[T],
    m: usize,
    n: usize,
    k: usize,
) -> Vec<Vec<T>> {
    let w = a.len();
    let mut sum = vec![T::default(); m * n];
    for ar in a {
        for (s, v) in sum.iter_mut().zip(matmul(ar, b, m, n, k)) {
            *s = s.add(v);
        }
    }
    let rows = m / w.max(1);
    sum.chunks(rows * n).map(<[T]>::to_vec).collect()
}
