//! Fill-reducing symmetric orderings.
//!
//! A plain minimum-degree ordering on the explicit elimination graph. The
//! problems it sees have short time-coupled chains plus a few rows that touch
//! every time step (range epigraphs, balance rows), so degrees stay small once
//! the dense nodes are pulled out and ordered last.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::sparse::CscMatrix;

/// Symmetric adjacency (without self loops) of the pattern of `a`, reading
/// both triangles.
pub fn adjacency(a: &CscMatrix) -> Vec<Vec<usize>> {
    let n = a.ncols;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, j, _) in a.triplets() {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

/// Returns `perm` with `perm[k]` = original index eliminated at step k.
pub fn minimum_degree(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let dense_limit = 16usize.max((10.0 * (n as f64).sqrt()) as usize);
    let dense: Vec<bool> = adj.iter().map(|l| l.len() > dense_limit).collect();

    let mut graph: Vec<Vec<usize>> = adj
        .iter()
        .map(|l| l.iter().copied().filter(|&j| !dense[j]).collect())
        .collect();
    let mut alive: Vec<bool> = dense.iter().map(|d| !d).collect();
    let mut mark = vec![0usize; n];
    let mut stamp = 0usize;

    let mut heap = BinaryHeap::new();
    for (i, list) in graph.iter().enumerate() {
        if alive[i] {
            heap.push(Reverse((list.len(), i)));
        }
    }

    let mut perm = Vec::with_capacity(n);
    let mut nbrs = Vec::new();
    while let Some(Reverse((deg, v))) = heap.pop() {
        if !alive[v] || graph[v].len() != deg {
            continue;
        }
        alive[v] = false;
        perm.push(v);
        nbrs.clear();
        nbrs.extend(graph[v].iter().copied().filter(|&u| alive[u]));
        graph[v] = Vec::new();
        for &u in &nbrs {
            stamp += 1;
            mark[u] = stamp;
            let mut merged = Vec::with_capacity(graph[u].len() + nbrs.len());
            for &w in &graph[u] {
                if alive[w] && mark[w] != stamp {
                    mark[w] = stamp;
                    merged.push(w);
                }
            }
            for &w in &nbrs {
                if mark[w] != stamp {
                    mark[w] = stamp;
                    merged.push(w);
                }
            }
            graph[u] = merged;
            heap.push(Reverse((graph[u].len(), u)));
        }
    }
    perm.extend((0..n).filter(|&i| dense[i]));
    debug_assert_eq!(perm.len(), n);
    perm
}

/// Inverse of a permutation.
pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &i) in perm.iter().enumerate() {
        inv[i] = k;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn is_permutation(p: &[usize]) -> bool {
        let mut seen = vec![false; p.len()];
        p.iter().all(|&i| i < p.len() && !std::mem::replace(&mut seen[i], true))
    }

    #[test]
    fn star_center_goes_last() {
        // node 0 connected to every other node; leaves have degree 1
        let n = 6;
        let mut adj = vec![Vec::new(); n];
        for i in 1..n {
            adj[0].push(i);
            adj[i].push(0);
        }
        let perm = minimum_degree(&adj);
        assert!(is_permutation(&perm));
        // the centre only becomes cheap once a single leaf is left
        assert!(perm[n - 2..].contains(&0));
    }

    #[test]
    fn path_is_a_permutation() {
        let n = 50;
        let mut adj = vec![Vec::new(); n];
        for i in 0..n - 1 {
            adj[i].push(i + 1);
            adj[i + 1].push(i);
        }
        let perm = minimum_degree(&adj);
        assert!(is_permutation(&perm));
        let inv = invert(&perm);
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(inv[i], k);
        }
    }
}
