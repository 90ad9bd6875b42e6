use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::CscMatrix;

/// Fill-reducing ordering by minimum degree on the explicit elimination graph.
///
/// `pattern` must be structurally symmetric. Rows whose degree exceeds
/// `max(16, 10·√n)` (fixed-effect columns touching every observation, spline
/// coefficients) are held back and ordered last. Ties are broken by the
/// smallest index so the ordering is deterministic.
///
/// Returns `perm` with `perm[new] = old`.
pub fn minimum_degree(pattern: &CscMatrix) -> Vec<usize> {
    let n = pattern.ncols();
    assert_eq!(pattern.nrows(), n, "ordering needs a square pattern");
    let dense_threshold = ((10.0 * (n as f64).sqrt()) as usize).max(16);

    let mut dense = vec![false; n];
    for (j, flag) in dense.iter_mut().enumerate() {
        let (rows, _) = pattern.col(j);
        let degree = rows.iter().filter(|&&i| i != j).count();
        *flag = degree > dense_threshold;
    }

    let mut adj: Vec<Vec<usize>> = (0..n)
        .map(|j| {
            if dense[j] {
                return Vec::new();
            }
            let (rows, _) = pattern.col(j);
            rows.iter().copied().filter(|&i| i != j && !dense[i]).collect()
        })
        .collect();

    let mut eliminated = dense.clone();
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> = (0..n)
        .filter(|&j| !dense[j])
        .map(|j| Reverse((adj[j].len(), j)))
        .collect();

    let mut order = Vec::with_capacity(n);
    let mut merged: Vec<usize> = Vec::new();
    while let Some(Reverse((degree, v))) = heap.pop() {
        if eliminated[v] || degree != adj[v].len() {
            continue;
        }
        eliminated[v] = true;
        order.push(v);
        let clique = std::mem::take(&mut adj[v]);
        for &u in &clique {
            // adj[u] <- (adj[u] ∪ clique) \ {u, v}
            merged.clear();
            let current = &adj[u];
            let (mut p, mut q) = (0, 0);
            while p < current.len() || q < clique.len() {
                let next = if q == clique.len() || (p < current.len() && current[p] < clique[q]) {
                    p += 1;
                    current[p - 1]
                } else if p == current.len() || clique[q] < current[p] {
                    q += 1;
                    clique[q - 1]
                } else {
                    p += 1;
                    q += 1;
                    current[p - 1]
                };
                if next != u && next != v {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut adj[u], &mut merged);
            heap.push(Reverse((adj[u].len(), u)));
        }
    }
    order.extend((0..n).filter(|&j| dense[j]));
    debug_assert_eq!(order.len(), n);
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn is_permutation(p: &[usize]) -> bool {
        let mut seen = vec![false; p.len()];
        p.iter().all(|&i| i < p.len() && !std::mem::replace(&mut seen[i], true))
    }

    #[test]
    fn arrow_matrix_puts_hub_last() {
        // Node 0 couples to every other node; eliminating it first would fill
        // the whole matrix.
        let n = 8;
        let mut t = vec![];
        for i in 0..n {
            t.push((i, i, 1.0));
            if i > 0 {
                t.push((0, i, 1.0));
                t.push((i, 0, 1.0));
            }
        }
        let a = CscMatrix::from_triplets(n, n, &t);
        let p = minimum_degree(&a);
        assert!(is_permutation(&p));
        // Once one leaf remains the hub ties with it at degree one.
        assert!(!p[..n - 2].contains(&0));
    }

    #[test]
    fn deterministic() {
        let n = 30;
        let mut t = vec![];
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        let a = CscMatrix::from_triplets(n, n, &t);
        assert_eq!(minimum_degree(&a), minimum_degree(&a));
        assert!(is_permutation(&minimum_degree(&a)));
    }
}
