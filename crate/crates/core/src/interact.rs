//! Candidate interacting pairs.

use alloc::vec::Vec;

/// Above this fleet size candidate pairs come from a sort-and-sweep along
/// `x` instead of the full double loop.
pub const SWEEP_THRESHOLD: usize = 256;

/// Fills `out` with every pair `(i, j)`, `i < j`, whose longitudinal gap is
/// below `lambda`, in lexicographic order. Pairs further apart cannot
/// interact because the weighted distance dominates `|x_i - x_j|`.
pub fn candidate_pairs(x: &[f64], lambda: f64, out: &mut Vec<(usize, usize)>) {
    out.clear();
    let n = x.len();
    if n <= SWEEP_THRESHOLD {
        for i in 0..n {
            for j in (i + 1)..n {
                if (x[i] - x[j]).abs() < lambda {
                    out.push((i, j));
                }
            }
        }
        return;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    for (k, &a) in order.iter().enumerate() {
        for &b in &order[k + 1..] {
            if x[b] - x[a] >= lambda {
                break;
            }
            out.push((a.min(b), a.max(b)));
        }
    }
    out.sort_unstable();
}
