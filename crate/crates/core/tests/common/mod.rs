//! Independent oracles shared by the integration and acceptance suites.
//! Everything here recomputes results from first principles, touching none
//! of the incremental machinery in the library.

#![allow(dead_code)]

/// DTW by exhaustive recursion over warping paths (boundary, monotonicity,
/// unit steps). Exponential; only for short series.
pub fn dtw_path_enumeration(x: &[f64], y: &[f64]) -> f64 {
    fn best_to(x: &[f64], y: &[f64], i: usize, j: usize) -> f64 {
        let cost = (x[i] - y[j]).abs();
        if i == 0 && j == 0 {
            cost
        } else if i == 0 {
            cost + best_to(x, y, 0, j - 1)
        } else if j == 0 {
            cost + best_to(x, y, i - 1, 0)
        } else {
            let a = best_to(x, y, i - 1, j);
            let b = best_to(x, y, i, j - 1);
            let c = best_to(x, y, i - 1, j - 1);
            cost + a.min(b).min(c)
        }
    }
    best_to(x, y, x.len() - 1, y.len() - 1)
}

/// Ward agglomeration oracle that recomputes every inter-cluster quantity
/// from the original matrix at every step, by recursion over the merge tree
/// (no incrementally maintained distance state).
pub mod ward_oracle {
    use std::collections::HashMap;

    #[derive(Debug, Clone, PartialEq)]
    pub struct OracleMerge {
        pub a: usize,
        pub b: usize,
        pub height: f64,
    }

    /// Cluster label structure: leaves `0..n`, merge `k` creates `n + k`.
    struct Tree {
        n: usize,
        children: Vec<(usize, usize)>, // per merge
        sizes: Vec<usize>,             // per label
    }

    impl Tree {
        fn size(&self, label: usize) -> usize {
            self.sizes[label]
        }
    }

    /// Squared Ward linkage distance between clusters `a` and `b`, computed
    /// from scratch by expanding the more recently created cluster first
    /// (mirroring the order in which an incremental implementation would
    /// have produced the values, so results are comparable bit for bit).
    fn link_sq(
        tree: &Tree,
        d: &[Vec<f64>],
        memo: &mut HashMap<(usize, usize), f64>,
        a: usize,
        b: usize,
    ) -> f64 {
        let key = (a.min(b), a.max(b));
        if let Some(&v) = memo.get(&key) {
            return v;
        }
        let v = if a < tree.n && b < tree.n {
            d[a][b] * d[a][b]
        } else {
            // expand the newer cluster
            let (expand, keep) = if a > b { (a, b) } else { (b, a) };
            let (ca, cb) = tree.children[expand - tree.n];
            let (sa, sb, sk) = (
                tree.size(ca) as f64,
                tree.size(cb) as f64,
                tree.size(keep) as f64,
            );
            ((sa + sk) * link_sq(tree, d, memo, ca, keep)
                + (sb + sk) * link_sq(tree, d, memo, cb, keep)
                - sk * link_sq(tree, d, memo, ca, cb))
                / (sa + sb + sk)
        };
        memo.insert(key, v);
        v
    }

    /// Full merge sequence: at each step every active pair's Ward cost is
    /// recomputed from the original matrix; minimum wins, ties to the
    /// lexicographically smallest label pair.
    pub fn agglomerate(d: &[Vec<f64>]) -> Vec<OracleMerge> {
        let n = d.len();
        let mut tree = Tree {
            n,
            children: Vec::new(),
            sizes: (0..n).map(|_| 1).collect(),
        };
        let mut active: Vec<usize> = (0..n).collect();
        let mut merges = Vec::with_capacity(n - 1);
        for step in 0..n - 1 {
            let mut memo = HashMap::new();
            let mut best: Option<(usize, usize, f64)> = None;
            for (ai, &a) in active.iter().enumerate() {
                for &b in &active[ai + 1..] {
                    let sq = link_sq(&tree, d, &mut memo, a, b);
                    let cost = sq / 2.0; // ward cost of the pair
                    if best.is_none_or(|(_, _, c)| cost < c) {
                        best = Some((a, b, cost));
                    }
                }
            }
            let (a, b, cost) = best.unwrap();
            let new = n + step;
            tree.children.push((a, b));
            tree.sizes.push(tree.size(a) + tree.size(b));
            active.retain(|&c| c != a && c != b);
            active.push(new);
            merges.push(OracleMerge { a, b, height: cost });
        }
        merges
    }
}

/// Average-cost inventory accounting for stored energy: book value grows by
/// the grid-side cost of each charge and shrinks proportionally on
/// discharge; the unit cost is book value over stored energy.
pub struct InventoryCost {
    pub energy_kwh: f64,
    pub book_value: f64,
}

impl InventoryCost {
    pub fn new() -> Self {
        InventoryCost {
            energy_kwh: 0.0,
            book_value: 0.0,
        }
    }

    pub fn charge(&mut self, grid_side_kwh: f64, stored_kwh: f64, grid_cost: f64) {
        self.energy_kwh += stored_kwh;
        self.book_value += grid_side_kwh * grid_cost;
    }

    pub fn discharge(&mut self, soc_side_kwh: f64) {
        let fraction = (soc_side_kwh / self.energy_kwh).min(1.0);
        self.book_value *= 1.0 - fraction;
        self.energy_kwh -= soc_side_kwh;
        if self.energy_kwh <= 1e-12 {
            self.energy_kwh = 0.0;
            self.book_value = 0.0;
        }
    }

    pub fn unit_cost(&self) -> f64 {
        if self.energy_kwh > 0.0 {
            self.book_value / self.energy_kwh
        } else {
            0.0
        }
    }
}

impl Default for InventoryCost {
    fn default() -> Self {
        Self::new()
    }
}

/// Best label agreement over all permutations of predicted cluster labels
/// (clusters and archetypes are both small here, so brute force).
pub fn best_permutation_agreement(truth: &[usize], predicted: &[usize], k: usize) -> f64 {
    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 1 {
            return vec![vec![0]];
        }
        let mut out = Vec::new();
        for rest in permutations(k - 1) {
            for pos in 0..k {
                let mut p = rest.clone();
                p.insert(pos, k - 1);
                out.push(p);
            }
        }
        out
    }
    let n = truth.len() as f64;
    permutations(k)
        .into_iter()
        .map(|perm| {
            truth
                .iter()
                .zip(predicted)
                .filter(|(&t, &p)| perm[p] == t)
                .count() as f64
                / n
        })
        .fold(0.0, f64::max)
}
