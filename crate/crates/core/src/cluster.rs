//! Agglomerative clustering with Ward's criterion over a precomputed
//! dissimilarity matrix, cluster-count diagnostics, and per-cluster reference
//! series.
//!
//! The input matrix is treated as Euclidean ("Ward on precomputed distances"):
//! squared linkage distances start as the squared matrix entries and are
//! updated with the Lance-Williams recurrence for Ward linkage.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::LoadSeries;
use crate::error::{Error, Result};
use crate::features::DistanceMatrix;
use crate::scalar::Scalar;

/// One agglomeration step. `a` and `b` are cluster labels: leaves are
/// `0..n-1`, the cluster created by merge `k` is labeled `n + k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Merge<T: Scalar> {
    pub a: usize,
    pub b: usize,
    /// Ward cost of the merge (increase in total within-cluster variance).
    pub height: T,
    pub merged_size: usize,
}

/// Stepwise dendrogram: exactly `n - 1` merges with non-decreasing heights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Dendrogram<T: Scalar> {
    pub merges: Vec<Merge<T>>,
    pub leaf_ids: Vec<String>,
}

impl<T: Scalar> Dendrogram<T> {
    pub fn new(merges: Vec<Merge<T>>, leaf_ids: Vec<String>) -> Result<Self> {
        let n = leaf_ids.len();
        if merges.len() + 1 != n {
            return Err(Error::Clustering(format!(
                "{} merges for {} leaves",
                merges.len(),
                n
            )));
        }
        for pair in merges.windows(2) {
            // exact monotonicity holds mathematically; tolerate rounding only
            let slack = T::lit(1e-9) * (T::one() + pair[0].height.abs());
            if pair[1].height < pair[0].height - slack {
                return Err(Error::Clustering(format!(
                    "merge heights decrease: {} then {}",
                    pair[0].height, pair[1].height
                )));
            }
        }
        Ok(Dendrogram { merges, leaf_ids })
    }

    pub fn n_leaves(&self) -> usize {
        self.leaf_ids.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dendrogram serializes")
    }
}

/// Ward merge cost: `|A||B| / (|A|+|B|) * ||mu_A - mu_B||^2`.
pub fn ward_merge_cost<T: Scalar>(size_a: usize, size_b: usize, centroid_dist_sq: T) -> T {
    let a = T::from_usize(size_a).unwrap();
    let b = T::from_usize(size_b).unwrap();
    a * b / (a + b) * centroid_dist_sq
}

/// Bottom-up Ward agglomeration. At each step the active pair with minimal
/// Ward cost is merged (ties go to the lexicographically smallest label
/// pair) and the squared linkage distances to the new cluster are rebuilt
/// with the Lance-Williams recurrence.
pub fn agglomerate<T: Scalar>(matrix: &DistanceMatrix<T>) -> Result<Dendrogram<T>> {
    let n = matrix.n();
    if n < 2 {
        return Err(Error::Clustering(format!("need at least 2 leaves, got {n}")));
    }
    let total = 2 * n - 1;
    // link_sq[a][b]: squared Ward linkage distance between active clusters.
    // For singleton pairs this is the squared matrix entry; the Ward cost of
    // a pair is recovered through ward_merge_cost below.
    let mut link_sq = vec![vec![T::zero(); total]; total];
    for i in 0..n {
        for j in 0..n {
            let d = matrix.get(i, j);
            link_sq[i][j] = d * d;
        }
    }
    let mut size = vec![0usize; total];
    for s in size.iter_mut().take(n) {
        *s = 1;
    }
    let mut active: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n - 1);

    for step in 0..n - 1 {
        let mut best: Option<(usize, usize, T)> = None;
        for (ai, &a) in active.iter().enumerate() {
            for &b in &active[ai + 1..] {
                let pair_centroid_sq =
                    link_sq[a][b] * half_ratio::<T>(size[a], size[b]);
                let cost = ward_merge_cost(size[a], size[b], pair_centroid_sq);
                if !cost.is_finite() {
                    return Err(Error::Clustering(format!(
                        "non-finite merge cost between {a} and {b}"
                    )));
                }
                // strict < keeps the first (lexicographically smallest) pair
                if best.is_none_or(|(_, _, c)| cost < c) {
                    best = Some((a, b, cost));
                }
            }
        }
        let (a, b, cost) = best.expect("at least one active pair");
        let new = n + step;
        size[new] = size[a] + size[b];
        merges.push(Merge {
            a,
            b,
            height: cost,
            merged_size: size[new],
        });

        active.retain(|&c| c != a && c != b);
        let (sa, sb) = (
            T::from_usize(size[a]).unwrap(),
            T::from_usize(size[b]).unwrap(),
        );
        for &c in &active {
            let sc = T::from_usize(size[c]).unwrap();
            let updated = ((sa + sc) * link_sq[a][c] + (sb + sc) * link_sq[b][c]
                - sc * link_sq[a][b])
                / (sa + sb + sc);
            link_sq[new][c] = updated;
            link_sq[c][new] = updated;
        }
        active.push(new);
    }

    Dendrogram::new(merges, matrix.ids.clone())
}

/// `(|A|+|B|) / (2 |A| |B|)`: converts a squared Ward linkage distance into
/// the squared centroid distance that ward_merge_cost expects.
fn half_ratio<T: Scalar>(size_a: usize, size_b: usize) -> T {
    let a = T::from_usize(size_a).unwrap();
    let b = T::from_usize(size_b).unwrap();
    (a + b) / (T::lit(2.0) * a * b)
}

/// Partition into `w` clusters by removing the `w - 1` highest merges.
/// Returns one cluster index per leaf; indices are assigned in order of each
/// cluster's smallest leaf.
pub fn cut<T: Scalar>(dendrogram: &Dendrogram<T>, w: usize) -> Result<Vec<usize>> {
    let n = dendrogram.n_leaves();
    if w == 0 || w > n {
        return Err(Error::Clustering(format!("w={w} out of range 1..={n}")));
    }
    let total = 2 * n - 1;
    let mut parent: Vec<usize> = (0..total).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = x;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    for (k, merge) in dendrogram.merges.iter().take(n - w).enumerate() {
        let label = n + k;
        let ra = find(&mut parent, merge.a);
        let rb = find(&mut parent, merge.b);
        parent[ra] = label;
        parent[rb] = label;
    }
    let mut cluster_of_root: BTreeMap<usize, usize> = BTreeMap::new();
    let mut assignments = vec![0usize; n];
    for leaf in 0..n {
        let root = find(&mut parent, leaf);
        let next = cluster_of_root.len();
        let idx = *cluster_of_root.entry(root).or_insert(next);
        assignments[leaf] = idx;
    }
    debug_assert_eq!(cluster_of_root.len(), w);
    Ok(assignments)
}

/// Mean silhouette coefficient over all points; singleton clusters
/// contribute 0, as does the degenerate all-distances-zero case.
pub fn silhouette<T: Scalar>(matrix: &DistanceMatrix<T>, assignments: &[usize]) -> Result<T> {
    let n = matrix.n();
    if assignments.len() != n {
        return Err(Error::Clustering(format!(
            "{} assignments for {n} points",
            assignments.len()
        )));
    }
    let w = assignments.iter().copied().max().map_or(0, |m| m + 1);
    if w < 2 {
        return Err(Error::Clustering("silhouette requires w >= 2".into()));
    }
    let mut counts = vec![0usize; w];
    for &c in assignments {
        counts[c] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::Clustering("empty cluster".into()));
    }

    let mut total = T::zero();
    for i in 0..n {
        let ci = assignments[i];
        if counts[ci] == 1 {
            continue; // singleton contributes 0
        }
        let mut sums = vec![T::zero(); w];
        for j in 0..n {
            if j != i {
                sums[assignments[j]] += matrix.get(i, j);
            }
        }
        let a = sums[ci] / T::from_usize(counts[ci] - 1).unwrap();
        let b = (0..w)
            .filter(|&c| c != ci)
            .map(|c| sums[c] / T::from_usize(counts[c]).unwrap())
            .fold(T::infinity(), |acc, v| acc.min(v));
        let denom = a.max(b);
        if denom > T::zero() {
            total += (b - a) / denom;
        }
    }
    Ok(total / T::from_usize(n).unwrap())
}

/// Inconsistency coefficient per merge: the merge height standardized
/// against the heights of merges within `depth` levels of its subtree
/// (itself included, population standard deviation; zero spread scores 0).
pub fn inconsistency<T: Scalar>(dendrogram: &Dendrogram<T>, depth: usize) -> Result<Vec<T>> {
    if depth == 0 {
        return Err(Error::Clustering("depth must be >= 1".into()));
    }
    let n = dendrogram.n_leaves();
    let mut scores = Vec::with_capacity(dendrogram.merges.len());
    for (k, merge) in dendrogram.merges.iter().enumerate() {
        let mut heights = Vec::new();
        collect_heights(dendrogram, n, n + k, 1, depth, &mut heights);
        let count = T::from_usize(heights.len()).unwrap();
        let mean = heights.iter().copied().sum::<T>() / count;
        let var = heights
            .iter()
            .map(|&h| (h - mean) * (h - mean))
            .sum::<T>()
            / count;
        let std = var.sqrt();
        scores.push(if std > T::zero() {
            (merge.height - mean) / std
        } else {
            T::zero()
        });
    }
    Ok(scores)
}

fn collect_heights<T: Scalar>(
    dendrogram: &Dendrogram<T>,
    n: usize,
    label: usize,
    level: usize,
    depth: usize,
    out: &mut Vec<T>,
) {
    if label < n {
        return;
    }
    let merge = &dendrogram.merges[label - n];
    out.push(merge.height);
    if level < depth {
        collect_heights(dendrogram, n, merge.a, level + 1, depth, out);
        collect_heights(dendrogram, n, merge.b, level + 1, depth, out);
    }
}

/// Per-cluster centroid of the member raw load series.
pub fn reference_series<T: Scalar>(
    corpus: &[LoadSeries<T>],
    assignments: &[usize],
) -> Result<Vec<LoadSeries<T>>> {
    if corpus.len() != assignments.len() {
        return Err(Error::Clustering(format!(
            "{} series vs {} assignments",
            corpus.len(),
            assignments.len()
        )));
    }
    let w = assignments.iter().copied().max().map_or(0, |m| m + 1);
    let mut refs = Vec::with_capacity(w);
    for cluster in 0..w {
        let members: Vec<&LoadSeries<T>> = corpus
            .iter()
            .zip(assignments)
            .filter(|(_, &c)| c == cluster)
            .map(|(s, _)| s)
            .collect();
        let first = members
            .first()
            .ok_or_else(|| Error::Clustering(format!("cluster {cluster} is empty")))?;
        let m = first.len();
        for s in &members {
            if s.len() != m {
                return Err(Error::Clustering(format!(
                    "cluster {cluster}: member length {} != {m}",
                    s.len()
                )));
            }
        }
        let count = T::from_usize(members.len()).unwrap();
        let mut mean = vec![T::zero(); m];
        for s in &members {
            for (acc, &v) in mean.iter_mut().zip(&s.values) {
                *acc += v;
            }
        }
        for v in mean.iter_mut() {
            *v /= count;
        }
        refs.push(LoadSeries {
            values: mean,
            start_month: first.start_month,
            start_hour: first.start_hour,
            start_day_type: first.start_day_type,
            building_id: format!("cluster{cluster}"),
        });
    }
    Ok(refs)
}

/// Fitted clustering: the chosen cut, per-building assignments, reference
/// series, and the dendrogram they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ClusterModel<T: Scalar> {
    pub schema_version: u32,
    pub w: usize,
    /// building id -> cluster index, in corpus order
    pub assignments: Vec<(String, usize)>,
    pub reference_series: Vec<LoadSeries<T>>,
    pub dendrogram: Dendrogram<T>,
}

pub const CLUSTER_MODEL_VERSION: u32 = 1;

impl<T: Scalar> ClusterModel<T> {
    pub fn new(
        w: usize,
        assignments: Vec<(String, usize)>,
        reference_series: Vec<LoadSeries<T>>,
        dendrogram: Dendrogram<T>,
    ) -> Result<Self> {
        if reference_series.len() != w {
            return Err(Error::Clustering(format!(
                "{} reference series for w={w}",
                reference_series.len()
            )));
        }
        let mut counts = vec![0usize; w];
        for (id, c) in &assignments {
            if *c >= w {
                return Err(Error::Clustering(format!(
                    "building {id} assigned to cluster {c} >= w={w}"
                )));
            }
            counts[*c] += 1;
        }
        if counts.contains(&0) {
            return Err(Error::Clustering("empty cluster in model".into()));
        }
        Ok(ClusterModel {
            schema_version: CLUSTER_MODEL_VERSION,
            w,
            assignments,
            reference_series,
            dendrogram,
        })
    }

    /// Fit from a distance matrix and the raw series behind it.
    pub fn fit(
        matrix: &DistanceMatrix<T>,
        corpus: &[LoadSeries<T>],
        w: usize,
    ) -> Result<Self> {
        let dendrogram = agglomerate(matrix)?;
        let assignments = cut(&dendrogram, w)?;
        let refs = reference_series(corpus, &assignments)?;
        let named = matrix
            .ids
            .iter()
            .cloned()
            .zip(assignments.iter().copied())
            .collect();
        ClusterModel::new(w, named, refs, dendrogram)
    }

    pub fn cluster_of(&self, building_id: &str) -> Option<usize> {
        self.assignments
            .iter()
            .find(|(id, _)| id == building_id)
            .map(|(_, c)| *c)
    }

    pub fn assignments_csv(&self) -> String {
        let mut out = String::from("building_id,cluster\n");
        for (id, c) in &self.assignments {
            out.push_str(&format!("{id},{c}\n"));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Serialization(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::pairwise_matrix;

    fn matrix_from(entries: &[&[f64]]) -> DistanceMatrix<f64> {
        let n = entries.len();
        let flat: Vec<f64> = entries.iter().flat_map(|r| r.iter().copied()).collect();
        let ids = (0..n).map(|i| format!("p{i}")).collect();
        DistanceMatrix::new(n, flat, ids).unwrap()
    }

    /// 1-d points at 0, 0.1, 10, 10.1 under absolute distance.
    fn two_tight_pairs() -> DistanceMatrix<f64> {
        let pts = [0.0, 0.1, 10.0, 10.1];
        let n = pts.len();
        let mut flat = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                flat[i * n + j] = f64::abs(pts[i] - pts[j]);
            }
        }
        DistanceMatrix::new(n, flat, (0..n).map(|i| format!("p{i}")).collect()).unwrap()
    }

    #[test]
    fn ward_merge_cost_examples() {
        assert_eq!(ward_merge_cost(1, 1, 4.0), 2.0); // two singletons at d^2 = 4
        assert_eq!(ward_merge_cost(3, 5, 0.0), 0.0);
        assert_eq!(ward_merge_cost(2, 2, 1.0), 1.0);
    }

    #[test]
    fn agglomerate_two_leaves() {
        let d = matrix_from(&[&[0.0, 3.0], &[3.0, 0.0]]);
        let dendro = agglomerate(&d).unwrap();
        assert_eq!(dendro.merges.len(), 1);
        let m = dendro.merges[0];
        assert_eq!((m.a, m.b, m.merged_size), (0, 1, 2));
        assert_eq!(m.height, 4.5); // d^2 / 2
    }

    #[test]
    fn agglomerate_two_tight_pairs() {
        let dendro = agglomerate(&two_tight_pairs()).unwrap();
        let first_two = [
            (dendro.merges[0].a, dendro.merges[0].b),
            (dendro.merges[1].a, dendro.merges[1].b),
        ];
        assert!(first_two.contains(&(0, 1)) && first_two.contains(&(2, 3)));
        assert!(dendro.merges[2].height > 100.0 * dendro.merges[1].height);

        let two = cut(&dendro, 2).unwrap();
        assert_eq!(two, vec![0, 0, 1, 1]);
    }

    #[test]
    fn cut_extremes() {
        let dendro = agglomerate(&two_tight_pairs()).unwrap();
        assert_eq!(cut(&dendro, 1).unwrap(), vec![0, 0, 0, 0]);
        assert_eq!(cut(&dendro, 4).unwrap(), vec![0, 1, 2, 3]);
        assert!(cut(&dendro, 0).is_err());
        assert!(cut(&dendro, 5).is_err());
    }

    #[test]
    fn silhouette_two_tight_pairs() {
        let d = two_tight_pairs();
        let s = silhouette(&d, &[0, 0, 1, 1]).unwrap();
        assert!((s - 0.99).abs() < 1e-6, "got {s}");
    }

    #[test]
    fn silhouette_degenerate_zero() {
        let d = matrix_from(&[
            &[0.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0],
        ]);
        assert_eq!(silhouette(&d, &[0, 0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn silhouette_prefers_true_partition() {
        let d = two_tight_pairs();
        let truth = silhouette(&d, &[0, 0, 1, 1]).unwrap();
        // every 2-cluster assignment that misplaces one point
        for wrong in [
            vec![0usize, 1, 1, 1],
            vec![1, 0, 1, 1],
            vec![0, 0, 0, 1],
            vec![0, 0, 1, 0],
        ] {
            let s = silhouette(&d, &wrong).unwrap();
            assert!(truth > s, "truth {truth} vs {s} for {wrong:?}");
        }
        assert!(silhouette(&d, &[0, 0, 0, 0]).is_err());
    }

    #[test]
    fn inconsistency_uniform_and_single() {
        let d = matrix_from(&[&[0.0, 2.0], &[2.0, 0.0]]);
        let dendro = agglomerate(&d).unwrap();
        assert_eq!(inconsistency(&dendro, 2).unwrap(), vec![0.0]);

        // hand-built dendrogram with equal heights everywhere
        let uniform = Dendrogram::new(
            vec![
                Merge {
                    a: 0,
                    b: 1,
                    height: 1.0,
                    merged_size: 2,
                },
                Merge {
                    a: 2,
                    b: 3,
                    height: 1.0,
                    merged_size: 2,
                },
                Merge {
                    a: 4,
                    b: 5,
                    height: 1.0,
                    merged_size: 4,
                },
            ],
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
        )
        .unwrap();
        assert_eq!(inconsistency(&uniform, 2).unwrap(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn inconsistency_spiked_top_merge() {
        let dendro = Dendrogram::new(
            vec![
                Merge {
                    a: 0,
                    b: 1,
                    height: 1.0,
                    merged_size: 2,
                },
                Merge {
                    a: 2,
                    b: 3,
                    height: 1.0,
                    merged_size: 2,
                },
                Merge {
                    a: 4,
                    b: 5,
                    height: 10.0,
                    merged_size: 4,
                },
            ],
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
        )
        .unwrap();
        let scores = inconsistency(&dendro, 2).unwrap();
        // top merge: heights {1, 1, 10}, mean 4, population std sqrt(18)
        let expected = (10.0 - 4.0) / 18.0f64.sqrt();
        assert!((scores[2] - expected).abs() < 1e-12);
        assert_eq!(scores[0], 0.0);
        assert_eq!(scores[1], 0.0);
    }

    #[test]
    fn reference_series_examples() {
        let mk = |vals: Vec<f64>, id: &str| LoadSeries::new(vals, 1, 1, 0, id).unwrap();
        let corpus = vec![
            mk(vec![0.0, 2.0], "a"),
            mk(vec![2.0, 0.0], "b"),
            mk(vec![5.0, 5.0], "c"),
        ];
        let refs = reference_series(&corpus, &[0, 0, 1]).unwrap();
        assert_eq!(refs[0].values, vec![1.0, 1.0]);
        assert_eq!(refs[1].values, vec![5.0, 5.0]); // singleton keeps its series
        assert_eq!(refs.len(), 2);

        let twins = vec![mk(vec![1.0, 2.0], "a"), mk(vec![1.0, 2.0], "b")];
        let refs = reference_series(&twins, &[0, 0]).unwrap();
        assert_eq!(refs[0].values, vec![1.0, 2.0]);
    }

    #[test]
    fn model_fit_and_round_trip() {
        let corpus = vec![
            LoadSeries::new(vec![0.0, 0.0, 1.0], 1, 1, 0, "a").unwrap(),
            LoadSeries::new(vec![0.0, 0.1, 1.1], 1, 1, 0, "b").unwrap(),
            LoadSeries::new(vec![5.0, 9.0, 5.0], 1, 1, 0, "c").unwrap(),
            LoadSeries::new(vec![5.0, 9.2, 5.1], 1, 1, 0, "d").unwrap(),
        ];
        let raw: Vec<Vec<f64>> = corpus.iter().map(|s| s.values.clone()).collect();
        let ids: Vec<String> = corpus.iter().map(|s| s.building_id.clone()).collect();
        let transformed: Vec<Vec<f64>> = raw
            .iter()
            .map(|s| crate::features::trend_spectrum(s).unwrap())
            .collect();
        let matrix = pairwise_matrix(&transformed, ids).unwrap();
        let model = ClusterModel::fit(&matrix, &corpus, 2).unwrap();
        assert_eq!(model.w, 2);
        assert_eq!(model.cluster_of("a"), model.cluster_of("b"));
        assert_eq!(model.cluster_of("c"), model.cluster_of("d"));
        assert_ne!(model.cluster_of("a"), model.cluster_of("c"));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let reread = ClusterModel::<f64>::load(&path).unwrap();
        assert_eq!(reread, model);
    }
}
