//! Map a building onto an existing cluster (and hence policy) from an
//! observation window via the dissimilarity vector.

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterModel;
use crate::data::{LoadSeries, MONTH_DAYS};
use crate::error::{Error, Result};
use crate::features::{dtw_distance, trend_spectrum};
use crate::scalar::Scalar;

/// Dissimilarity metric used against the cluster references.
///
/// `Dtw` runs the training transform pipeline (derivative then spectrum)
/// before warping; `Euclidean` compares raw values pointwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Dtw,
    Euclidean,
}

/// Distances from one building to every cluster reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DissimilarityVector<T: Scalar> {
    pub values: Vec<T>,
    pub metric: Metric,
}

/// Hours from the start of the year to day 1, hour `start_hour` of
/// `start_month` (series are anchored to day 1 of their start month).
/// Observation windows are expected to begin at their building's series
/// start, the protocol used throughout; anchors of mid-year slices resolve
/// to the same month label as their parent.
fn year_anchor_hours<T: Scalar>(series: &LoadSeries<T>) -> usize {
    let days: u32 = MONTH_DAYS[..series.start_month as usize - 1].iter().sum();
    days as usize * 24 + series.start_hour as usize
}

/// Slice `reference` to the calendar window covered by `window`.
fn matching_window<T: Scalar>(
    reference: &LoadSeries<T>,
    window: &LoadSeries<T>,
) -> Result<LoadSeries<T>> {
    let ref_anchor = year_anchor_hours(reference);
    let new_anchor = year_anchor_hours(window);
    let offset = new_anchor.checked_sub(ref_anchor).ok_or_else(|| {
        Error::InvalidArgument("observation window precedes the reference start".into())
    })?;
    reference.slice_window(offset, window.len())
}

/// Distance from `new_series` to each cluster reference, over matching
/// calendar windows.
pub fn dissimilarity_vector<T: Scalar>(
    new_series: &LoadSeries<T>,
    model: &ClusterModel<T>,
    metric: Metric,
) -> Result<DissimilarityVector<T>> {
    if new_series.is_empty() {
        return Err(Error::InvalidSeries("empty observation window".into()));
    }
    let mut values = Vec::with_capacity(model.w);
    for reference in &model.reference_series {
        if new_series.len() > reference.len() {
            return Err(Error::InvalidArgument(format!(
                "observation window ({} h) longer than reference ({} h)",
                new_series.len(),
                reference.len()
            )));
        }
        let sliced = matching_window(reference, new_series)?;
        let d = match metric {
            Metric::Dtw => {
                let a = trend_spectrum(&new_series.values)?;
                let b = trend_spectrum(&sliced.values)?;
                dtw_distance(&a, &b)?
            }
            Metric::Euclidean => {
                debug_assert_eq!(sliced.len(), new_series.len());
                new_series
                    .values
                    .iter()
                    .zip(&sliced.values)
                    .map(|(&x, &y)| (x - y) * (x - y))
                    .sum::<T>()
                    .sqrt()
            }
        };
        values.push(d);
    }
    Ok(DissimilarityVector { values, metric })
}

/// Index of the minimal entry; ties go to the lowest index.
pub fn assign_cluster<T: Scalar>(v: &DissimilarityVector<T>) -> usize {
    let mut best = 0;
    for (i, &d) in v.values.iter().enumerate() {
        if d < v.values[best] {
            best = i;
        }
    }
    best
}

/// Re-classify a growing stream every `step` hours over the observed prefix.
/// Each evaluation uses at least two samples; the history has one entry per
/// whole `step` of observed data.
pub fn incremental_refine<T: Scalar>(
    stream: &LoadSeries<T>,
    model: &ClusterModel<T>,
    metric: Metric,
    step: usize,
) -> Result<Vec<usize>> {
    if step == 0 {
        return Err(Error::InvalidArgument("step must be >= 1".into()));
    }
    let mut history = Vec::new();
    let mut end = step;
    while end <= stream.len() {
        let prefix = stream.slice_window(0, end.max(2))?;
        let v = dissimilarity_vector(&prefix, model, metric)?;
        history.push(assign_cluster(&v));
        end += step;
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{Dendrogram, Merge};

    fn model_with_refs(refs: Vec<Vec<f64>>) -> ClusterModel<f64> {
        let w = refs.len();
        let leaf_ids: Vec<String> = (0..w).map(|i| format!("b{i}")).collect();
        let merges = (0..w - 1)
            .map(|k| Merge {
                a: if k == 0 { 0 } else { w + k - 1 },
                b: k + 1,
                height: k as f64,
                merged_size: k + 2,
            })
            .collect();
        let dendrogram = Dendrogram::new(merges, leaf_ids.clone()).unwrap();
        let assignments = leaf_ids.iter().cloned().zip(0..w).collect();
        let reference_series = refs
            .into_iter()
            .enumerate()
            .map(|(i, values)| LoadSeries::new(values, 1, 1, 0, format!("cluster{i}")).unwrap())
            .collect();
        ClusterModel::new(w, assignments, reference_series, dendrogram).unwrap()
    }

    #[test]
    fn identical_to_reference_scores_zero() {
        let model = model_with_refs(vec![
            vec![1.0, 5.0, 2.0, 7.0],
            vec![4.0, 4.0, 4.0, 4.0],
            vec![0.0, 9.0, 0.0, 9.0],
        ]);
        for metric in [Metric::Dtw, Metric::Euclidean] {
            let new = model.reference_series[1].clone();
            let v = dissimilarity_vector(&new, &model, metric).unwrap();
            assert_eq!(v.values[1], 0.0);
            assert_eq!(assign_cluster(&v), 1);
        }
    }

    #[test]
    fn euclidean_hand_arithmetic() {
        let model = model_with_refs(vec![vec![3.0, 4.0], vec![1.0, 0.0]]);
        let new = LoadSeries::new(vec![0.0, 0.0], 1, 1, 0, "new").unwrap();
        let v = dissimilarity_vector(&new, &model, Metric::Euclidean).unwrap();
        assert_eq!(v.values, vec![5.0, 1.0]);
        assert_eq!(assign_cluster(&v), 1);
    }

    #[test]
    fn dtw_entries_match_independent_calls() {
        let model = model_with_refs(vec![
            vec![1.0, 2.0, 3.0, 2.0],
            vec![3.0, 1.0, 3.0, 1.0],
        ]);
        let new = LoadSeries::new(vec![2.0, 2.0, 4.0, 1.0], 1, 1, 0, "new").unwrap();
        let v = dissimilarity_vector(&new, &model, Metric::Dtw).unwrap();
        for (i, reference) in model.reference_series.iter().enumerate() {
            let a = trend_spectrum(&new.values).unwrap();
            let b = trend_spectrum(&reference.values).unwrap();
            assert_eq!(v.values[i], dtw_distance(&a, &b).unwrap());
        }
    }

    #[test]
    fn argmin_tie_break_and_scale_invariance() {
        let v = DissimilarityVector {
            values: vec![5.0, 2.0, 7.0],
            metric: Metric::Dtw,
        };
        assert_eq!(assign_cluster(&v), 1);

        let tie = DissimilarityVector {
            values: vec![2.0, 2.0, 5.0],
            metric: Metric::Dtw,
        };
        assert_eq!(assign_cluster(&tie), 0);

        let scaled = DissimilarityVector {
            values: tie.values.iter().map(|d| d * 17.5).collect(),
            metric: Metric::Dtw,
        };
        assert_eq!(assign_cluster(&scaled), assign_cluster(&tie));
    }

    #[test]
    fn short_window_against_long_reference() {
        // references are year-like; window is the first day
        let long: Vec<f64> = (0..96).map(|t| 1.0 + ((t % 24) as f64) / 24.0).collect();
        let flat = vec![2.0; 96];
        let model = model_with_refs(vec![long.clone(), flat]);
        let new = LoadSeries::new(long[..24].to_vec(), 1, 1, 0, "new").unwrap();
        let v = dissimilarity_vector(&new, &model, Metric::Dtw).unwrap();
        assert_eq!(v.values[0], 0.0);
        assert_eq!(assign_cluster(&v), 0);
    }

    #[test]
    fn refine_constant_assignment_and_history_length() {
        let model = model_with_refs(vec![
            (0..72).map(|t| ((t % 24) as f64 - 12.0).abs()).collect(),
            vec![3.0; 72],
        ]);
        let stream = model.reference_series[0].clone();
        let history = incremental_refine(&stream, &model, Metric::Dtw, 12).unwrap();
        assert_eq!(history.len(), 72 / 12);
        assert!(history.iter().all(|&c| c == 0));

        let history = incremental_refine(&stream, &model, Metric::Euclidean, 7).unwrap();
        assert_eq!(history.len(), 72 / 7);
    }

    #[test]
    fn window_longer_than_reference_rejected() {
        let model = model_with_refs(vec![vec![1.0; 24], vec![2.0; 24]]);
        let new = LoadSeries::new(vec![1.0; 48], 1, 1, 0, "new").unwrap();
        assert!(dissimilarity_vector(&new, &model, Metric::Euclidean).is_err());
    }
}
