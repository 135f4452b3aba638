use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::knn::{distance, knn, Points};
use crate::data::{indices_by_class, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NearMissVersion {
    /// Keep majority rows closest on average to their nearest reference rows.
    #[default]
    #[serde(rename = "1")]
    One,
    /// Keep majority rows closest on average to their farthest reference rows.
    #[serde(rename = "2")]
    Two,
    /// Short-list each reference row's nearest majority rows, then keep the
    /// short-listed rows farthest on average from their nearest references.
    #[serde(rename = "3")]
    Three,
}

impl std::str::FromStr for NearMissVersion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(NearMissVersion::One),
            "2" => Ok(NearMissVersion::Two),
            "3" => Ok(NearMissVersion::Three),
            other => Err(Error::config(format!("unknown NearMiss version `{other}`"))),
        }
    }
}

/// Shrinks `majority_class` to `target_count` rows.
///
/// The reference set is the smallest other class present. Non-majority rows are
/// kept untouched; surviving majority rows keep their relative order.
pub fn nearmiss_undersample(
    data: &Dataset,
    majority_class: usize,
    target_count: usize,
    version: NearMissVersion,
    n_ref: usize,
) -> Result<Dataset> {
    let by_class = indices_by_class(data.labels());
    let majority = by_class
        .get(majority_class)
        .ok_or_else(|| Error::config(format!("unknown class {majority_class}")))?;
    if target_count > majority.len() {
        return Err(Error::TooMany {
            requested: target_count,
            available: majority.len(),
        });
    }
    if target_count == majority.len() {
        return Ok(data.clone());
    }
    let reference = by_class
        .iter()
        .enumerate()
        .filter(|(c, members)| *c != majority_class && !members.is_empty())
        .min_by_key(|(c, members)| (members.len(), *c))
        .map(|(_, members)| members.clone())
        .ok_or(Error::EmptyClass(majority_class))?;

    let keep = select_majority(data, majority, &reference, target_count, version, n_ref)?;
    let mut kept = vec![true; data.n_rows()];
    for &i in majority {
        kept[i] = false;
    }
    for i in keep {
        kept[i] = true;
    }
    let rows: Vec<usize> = (0..data.n_rows()).filter(|&i| kept[i]).collect();
    Ok(data.subset(&rows))
}

/// Mean distance from `row` to its `n` nearest (or farthest) reference rows.
fn mean_ref_distance(row: &[f64], ref_rows: &[&[f64]], n: usize, farthest: bool) -> f64 {
    let mut d: Vec<f64> = ref_rows.iter().map(|r| distance(row, r)).collect();
    let n = n.min(d.len());
    if farthest {
        d.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    } else {
        d.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    }
    d[..n].iter().sum::<f64>() / n as f64
}

/// Positions into `candidates` ordered by score (ascending unless `descending`),
/// lower position first on ties.
fn ranked(scores: &[f64], descending: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let ord = scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal);
        let ord = if descending { ord.reverse() } else { ord };
        ord.then(a.cmp(&b))
    });
    order
}

fn select_majority(
    data: &Dataset,
    majority: &[usize],
    reference: &[usize],
    target: usize,
    version: NearMissVersion,
    n_ref: usize,
) -> Result<Vec<usize>> {
    let ref_rows: Vec<&[f64]> = reference.iter().map(|&i| data.row(i)).collect();
    let score_all = |farthest: bool| -> Vec<f64> {
        majority
            .par_iter()
            .map(|&i| mean_ref_distance(data.row(i), &ref_rows, n_ref, farthest))
            .collect()
    };
    match version {
        NearMissVersion::One | NearMissVersion::Two => {
            let scores = score_all(version == NearMissVersion::Two);
            Ok(ranked(&scores, false)[..target].iter().map(|&p| majority[p]).collect())
        }
        NearMissVersion::Three => {
            let mut maj_flat = Vec::with_capacity(majority.len() * data.n_features());
            for &i in majority {
                maj_flat.extend_from_slice(data.row(i));
            }
            let pool = Points::new(&maj_flat, data.n_features().max(1));
            let per_ref = n_ref.min(majority.len());
            let mut shortlisted = vec![false; majority.len()];
            for r in &ref_rows {
                for p in knn(r, pool, per_ref)? {
                    shortlisted[p] = true;
                }
            }
            let scores = score_all(false);
            let short: Vec<usize> = (0..majority.len()).filter(|&p| shortlisted[p]).collect();
            let short_scores: Vec<f64> = short.iter().map(|&p| scores[p]).collect();
            let mut chosen: Vec<usize> = ranked(&short_scores, true)
                .into_iter()
                .take(target)
                .map(|q| short[q])
                .collect();
            if chosen.len() < target {
                // Short-list too small: top up with the closest remaining rows.
                let rest: Vec<usize> = (0..majority.len()).filter(|&p| !shortlisted[p]).collect();
                let rest_scores: Vec<f64> = rest.iter().map(|&p| scores[p]).collect();
                let missing = target - chosen.len();
                chosen.extend(ranked(&rest_scores, false).into_iter().take(missing).map(|q| rest[q]));
            }
            Ok(chosen.into_iter().map(|p| majority[p]).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(values: &[f64], labels: Vec<usize>) -> Dataset {
        let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        Dataset::from_rows(&rows, labels).unwrap()
    }

    #[test]
    fn keeps_closest_majority() {
        let ds = one_d(&[0.0, 1.0, 10.0, 2.0], vec![0, 0, 0, 2]);
        let out = nearmiss_undersample(&ds, 0, 2, NearMissVersion::One, 3).unwrap();
        assert_eq!(out.labels(), &[0, 0, 2]);
        assert_eq!(out.column(0).to_vec(), vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn identity_when_target_equals_count() {
        let ds = one_d(&[0.0, 1.0, 10.0, 2.0], vec![0, 0, 0, 2]);
        assert_eq!(nearmiss_undersample(&ds, 0, 3, NearMissVersion::One, 3).unwrap(), ds);
        assert!(matches!(
            nearmiss_undersample(&ds, 0, 4, NearMissVersion::One, 3),
            Err(Error::TooMany { .. })
        ));
    }

    #[test]
    fn version_two_uses_farthest_references() {
        // References at 0 and 10. Farthest-distance means: 5 -> 5, 1 -> 9, 9 -> 9.
        let ds = one_d(&[1.0, 5.0, 9.0, 0.0, 10.0], vec![0, 0, 0, 2, 2]);
        let out = nearmiss_undersample(&ds, 0, 1, NearMissVersion::Two, 1).unwrap();
        assert_eq!(out.column(0).to_vec(), vec![5.0, 0.0, 10.0]);
    }

    #[test]
    fn version_three_prefers_far_shortlisted() {
        // Reference at 0; short-list of its 2 nearest majority rows = {1, 2};
        // of those, the one farther from the reference is kept.
        let ds = one_d(&[1.0, 2.0, 50.0, 0.0], vec![0, 0, 0, 1]);
        let out = nearmiss_undersample(&ds, 0, 1, NearMissVersion::Three, 2).unwrap();
        assert_eq!(out.column(0).to_vec(), vec![2.0, 0.0]);
    }

    #[test]
    fn reference_is_smallest_other_class() {
        // Class 1 (2 rows near 100) is smaller than class 2 (3 rows near 0).
        let ds = one_d(&[1.0, 99.0, 100.0, 101.0, 0.0, 0.5, 0.2], vec![0, 0, 1, 1, 2, 2, 2]);
        let out = nearmiss_undersample(&ds, 0, 1, NearMissVersion::One, 1).unwrap();
        assert_eq!(out.column(0).to_vec()[0], 99.0);
    }
}
