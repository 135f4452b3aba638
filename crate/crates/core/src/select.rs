//! Univariate feature scoring, top-k selection and per-class statistics.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, NUM_CLASSES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    Chi2,
    Pearson,
    AnovaF,
}

impl ScoreMethod {
    pub fn name(self) -> &'static str {
        match self {
            ScoreMethod::Chi2 => "chi2",
            ScoreMethod::Pearson => "pearson",
            ScoreMethod::AnovaF => "anova_f",
        }
    }
}

impl std::str::FromStr for ScoreMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chi2" => Ok(ScoreMethod::Chi2),
            "pearson" => Ok(ScoreMethod::Pearson),
            "anova_f" | "anova" => Ok(ScoreMethod::AnovaF),
            other => Err(Error::config(format!("unknown selection method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    ZeroVariance,
    ZeroMean,
    /// The label vector itself has no spread, so no score is defined.
    ConstantTarget,
}

impl Exclusion {
    fn name(self) -> &'static str {
        match self {
            Exclusion::ZeroVariance => "zero-variance",
            Exclusion::ZeroMean => "zero-mean",
            Exclusion::ConstantTarget => "constant-target",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub name: String,
    /// May be `+inf` (ANOVA with zero within-class spread).
    pub score: f64,
    pub rank: Option<usize>,
    pub excluded: Option<Exclusion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScoreTable {
    pub method: ScoreMethod,
    pub entries: Vec<FeatureScore>,
}

impl FeatureScoreTable {
    fn from_scores(method: ScoreMethod, names: &[String], raw: Vec<std::result::Result<f64, Exclusion>>) -> Self {
        let mut entries: Vec<FeatureScore> = names
            .iter()
            .zip(raw)
            .map(|(name, r)| match r {
                Ok(score) => FeatureScore {
                    name: name.clone(),
                    score,
                    rank: None,
                    excluded: None,
                },
                Err(reason) => FeatureScore {
                    name: name.clone(),
                    score: f64::NAN,
                    rank: None,
                    excluded: Some(reason),
                },
            })
            .collect();
        let order = ranked_indices(&entries);
        for (rank, j) in order.into_iter().enumerate() {
            entries[j].rank = Some(rank + 1);
        }
        FeatureScoreTable { method, entries }
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }

    /// Non-excluded feature indices, best first.
    pub fn ranking(&self) -> Vec<usize> {
        ranked_indices(&self.entries)
    }

    pub fn n_scored(&self) -> usize {
        self.entries.iter().filter(|e| e.excluded.is_none()).count()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("feature\tscore\trank\tstatus\n");
        for e in &self.entries {
            let (score, rank, status) = match e.excluded {
                Some(reason) => ("-".to_string(), "-".to_string(), format!("excluded:{}", reason.name())),
                None => (
                    format_score(e.score),
                    e.rank.map_or("-".into(), |r| r.to_string()),
                    "ok".into(),
                ),
            };
            let _ = writeln!(out, "{}\t{}\t{}\t{}", e.name, score, rank, status);
        }
        out
    }
}

fn format_score(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

/// Descending score, lower column index first on ties.
fn ranked_indices(entries: &[FeatureScore]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..entries.len()).filter(|&j| entries[j].excluded.is_none()).collect();
    order.sort_by(|&a, &b| {
        entries[b]
            .score
            .partial_cmp(&entries[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

fn class_priors(labels: &[usize]) -> [f64; NUM_CLASSES] {
    let n = labels.len() as f64;
    let counts = crate::data::class_counts(labels);
    counts.map(|c| c as f64 / n)
}

/// Frequency-style chi-square against the class label.
///
/// For each feature, `observed_c` is the feature's sum over class `c` and
/// `expected_c` is the class prior times the feature's total. Inputs must be
/// non-negative.
pub fn chi_square_scores(data: &Dataset) -> Result<FeatureScoreTable> {
    let labels = data.labels();
    let priors = class_priors(labels);
    let raw: Vec<Result<std::result::Result<f64, Exclusion>>> = (0..data.n_features())
        .into_par_iter()
        .map(|j| {
            let col = data.column(j);
            let mut observed = [0.0; NUM_CLASSES];
            for (&v, &l) in col.iter().zip(labels) {
                if v < 0.0 {
                    return Err(Error::NegativeFeature {
                        feature: data.feature_names()[j].clone(),
                        value: v,
                    });
                }
                observed[l] += v;
            }
            let total: f64 = observed.iter().sum();
            if total == 0.0 {
                return Ok(Err(Exclusion::ZeroMean));
            }
            let score = (0..NUM_CLASSES)
                .filter(|&c| priors[c] > 0.0)
                .map(|c| {
                    let expected = priors[c] * total;
                    (observed[c] - expected).powi(2) / expected
                })
                .sum();
            Ok(Ok(score))
        })
        .collect();
    let raw = raw.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(FeatureScoreTable::from_scores(
        ScoreMethod::Chi2,
        data.feature_names(),
        raw,
    ))
}

/// Absolute Pearson correlation with the numeric label.
///
/// Zero-variance features are always excluded. With `exclude_zero_mean`, any
/// feature whose mean is exactly zero is excluded as well.
pub fn pearson_scores(data: &Dataset, exclude_zero_mean: bool) -> FeatureScoreTable {
    let labels: Vec<f64> = data.labels().iter().map(|&l| l as f64).collect();
    let n = labels.len() as f64;
    let y_mean = labels.iter().sum::<f64>() / n;
    let y_ss: f64 = labels.iter().map(|y| (y - y_mean).powi(2)).sum();
    let raw: Vec<_> = (0..data.n_features())
        .into_par_iter()
        .map(|j| {
            let col = data.column(j);
            let x_mean = col.sum() / n;
            let x_ss: f64 = col.iter().map(|x| (x - x_mean).powi(2)).sum();
            if x_ss == 0.0 {
                return Err(Exclusion::ZeroVariance);
            }
            if exclude_zero_mean && x_mean == 0.0 {
                return Err(Exclusion::ZeroMean);
            }
            if y_ss == 0.0 {
                return Err(Exclusion::ConstantTarget);
            }
            let cross: f64 = col.iter().zip(&labels).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();
            Ok((cross / (x_ss.sqrt() * y_ss.sqrt())).abs())
        })
        .collect();
    FeatureScoreTable::from_scores(ScoreMethod::Pearson, data.feature_names(), raw)
}

/// One-way ANOVA F statistic with the classes as groups.
pub fn anova_f_scores(data: &Dataset) -> FeatureScoreTable {
    let labels = data.labels();
    let counts = crate::data::class_counts(labels);
    let groups = counts.iter().filter(|&&c| c > 0).count();
    let n = labels.len();
    let raw: Vec<_> = (0..data.n_features())
        .into_par_iter()
        .map(|j| {
            let col = data.column(j);
            let mut sums = [0.0; NUM_CLASSES];
            for (&v, &l) in col.iter().zip(labels) {
                sums[l] += v;
            }
            let grand = sums.iter().sum::<f64>() / n as f64;
            let means: Vec<f64> = (0..NUM_CLASSES)
                .map(|c| if counts[c] > 0 { sums[c] / counts[c] as f64 } else { 0.0 })
                .collect();
            let total_ss: f64 = col.iter().map(|x| (x - grand).powi(2)).sum();
            if total_ss == 0.0 {
                return Err(Exclusion::ZeroVariance);
            }
            if groups < 2 {
                return Err(Exclusion::ConstantTarget);
            }
            let within_ss: f64 = col.iter().zip(labels).map(|(x, &l)| (x - means[l]).powi(2)).sum();
            let between_ss: f64 = (0..NUM_CLASSES)
                .filter(|&c| counts[c] > 0)
                .map(|c| counts[c] as f64 * (means[c] - grand).powi(2))
                .sum();
            let ms_between = between_ss / (groups - 1) as f64;
            if within_ss == 0.0 || n <= groups {
                return Ok(if ms_between > 0.0 { f64::INFINITY } else { 0.0 });
            }
            let ms_within = within_ss / (n - groups) as f64;
            Ok(ms_between / ms_within)
        })
        .collect();
    FeatureScoreTable::from_scores(ScoreMethod::AnovaF, data.feature_names(), raw)
}

pub fn score_features(data: &Dataset, method: ScoreMethod, exclude_zero_mean: bool) -> Result<FeatureScoreTable> {
    match method {
        ScoreMethod::Chi2 => chi_square_scores(data),
        ScoreMethod::Pearson => Ok(pearson_scores(data, exclude_zero_mean)),
        ScoreMethod::AnovaF => Ok(anova_f_scores(data)),
    }
}

/// The `k` highest-scoring features, returned in original column order.
pub fn select_k_best(scores: &FeatureScoreTable, k: usize) -> Result<Vec<usize>> {
    let ranking = scores.ranking();
    if k > ranking.len() {
        return Err(Error::TooMany {
            requested: k,
            available: ranking.len(),
        });
    }
    let mut chosen = ranking[..k].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// A scoring method plus how many top features to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub method: ScoreMethod,
    pub k: usize,
    /// Also drop zero-mean features from Pearson scoring.
    #[serde(default)]
    pub exclude_zero_mean: bool,
}

impl Selection {
    /// Column indices chosen on `data`.
    pub fn choose(&self, data: &Dataset) -> Result<Vec<usize>> {
        select_k_best(&score_features(data, self.method, self.exclude_zero_mean)?, self.k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanVar {
    pub mean: f64,
    pub var: f64,
}

/// Mean and population variance of each feature within each class present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStatsTable {
    pub features: Vec<String>,
    pub classes: Vec<usize>,
    /// `stats[f][c]` indexes `features[f]` and `classes[c]`.
    pub stats: Vec<Vec<MeanVar>>,
}

impl ClassStatsTable {
    pub fn get(&self, feature: &str, class: usize) -> Option<MeanVar> {
        let f = self.features.iter().position(|n| n == feature)?;
        let c = self.classes.iter().position(|&k| k == class)?;
        Some(self.stats[f][c])
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("Feature Name");
        for c in &self.classes {
            let _ = write!(out, "\tClass {c} (mean/var)");
        }
        out.push('\n');
        for (name, row) in self.features.iter().zip(&self.stats) {
            out.push_str(name);
            for mv in row {
                let _ = write!(out, "\t{:.6} / {:.6}", mv.mean, mv.var);
            }
            out.push('\n');
        }
        out
    }
}

pub fn per_class_stats(data: &Dataset, features: &[usize]) -> Result<ClassStatsTable> {
    if data.is_empty() {
        return Err(Error::EmptyClass(0));
    }
    if let Some(&bad) = features.iter().find(|&&j| j >= data.n_features()) {
        return Err(Error::shape(format!("feature index {bad} out of range")));
    }
    let counts = data.class_counts();
    let classes: Vec<usize> = (0..NUM_CLASSES).filter(|&c| counts[c] > 0).collect();
    let labels = data.labels();
    let stats = features
        .iter()
        .map(|&j| {
            let col = data.column(j);
            classes
                .iter()
                .map(|&c| {
                    let n = counts[c] as f64;
                    let mean = col
                        .iter()
                        .zip(labels)
                        .filter(|(_, &l)| l == c)
                        .map(|(x, _)| x)
                        .sum::<f64>()
                        / n;
                    let var = col
                        .iter()
                        .zip(labels)
                        .filter(|(_, &l)| l == c)
                        .map(|(x, _)| (x - mean).powi(2))
                        .sum::<f64>()
                        / n;
                    MeanVar { mean, var }
                })
                .collect()
        })
        .collect();
    Ok(ClassStatsTable {
        features: features.iter().map(|&j| data.feature_names()[j].clone()).collect(),
        classes,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(cols: &[Vec<f64>], labels: Vec<usize>) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..labels.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
        Dataset::from_rows(&rows, labels).unwrap()
    }

    #[test]
    fn chi2_proportional_feature_scores_zero() {
        // Per-class sums 2, 2, 2 against priors 1/3 each.
        let ds = toy(&[vec![1.0, 1.0, 2.0, 0.0, 0.5, 1.5]], vec![0, 0, 1, 1, 2, 2]);
        let t = chi_square_scores(&ds).unwrap();
        assert!(t.entries[0].score.abs() < 1e-12);
    }

    #[test]
    fn chi2_class_indicator_scores_highest() {
        // Balanced 9-instance set; the indicator of class 1 against two noisier features.
        let labels = vec![0, 0, 0, 1, 1, 1, 2, 2, 2];
        let indicator: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { 0.0 }).collect();
        let noisy = vec![0.2, 0.9, 0.4, 0.6, 0.3, 0.8, 0.5, 0.1, 0.7];
        let half = vec![1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let ds = toy(&[noisy.clone(), indicator.clone(), half.clone()], labels.clone());
        let t = chi_square_scores(&ds).unwrap();

        // Independent brute-force evaluation of the formula.
        let brute = |col: &[f64]| {
            let total: f64 = col.iter().sum();
            (0..3)
                .map(|c| {
                    let o: f64 = (0..9).filter(|&i| labels[i] == c).map(|i| col[i]).sum();
                    let e = total / 3.0;
                    (o - e) * (o - e) / e
                })
                .sum::<f64>()
        };
        for (j, col) in [noisy, indicator, half].iter().enumerate() {
            assert!((t.entries[j].score - brute(col)).abs() < 1e-12);
        }
        // Indicator: observed (0, 3, 0), expected 1 each -> 1 + 4 + 1 = 6.
        assert!((t.entries[1].score - 6.0).abs() < 1e-12);
        assert_eq!(t.entries[1].rank, Some(1));
    }

    #[test]
    fn chi2_rejects_negative() {
        let ds = toy(&[vec![0.5, -0.1]], vec![0, 1]);
        match chi_square_scores(&ds) {
            Err(Error::NegativeFeature { feature, .. }) => assert_eq!(feature, "f0"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pearson_examples() {
        let labels = vec![0, 1, 2, 0, 1, 2];
        let same: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        let constant = vec![3.0; 6];
        // Gram-Schmidt: start from v, remove its projection on the centred label.
        let v = [1.0, 4.0, 2.0, 8.0, 5.0, 7.0];
        let y_c: Vec<f64> = same.iter().map(|y| y - 1.0).collect();
        let proj = v.iter().zip(&y_c).map(|(a, b)| a * b).sum::<f64>() / y_c.iter().map(|b| b * b).sum::<f64>();
        let orth: Vec<f64> = v.iter().zip(&y_c).map(|(a, b)| a - proj * b).collect();
        let ds = toy(&[same, constant, orth], labels);
        let t = pearson_scores(&ds, false);
        assert!((t.entries[0].score - 1.0).abs() < 1e-12);
        assert_eq!(t.entries[1].excluded, Some(Exclusion::ZeroVariance));
        assert!(t.entries[2].score.abs() < 1e-12);
    }

    #[test]
    fn pearson_zero_mean_exclusion_is_opt_in() {
        let ds = toy(&[vec![-1.0, 0.0, 1.0]], vec![0, 1, 2]);
        assert!(pearson_scores(&ds, false).entries[0].excluded.is_none());
        assert_eq!(pearson_scores(&ds, true).entries[0].excluded, Some(Exclusion::ZeroMean));
    }

    #[test]
    fn anova_examples() {
        let labels = vec![0, 0, 1, 1, 2, 2];
        let same_means = vec![1.0, 3.0, 2.0, 2.0, 0.0, 4.0];
        let separated = vec![1.0, 1.0, 5.0, 5.0, 9.0, 9.0];
        let constant = vec![2.0; 6];
        let ds = toy(&[same_means, separated, constant], labels);
        let t = anova_f_scores(&ds);
        assert_eq!(t.entries[0].score, 0.0);
        assert_eq!(t.entries[1].score, f64::INFINITY);
        assert_eq!(t.entries[1].rank, Some(1));
        assert_eq!(t.entries[2].excluded, Some(Exclusion::ZeroVariance));
    }

    #[test]
    fn anova_matches_direct_mean_squares() {
        // 3 classes x 4 instances.
        let labels = vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2];
        let x = vec![1.0, 2.0, 3.0, 4.0, 2.0, 4.0, 6.0, 8.0, 5.0, 5.0, 6.0, 8.0];
        // Class means 2.5, 5, 6; grand 4.5.
        // MSB = 4 * ((2.5-4.5)^2 + 0.5^2 + 1.5^2) / 2 = 4 * 6.5 / 2 = 13.
        // MSW = (5 + 20 + 6) / 9 = 31 / 9.
        let expected = 13.0 / (31.0 / 9.0);
        let t = anova_f_scores(&toy(&[x], labels));
        assert!((t.entries[0].score - expected).abs() < 1e-12);
    }

    #[test]
    fn select_k_best_rules() {
        let labels = vec![0, 0, 1, 1, 2, 2];
        let a = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let b = vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0];
        let c = a.clone();
        let t = anova_f_scores(&toy(&[a, b, c], labels));
        assert_eq!(select_k_best(&t, 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(select_k_best(&t, 1).unwrap(), vec![1]);
        // Tie between columns 0 and 2 goes to column 0.
        assert_eq!(select_k_best(&t, 2).unwrap(), vec![0, 1]);
        assert!(matches!(select_k_best(&t, 4), Err(Error::TooMany { .. })));
    }

    #[test]
    fn per_class_stats_toy() {
        let ds = toy(&[vec![1.0, 3.0, 2.0, 2.0, 10.0, 0.0]], vec![0, 0, 1, 1, 2, 2]);
        let s = per_class_stats(&ds, &[0]).unwrap();
        assert_eq!(s.classes, vec![0, 1, 2]);
        assert_eq!(s.get("f0", 0), Some(MeanVar { mean: 2.0, var: 1.0 }));
        assert_eq!(s.get("f0", 1), Some(MeanVar { mean: 2.0, var: 0.0 }));
        assert_eq!(s.get("f0", 2), Some(MeanVar { mean: 5.0, var: 25.0 }));
        assert!(s
            .to_tsv()
            .contains("f0\t2.000000 / 1.000000\t2.000000 / 0.000000\t5.000000 / 25.000000"));
    }

    #[test]
    fn per_class_stats_one_class() {
        let ds = toy(&[vec![1.0, 2.0]], vec![2, 2]);
        let s = per_class_stats(&ds, &[0]).unwrap();
        assert_eq!(s.classes, vec![2]);
        assert_eq!(s.stats[0].len(), 1);
    }

    fn arb_dataset() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
        (6usize..30).prop_flat_map(|n| {
            (
                prop::collection::vec(prop::collection::vec(0.0f64..10.0, 4), n),
                prop::collection::vec(0usize..3, n),
            )
        })
    }

    proptest! {
        #[test]
        fn scale_keeps_anova_and_pearson_ranks((rows, labels) in arb_dataset(), factor in 0.1f64..50.0, col in 0usize..4) {
            let ds = Dataset::from_rows(&rows, labels.clone()).unwrap();
            let scaled_rows: Vec<Vec<f64>> = rows.iter().map(|r| {
                let mut r = r.clone();
                r[col] *= factor;
                r
            }).collect();
            let scaled = Dataset::from_rows(&scaled_rows, labels).unwrap();
            for (a, b) in [
                (anova_f_scores(&ds), anova_f_scores(&scaled)),
                (pearson_scores(&ds, false), pearson_scores(&scaled, false)),
            ] {
                for (x, y) in a.scores().iter().zip(b.scores()) {
                    if x.is_finite() {
                        prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
                    }
                }
            }
        }

        #[test]
        fn k_best_is_monotone((rows, labels) in arb_dataset()) {
            let ds = Dataset::from_rows(&rows, labels).unwrap();
            let t = chi_square_scores(&ds).unwrap();
            for k in 0..t.n_scored() {
                let small = select_k_best(&t, k).unwrap();
                let big = select_k_best(&t, k + 1).unwrap();
                prop_assert!(small.iter().all(|j| big.contains(j)));
            }
        }

        #[test]
        fn row_order_does_not_change_scores((rows, labels) in arb_dataset(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let ds = Dataset::from_rows(&rows, labels.clone()).unwrap();
            let mut perm: Vec<usize> = (0..labels.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let shuffled = ds.subset(&perm);
            for method in [ScoreMethod::Chi2, ScoreMethod::Pearson, ScoreMethod::AnovaF] {
                let a = score_features(&ds, method, false).unwrap();
                let b = score_features(&shuffled, method, false).unwrap();
                for (x, y) in a.scores().iter().zip(b.scores()) {
                    if x.is_finite() {
                        prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
                    } else {
                        prop_assert!(x.is_nan() == y.is_nan());
                    }
                }
            }
        }
    }
}
