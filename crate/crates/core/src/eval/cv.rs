use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::confusion::{confusion, ConfusionMatrix};
use super::metrics::{metrics, MetricsReport};
use crate::data::{min_max_normalize, Dataset, FoldPlan, NUM_CLASSES};
use crate::error::Result;
use crate::resample::{resample, ResamplePlan};
use crate::select::Selection;

/// Anything that can be trained on one split and asked to label another.
pub trait Classifier: Sync {
    /// Fits a fresh model on `train` and predicts every row of `test`.
    fn fit_predict(&self, train: &Dataset, test: &Dataset, seed: u64) -> Result<Vec<usize>>;
}

impl<F> Classifier for F
where
    F: Fn(&Dataset, &Dataset, u64) -> Result<Vec<usize>> + Sync,
{
    fn fit_predict(&self, train: &Dataset, test: &Dataset, seed: u64) -> Result<Vec<usize>> {
        self(train, test, seed)
    }
}

/// Seed for fold `fold` derived from a run seed.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    let mut z = seed ^ (fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// What happens to a fold's rows before the model sees them.
#[derive(Debug, Clone, Copy, Default)]
pub struct FoldPrep<'a> {
    /// Min-max scale both splits with ranges fit on the training split.
    pub normalize: bool,
    /// Keep the top features as scored on the training split.
    pub select: Option<Selection>,
    /// Resample the prepared training split with a fold-specific seed.
    pub resample: Option<&'a ResamplePlan>,
}

impl<'a> FoldPrep<'a> {
    pub fn resampled(plan: &'a ResamplePlan) -> Self {
        FoldPrep {
            resample: Some(plan),
            ..FoldPrep::default()
        }
    }
}

/// Training and test splits of one fold after [`FoldPrep`]: scaling, then
/// selection, then resampling.
#[derive(Debug, Clone)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Dataset,
    pub test: Dataset,
    pub seed: u64,
}

pub fn fold_split(data: &Dataset, plan: &FoldPlan, fold: usize, prep: FoldPrep<'_>, seed: u64) -> Result<FoldSplit> {
    let mut train = data.subset(&plan.train_indices(fold));
    let mut test = data.subset(plan.test_indices(fold));
    if prep.normalize {
        let (scaled, spec) = min_max_normalize(&train, None)?;
        test = spec.apply(&test)?;
        train = scaled;
    }
    if let Some(sel) = prep.select {
        let cols = sel.choose(&train)?;
        train = train.select_columns(&cols);
        test = test.select_columns(&cols);
    }
    let seed = fold_seed(seed, fold);
    let train = match prep.resample {
        Some(rp) => {
            let mut rp = rp.clone();
            rp.seed = fold_seed(rp.seed, fold);
            resample(&train, &rp)?
        }
        None => train,
    };
    Ok(FoldSplit {
        fold,
        train,
        test,
        seed,
    })
}

/// Runs `job` on every fold in parallel; results come back in fold order.
pub fn run_folds<T, J>(data: &Dataset, plan: &FoldPlan, prep: FoldPrep<'_>, seed: u64, job: J) -> Result<Vec<T>>
where
    T: Send,
    J: Fn(FoldSplit) -> Result<T> + Sync,
{
    (0..plan.k)
        .into_par_iter()
        .map(|f| job(fold_split(data, plan, f, prep, seed)?))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_counts: [usize; NUM_CLASSES],
    pub test_size: usize,
    pub metrics: MetricsReport,
}

/// Unweighted means of per-fold metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f: f64,
}

impl MeanMetrics {
    pub fn of(reports: &[&MetricsReport]) -> MeanMetrics {
        let n = reports.len().max(1) as f64;
        let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
        MeanMetrics {
            accuracy: avg(|r| r.accuracy),
            macro_precision: avg(|r| r.macro_precision),
            macro_recall: avg(|r| r.macro_recall),
            macro_f: avg(|r| r.macro_f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    pub mean: MeanMetrics,
    /// Metrics of the confusion matrix summed over folds.
    pub pooled: MetricsReport,
}

impl CvReport {
    pub fn from_folds(folds: Vec<FoldResult>, classes: usize) -> Result<CvReport> {
        let mut pooled = ConfusionMatrix::new(classes);
        for f in &folds {
            pooled.merge(&f.metrics.confusion)?;
        }
        let mean = MeanMetrics::of(&folds.iter().map(|f| &f.metrics).collect::<Vec<_>>());
        Ok(CvReport {
            folds,
            mean,
            pooled: metrics(&pooled)?,
        })
    }
}

/// k-fold evaluation: per fold, prepare the splits, fit on the training split
/// and score the test split.
pub fn cross_validate<C: Classifier>(
    model: &C,
    data: &Dataset,
    plan: &FoldPlan,
    prep: FoldPrep<'_>,
    classes: usize,
    seed: u64,
) -> Result<CvReport> {
    let folds = run_folds(data, plan, prep, seed, |split| {
        let preds = model.fit_predict(&split.train, &split.test, split.seed)?;
        let cm = confusion(&preds, split.test.labels(), classes)?;
        Ok(FoldResult {
            fold: split.fold,
            train_counts: split.train.class_counts(),
            test_size: split.test.n_rows(),
            metrics: metrics(&cm)?,
        })
    })?;
    CvReport::from_folds(folds, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::stratified_kfold;
    use crate::resample::ResampleMethod;

    fn balanced(n_per_class: usize) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..3 * n_per_class).map(|i| vec![i as f64, (i % 7) as f64]).collect();
        let labels = (0..3 * n_per_class).map(|i| i % 3).collect();
        Dataset::from_rows(&rows, labels).unwrap()
    }

    #[test]
    fn constant_model_scores_one_third() {
        let data = balanced(30);
        let plan = stratified_kfold(data.labels(), 10, 1).unwrap();
        let constant = |_: &Dataset, test: &Dataset, _: u64| Ok(vec![0; test.n_rows()]);
        let report = cross_validate(&constant, &data, &plan, FoldPrep::default(), 3, 0).unwrap();
        assert!((report.mean.accuracy - 1.0 / 3.0).abs() < 1e-12);
        assert!((report.pooled.accuracy - 1.0 / 3.0).abs() < 1e-12);
        assert!((report.pooled.macro_recall - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_is_fit_on_the_training_split() {
        let data = balanced(10);
        let plan = stratified_kfold(data.labels(), 5, 2).unwrap();
        let prep = FoldPrep {
            normalize: true,
            ..FoldPrep::default()
        };
        for fold in 0..plan.k {
            let split = fold_split(&data, &plan, fold, prep, 0).unwrap();
            let col: Vec<f64> = split.train.column(0).to_vec();
            assert_eq!(col.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
            assert_eq!(col.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
            let train_idx = plan.train_indices(fold);
            let lo = train_idx.iter().map(|&i| data.row(i)[0]).fold(f64::INFINITY, f64::min);
            let hi = train_idx
                .iter()
                .map(|&i| data.row(i)[0])
                .fold(f64::NEG_INFINITY, f64::max);
            for (r, &i) in plan.test_indices(fold).iter().enumerate() {
                let expected = (data.row(i)[0] - lo) / (hi - lo);
                assert!((split.test.row(r)[0] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn selection_narrows_both_splits() {
        let data = balanced(10);
        let plan = stratified_kfold(data.labels(), 5, 2).unwrap();
        let sel = Selection {
            method: crate::select::ScoreMethod::AnovaF,
            k: 1,
            exclude_zero_mean: false,
        };
        let prep = FoldPrep {
            normalize: true,
            select: Some(sel),
            resample: None,
        };
        let split = fold_split(&data, &plan, 0, prep, 0).unwrap();
        assert_eq!(split.train.n_features(), 1);
        assert_eq!(split.test.n_features(), 1);
        assert_eq!(split.train.feature_names(), split.test.feature_names());
    }

    #[test]
    fn memorizer_never_sees_test_rows() {
        // Labels are unrelated to features; a lookup table can only guess.
        let rows = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let data = Dataset::from_rows(&rows, vec![0, 1, 1, 0]).unwrap();
        let plan = stratified_kfold(data.labels(), 2, 5).unwrap();
        let memorize = |train: &Dataset, test: &Dataset, _: u64| {
            Ok((0..test.n_rows())
                .map(|i| {
                    (0..train.n_rows())
                        .find(|&j| train.row(j) == test.row(i))
                        .map_or(0, |j| train.labels()[j])
                })
                .collect())
        };
        let report = cross_validate(&memorize, &data, &plan, FoldPrep::default(), 3, 0).unwrap();
        for f in &report.folds {
            assert_eq!(f.metrics.accuracy, 0.5);
        }
        let split = fold_split(&data, &plan, 0, FoldPrep::default(), 0).unwrap();
        let on_train = memorize(&split.train, &split.train, 0).unwrap();
        assert_eq!(on_train, split.train.labels());
    }

    #[test]
    fn pooled_accuracy_is_weighted_mean_of_folds() {
        let data = balanced(23);
        let plan = stratified_kfold(data.labels(), 4, 3).unwrap();
        let parity = |_: &Dataset, test: &Dataset, _: u64| {
            Ok((0..test.n_rows()).map(|i| (test.row(i)[1] as usize) % 3).collect())
        };
        let report = cross_validate(&parity, &data, &plan, FoldPrep::default(), 3, 0).unwrap();
        let weighted: f64 = report
            .folds
            .iter()
            .map(|f| f.metrics.accuracy * f.test_size as f64)
            .sum::<f64>()
            / data.n_rows() as f64;
        assert!((weighted - report.pooled.accuracy).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_report_and_resampling_touches_train_only() {
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|i| vec![(i * 13 % 17) as f64, (i * 7 % 11) as f64])
            .collect();
        let labels: Vec<usize> = (0..60)
            .map(|i| {
                if i < 36 {
                    0
                } else if i < 50 {
                    1
                } else {
                    2
                }
            })
            .collect();
        let data = Dataset::from_rows(&rows, labels).unwrap();
        let plan = stratified_kfold(data.labels(), 3, 9).unwrap();
        let rp = ResamplePlan::new(ResampleMethod::Smote, 4);
        let nearest_mean = |train: &Dataset, test: &Dataset, _: u64| {
            let mut means = [[0.0; 2]; 3];
            let counts = train.class_counts();
            for i in 0..train.n_rows() {
                for j in 0..2 {
                    means[train.labels()[i]][j] += train.row(i)[j] / counts[train.labels()[i]] as f64;
                }
            }
            Ok((0..test.n_rows())
                .map(|i| {
                    let d = |c: usize| (0..2).map(|j| (test.row(i)[j] - means[c][j]).powi(2)).sum::<f64>();
                    (0..3).min_by(|&a, &b| d(a).total_cmp(&d(b))).unwrap()
                })
                .collect())
        };
        let a = cross_validate(&nearest_mean, &data, &plan, FoldPrep::resampled(&rp), 3, 11).unwrap();
        let b = cross_validate(&nearest_mean, &data, &plan, FoldPrep::resampled(&rp), 3, 11).unwrap();
        assert_eq!(a, b);
        for f in &a.folds {
            assert_eq!(f.train_counts, [24, 24, 24]);
            assert_eq!(f.test_size, 20);
        }
        assert_eq!(a.pooled.confusion.total(), 60);
    }
}
