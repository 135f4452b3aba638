use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use readmit_core::data::{
    class_counts, load_dataset, min_max_normalize, stratified_kfold, stratified_subsample, Dataset, FoldPlan,
    CLASS_NAMES, NUM_CLASSES,
};
use readmit_core::ensemble::{binary_subset, cascade_cross_validate, published_annotations, CascadeConfig};
use readmit_core::eval::{cross_validate, fold_seed, grid_sweep, pct, sweep_cells, CvReport, FoldPrep, SweepGrid};
use readmit_core::nn::{self, fit_network, NetworkConfig};
use readmit_core::resample::{resample, ResampleMethod, ResamplePlan};
use readmit_core::select::{per_class_stats, score_features, ScoreMethod, Selection};
use readmit_core::trees::{fit_gbm, fit_random_forest, ForestConfig};

use crate::config::{ModelConfig, ResampleConfig, Resolved};
use crate::report::{confusion_cells, hash_file, metric_cells, strings, Report, Summary, SummaryRow};
use crate::CliError;

const SUBSAMPLE_STREAM: usize = 1000;
const RESAMPLE_STREAM: usize = 1001;
const REGIME_STREAM: usize = 1002;

fn stream(seed: u64, id: usize) -> u64 {
    fold_seed(seed, id)
}

/// The input rows after `fraction`, and the input's content hash.
fn load(r: &Resolved) -> Result<(Dataset, String), CliError> {
    let hash = hash_file(&r.dataset)?;
    let data = load_dataset(&r.dataset, &r.config.label_column)?;
    let data = match r.config.fraction {
        Some(f) if f < 1.0 => data.subset(&stratified_subsample(
            data.labels(),
            f,
            stream(r.seed, SUBSAMPLE_STREAM),
        )?),
        _ => data,
    };
    Ok((data, hash))
}

fn scaled(r: &Resolved, data: Dataset) -> Result<Dataset, CliError> {
    Ok(if r.config.normalize {
        min_max_normalize(&data, None)?.0
    } else {
        data
    })
}

/// Data and folds for a cross-validated experiment. In paper mode every
/// preparation step runs once on the whole dataset before folds are dealt;
/// otherwise each fold prepares its own training split.
struct Setup {
    data: Dataset,
    plan: FoldPlan,
    normalize: bool,
    select: Option<Selection>,
    resample: Option<ResamplePlan>,
}

impl Setup {
    fn new(
        r: &Resolved,
        data: Dataset,
        select: Option<Selection>,
        resample_cfg: Option<&ResampleConfig>,
    ) -> Result<Setup, CliError> {
        let resample_plan = resample_cfg.map(|c| c.plan(stream(r.seed, RESAMPLE_STREAM)));
        if r.config.paper_mode {
            let mut data = scaled(r, data)?;
            if let Some(sel) = select {
                data = data.select_columns(&sel.choose(&data)?);
            }
            if let Some(rp) = &resample_plan {
                data = resample(&data, rp)?;
            }
            let plan = stratified_kfold(data.labels(), r.config.cv.k, r.cv_seed())?;
            Ok(Setup {
                data,
                plan,
                normalize: false,
                select: None,
                resample: None,
            })
        } else {
            let plan = stratified_kfold(data.labels(), r.config.cv.k, r.cv_seed())?;
            Ok(Setup {
                data,
                plan,
                normalize: r.config.normalize,
                select,
                resample: resample_plan,
            })
        }
    }

    fn prep(&self) -> FoldPrep<'_> {
        FoldPrep {
            normalize: self.normalize,
            select: self.select,
            resample: self.resample.as_ref(),
        }
    }
}

fn fit_predict(model: &ModelConfig, train: &Dataset, test: &Dataset, seed: u64) -> readmit_core::Result<Vec<usize>> {
    match model {
        ModelConfig::Network(n) => {
            let (spec, state, _) = fit_network(n, train, NUM_CLASSES, seed)?;
            nn::predict(&spec, &state, test)
        }
        ModelConfig::Gbm(g) => fit_gbm(train, g, NUM_CLASSES)?.predict(test.features().view()),
        ModelConfig::Forest(f) => {
            let cfg = ForestConfig { seed, ..*f };
            fit_random_forest(train, &cfg, NUM_CLASSES)?.predict(test.features().view())
        }
    }
}

fn evaluate(r: &Resolved, setup: &Setup, model: &ModelConfig) -> readmit_core::Result<CvReport> {
    let classifier = |train: &Dataset, test: &Dataset, seed: u64| fit_predict(model, train, test, seed);
    cross_validate(&classifier, &setup.data, &setup.plan, setup.prep(), NUM_CLASSES, r.seed)
}

fn network(r: &Resolved, command: &str) -> Result<NetworkConfig, CliError> {
    match r.config.model {
        ModelConfig::Network(n) => Ok(n),
        _ => Err(CliError::Config(format!(
            "model: `{command}` needs a network model, got {}",
            r.config.model.tag()
        ))),
    }
}

fn counts_cell(counts: [usize; NUM_CLASSES]) -> String {
    counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("/")
}

fn fold_cells(cv: &CvReport) -> Vec<Vec<String>> {
    let mut rows = vec![strings(&[
        "fold",
        "train 0/1/2",
        "test",
        "accuracy",
        "recall",
        "precision",
        "f1",
    ])];
    for f in &cv.folds {
        let m = &f.metrics;
        rows.push(vec![
            (f.fold + 1).to_string(),
            counts_cell(f.train_counts),
            f.test_size.to_string(),
            pct(m.accuracy),
            pct(m.macro_recall),
            pct(m.macro_precision),
            pct(m.macro_f),
        ]);
    }
    rows
}

fn cv_rows(label: &str, cv: &CvReport) -> [SummaryRow; 2] {
    [
        SummaryRow::from_mean(format!("{label} mean"), &cv.mean),
        SummaryRow::from_report(format!("{label} pooled"), &cv.pooled),
    ]
}

fn metric_notes(cv: &CvReport) -> Vec<String> {
    let mut notes: Vec<String> = cv.pooled.notes.iter().map(|n| format!("pooled: {n}")).collect();
    for f in &cv.folds {
        notes.extend(f.metrics.notes.iter().map(|n| format!("fold {}: {n}", f.fold + 1)));
    }
    notes
}

fn new_report(command: &str, r: &Resolved, hash: String) -> Report {
    Report::new(command, Some(&r.config), Some(hash), Some(r.seed))
}

fn class_labels() -> [&'static str; NUM_CLASSES] {
    ["0", "1", "2"]
}

pub fn ingest(r: &Resolved) -> Result<Report, CliError> {
    let (data, hash) = load(r)?;
    let mut rep = new_report("ingest", r, hash);
    let counts = data.class_counts();
    let mut rows = vec![strings(&["class", "name", "count", "share"])];
    for c in 0..NUM_CLASSES {
        rows.push(vec![
            c.to_string(),
            CLASS_NAMES[c].to_string(),
            counts[c].to_string(),
            pct(counts[c] as f64 / data.n_rows().max(1) as f64),
        ]);
    }
    rep.table("classes", rows);
    rep.table(
        "shape",
        vec![
            strings(&["rows", "features"]),
            vec![data.n_rows().to_string(), data.n_features().to_string()],
        ],
    );
    let (_, spec) = min_max_normalize(&data, None)?;
    for j in spec.constant_columns() {
        rep.note(format!(
            "column `{}` is constant and scales to 0",
            data.feature_names()[j]
        ));
    }
    Ok(rep)
}

fn tsv_cells(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect()
}

pub fn stats(r: &Resolved) -> Result<Report, CliError> {
    let (data, hash) = load(r)?;
    let features: Vec<usize> = match r.selection() {
        Some(sel) => sel.choose(&scaled(r, data.clone())?)?,
        None => (0..data.n_features()).collect(),
    };
    let mut rep = new_report("stats", r, hash);
    rep.table(
        "per-class mean / population variance",
        tsv_cells(&per_class_stats(&data, &features)?.to_tsv()),
    );
    rep.note("statistics are computed on unscaled values");
    Ok(rep)
}

pub fn select(r: &Resolved) -> Result<Report, CliError> {
    let methods = match r.config.study.score_methods.as_slice() {
        [] => vec![ScoreMethod::Chi2, ScoreMethod::Pearson, ScoreMethod::AnovaF],
        m => m.to_vec(),
    };
    let ks = &r.config.study.ks;
    let (data, hash) = load(r)?;
    let mut rep = new_report("select", r, hash);
    let full = scaled(r, data.clone())?;
    for &m in &methods {
        let table = score_features(&full, m, r.config.paper_exclusion)?;
        rep.table(format!("scores: {}", m.name()), tsv_cells(&table.to_tsv()));
    }
    if !ks.is_empty() {
        let mut rows = vec![strings(&["method", "k", "accuracy", "recall", "precision", "f1"])];
        for &m in &methods {
            for &k in ks.iter() {
                let sel = Selection {
                    method: m,
                    k,
                    exclude_zero_mean: r.config.paper_exclusion,
                };
                let setup = Setup::new(r, data.clone(), Some(sel), r.config.resample.as_ref())?;
                let cv = evaluate(r, &setup, &r.config.model)?;
                rows.push(vec![
                    m.name().to_string(),
                    k.to_string(),
                    pct(cv.mean.accuracy),
                    pct(cv.mean.macro_recall),
                    pct(cv.mean.macro_precision),
                    pct(cv.mean.macro_f),
                ]);
                rep.summary(SummaryRow::from_mean(format!("{} top {k}", m.name()), &cv.mean));
            }
        }
        rep.table(
            format!(
                "{}-fold comparison, {} (mean of folds)",
                r.config.cv.k,
                r.config.model.tag()
            ),
            rows,
        );
    }
    Ok(rep)
}

pub fn resample_study(r: &Resolved) -> Result<Report, CliError> {
    let methods = match r.config.study.resample_methods.as_slice() {
        [] => ResampleMethod::ALL.to_vec(),
        m => m.to_vec(),
    };
    let (data, hash) = load(r)?;
    let mut rep = new_report("resample", r, hash);
    let base = r.config.resample.clone();
    let mut runs: Vec<(String, Option<ResampleConfig>)> = vec![("none".into(), None)];
    for m in methods {
        let mut c = base.clone().unwrap_or_else(|| ResampleConfig::new(m));
        c.method = m;
        runs.push((m.name().to_string(), Some(c)));
    }

    let full = scaled(r, data.clone())?;
    let mut counts = vec![strings(&["method", "class 0", "class 1", "class 2"])];
    let mut rows = vec![strings(&[
        "method",
        "accuracy",
        "recall",
        "precision",
        "f1",
        "pooled_accuracy",
    ])];
    for (name, cfg) in &runs {
        let after = match cfg {
            Some(c) => resample(&full, &c.plan(stream(r.seed, RESAMPLE_STREAM)))?.class_counts(),
            None => full.class_counts(),
        };
        counts.push(
            std::iter::once(name.clone())
                .chain(after.iter().map(|c| c.to_string()))
                .collect(),
        );
        let setup = Setup::new(r, data.clone(), r.selection(), cfg.as_ref())?;
        let cv = evaluate(r, &setup, &r.config.model)?;
        rows.push(vec![
            name.clone(),
            pct(cv.mean.accuracy),
            pct(cv.mean.macro_recall),
            pct(cv.mean.macro_precision),
            pct(cv.mean.macro_f),
            pct(cv.pooled.accuracy),
        ]);
        rep.summary(SummaryRow::from_mean(name.clone(), &cv.mean));
    }
    rep.table("class counts after resampling the whole dataset", counts);
    rep.table(
        format!(
            "{}-fold comparison, {} (mean of folds)",
            r.config.cv.k,
            r.config.model.tag()
        ),
        rows,
    );
    if !r.config.paper_mode {
        rep.note("folds resample their own training split; test splits are never resampled");
    }
    Ok(rep)
}

pub fn train(r: &Resolved) -> Result<Report, CliError> {
    let (data, hash) = load(r)?;
    let setup = Setup::new(r, data, r.selection(), r.config.resample.as_ref())?;
    let cv = evaluate(r, &setup, &r.config.model)?;
    let mut rep = new_report("train", r, hash);
    rep.table("folds", fold_cells(&cv));
    let rows = cv_rows(r.config.model.tag(), &cv);
    rep.table("summary", metric_cells(&rows));
    rep.table(
        "pooled confusion",
        confusion_cells(&cv.pooled.confusion, &class_labels()),
    );
    for row in rows {
        rep.summary(row);
    }
    rep.notes(metric_notes(&cv));
    Ok(rep)
}

pub fn sweep(r: &Resolved) -> Result<Report, CliError> {
    let base = network(r, "sweep")?;
    let grid = r.config.study.sweep.clone().unwrap_or_else(SweepGrid::vanilla_tuning);
    let (data, hash) = load(r)?;
    let setup = Setup::new(r, data, r.selection(), r.config.resample.as_ref())?;
    let mut summary = Vec::new();
    let rows = grid_sweep(&grid, |pt| {
        let mut n = base;
        n.epochs = pt.epochs;
        n.batch_size = pt.batch_size;
        n.optimizer.learning_rate = pt.learning_rate;
        let cv = evaluate(r, &setup, &ModelConfig::Network(n))?;
        summary.push(SummaryRow::from_mean(
            format!("epochs {} lr {:e} batch {}", pt.epochs, pt.learning_rate, pt.batch_size),
            &cv.mean,
        ));
        Ok(cv)
    })?;
    let mut rep = new_report("sweep", r, hash);
    rep.table(
        format!(
            "{} grid, {}-fold (mean of folds, best first)",
            base.architecture.name(),
            r.config.cv.k
        ),
        sweep_cells(&rows),
    );
    for row in summary {
        rep.summary(row);
    }
    let reference = SweepGrid::vanilla_tuning().points();
    for row in rows
        .iter()
        .filter(|row| row.published_accuracy.is_none() && reference.contains(&row.point))
    {
        rep.note(format!(
            "epochs {}, learning rate {:e}, batch {} is part of the reference grid but has no published result",
            row.point.epochs, row.point.learning_rate, row.point.batch_size
        ));
    }
    Ok(rep)
}

pub fn cascade(r: &Resolved) -> Result<Report, CliError> {
    let cnn = network(r, "cascade")?;
    let (data, hash) = load(r)?;
    let setup = Setup::new(r, data, r.selection(), r.config.resample.as_ref())?;
    let config = CascadeConfig { cnn, gbm: r.config.gbm };
    let out = cascade_cross_validate(&setup.data, &setup.plan, setup.prep(), &config, r.seed)?;

    let mut rep = new_report("cascade", r, hash);
    let mut rows = Vec::new();
    rows.extend(cv_rows(cnn.architecture.name(), &out.cnn));
    rows.extend(cv_rows("cascade", &out.cascade));
    rep.table("summary", metric_cells(&rows));
    for row in rows {
        rep.summary(row);
    }
    let mut folds = vec![strings(&["fold", "test", "network accuracy", "cascade accuracy"])];
    for (c, k) in out.cnn.folds.iter().zip(&out.cascade.folds) {
        folds.push(vec![
            (c.fold + 1).to_string(),
            c.test_size.to_string(),
            pct(c.metrics.accuracy),
            pct(k.metrics.accuracy),
        ]);
    }
    rep.table("folds", folds);
    rep.table(
        "first stage confusion, pooled over folds",
        confusion_cells(&out.cnn.pooled.confusion, &class_labels()),
    );
    rep.table(
        "second stage confusion on routed class-0/2 rows, pooled",
        confusion_cells(&out.gbm_stage, &["0", "2"]),
    );
    rep.table(
        "cascade confusion, pooled",
        confusion_cells(&out.evaluation.combined, &class_labels()),
    );
    rep.table(
        "pooled cascade accuracy",
        vec![
            strings(&["accepted class-1 hits", "second stage hits", "total", "accuracy"]),
            vec![
                out.cnn.pooled.confusion.get(1, 1).to_string(),
                out.gbm_stage.trace().to_string(),
                out.cnn.pooled.confusion.total().to_string(),
                pct(out.evaluation.accuracy),
            ],
        ],
    );
    rep.notes(out.evaluation.warnings.iter().cloned());
    if r.config.paper_mode {
        rep.notes(
            published_annotations()?
                .into_iter()
                .map(|n| format!("published figures: {n}")),
        );
    }
    rep.notes(metric_notes(&out.cascade));
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Every class-2 row and the class-0 rows NearMiss keeps for them.
    Nearmiss,
    /// Every class-2 row and as many class-0 rows drawn at random.
    RandomPair,
    /// All rows, class 2 randomly oversampled to the class-0 count.
    BalancedRandom,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Nearmiss, Regime::RandomPair, Regime::BalancedRandom];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Nearmiss => "nearmiss",
            Regime::RandomPair => "random_pair",
            Regime::BalancedRandom => "balanced_random",
        }
    }

    /// Published 10-fold accuracy for the regime, percent.
    pub fn published(self) -> &'static str {
        match self {
            Regime::Nearmiss => "79.31",
            Regime::RandomPair => "55",
            Regime::BalancedRandom => "68",
        }
    }

    pub fn parse(s: &str) -> Result<Regime, CliError> {
        Regime::ALL.into_iter().find(|g| g.name() == s).ok_or_else(|| {
            CliError::Config(format!(
                "unknown regime `{s}` (expected nearmiss, random_pair or balanced_random)"
            ))
        })
    }

    /// The 0-vs-2 dataset for this regime, labels 0 and 1 standing for 0 and 2.
    fn build(self, binary: &Dataset, seed: u64) -> Result<Dataset, CliError> {
        Ok(match self {
            Regime::Nearmiss => resample(binary, &ResamplePlan::new(ResampleMethod::Nearmiss, seed))?,
            Regime::BalancedRandom => resample(binary, &ResamplePlan::new(ResampleMethod::RandomOver, seed))?,
            Regime::RandomPair => {
                let labels = binary.labels();
                let mut zeros: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
                let mut keep: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
                zeros.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                zeros.truncate(keep.len());
                keep.extend(zeros);
                keep.sort_unstable();
                binary.subset(&keep)
            }
        })
    }
}

pub fn binary_study(r: &Resolved) -> Result<Report, CliError> {
    let regimes: Vec<Regime> = match r.config.study.regimes.as_slice() {
        [] => Regime::ALL.to_vec(),
        names => names.iter().map(|s| Regime::parse(s)).collect::<Result<_, _>>()?,
    };
    let (data, hash) = load(r)?;
    let binary = binary_subset(&scaled(r, data)?)?;
    let mut rep = new_report("binary-study", r, hash);
    let mut rows = vec![strings(&[
        "regime",
        "class 0",
        "class 2",
        "accuracy",
        "recall",
        "precision",
        "f1",
        "published accuracy",
    ])];
    let gbm = r.config.gbm;
    let classifier = |train: &Dataset, test: &Dataset, _: u64| fit_gbm(train, &gbm, 2)?.predict(test.features().view());
    for (i, regime) in regimes.into_iter().enumerate() {
        let set = regime.build(&binary, stream(r.seed, REGIME_STREAM + i))?;
        let counts = class_counts(set.labels());
        let plan = stratified_kfold(set.labels(), r.config.cv.k, r.cv_seed())?;
        let cv = cross_validate(&classifier, &set, &plan, FoldPrep::default(), 2, r.seed)?;
        rows.push(vec![
            regime.name().to_string(),
            counts[0].to_string(),
            counts[1].to_string(),
            pct(cv.mean.accuracy),
            pct(cv.mean.macro_recall),
            pct(cv.mean.macro_precision),
            pct(cv.mean.macro_f),
            regime.published().to_string(),
        ]);
        rep.summary(SummaryRow::from_mean(regime.name(), &cv.mean));
    }
    rep.table(
        format!(
            "class 0 vs class 2, gradient boosting, {}-fold (mean of folds)",
            r.config.cv.k
        ),
        rows,
    );
    rep.note("each regime samples the whole 0/2 dataset once before folds are dealt");
    Ok(rep)
}

pub fn collate(runs: &[PathBuf]) -> Result<Report, CliError> {
    let mut rows = Vec::new();
    let mut sources = vec![strings(&["run", "command", "input_sha1", "seed"])];
    for dir in runs {
        let summary = read_summary(dir)?;
        let name = dir
            .file_name()
            .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        sources.push(vec![
            name.clone(),
            summary.command.clone(),
            summary.input_sha1.clone().unwrap_or_else(|| "-".into()),
            summary.seed.map_or_else(|| "-".into(), |s| s.to_string()),
        ]);
        for mut row in summary.rows {
            row.label = format!("{name}: {}", row.label);
            rows.push(row);
        }
    }
    let mut rep = Report::new("report", None, None, None);
    rep.table("runs", sources);
    rep.table("results", metric_cells(&rows));
    for row in rows {
        rep.summary(row);
    }
    Ok(rep)
}

fn read_summary(dir: &Path) -> Result<Summary, CliError> {
    let path = dir.join("summary.json");
    let text =
        std::fs::read_to_string(&path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_toy() -> Dataset {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i * 7 % 11) as f64]).collect();
        let labels = (0..30).map(|i| usize::from(i % 5 == 0)).collect();
        Dataset::from_rows(&rows, labels).unwrap()
    }

    #[test]
    fn regimes_balance_the_two_classes() {
        let data = binary_toy();
        for regime in Regime::ALL {
            let set = regime.build(&data, 3).unwrap();
            let c = class_counts(set.labels());
            assert_eq!(c[0], c[1], "{}", regime.name());
            let expected = if regime == Regime::BalancedRandom { 24 } else { 6 };
            assert_eq!(c[0], expected, "{}", regime.name());
        }
        assert!(Regime::parse("other").is_err());
    }

    #[test]
    fn random_pair_keeps_every_minority_row() {
        let data = binary_toy();
        let set = Regime::RandomPair.build(&data, 9).unwrap();
        let minority: Vec<&[f64]> = (0..set.n_rows())
            .filter(|&i| set.labels()[i] == 1)
            .map(|i| set.row(i))
            .collect();
        let expected: Vec<&[f64]> = (0..data.n_rows())
            .filter(|&i| data.labels()[i] == 1)
            .map(|i| data.row(i))
            .collect();
        assert_eq!(minority, expected);
    }
}
