//! Two-stage cascade: the network's class-1 predictions are final, and a
//! binary boosting model re-decides every other row between classes 0 and 2.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FoldPlan, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::eval::{confusion, metrics, run_folds, ConfusionMatrix, CvReport, FoldPrep, FoldResult, MetricsReport};
use crate::nn::{self, NetworkConfig, NetworkSpec, NetworkState};
use crate::resample::{resample, ResamplePlan};
use crate::trees::{fit_gbm, GbmConfig, GbmModel};

/// Class whose network predictions are accepted.
pub const ACCEPTED_CLASS: usize = 1;
/// Original classes behind the boosting model's outputs 0 and 1.
pub const GBM_CLASSES: [usize; 2] = [0, 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeModel {
    pub cnn_spec: NetworkSpec,
    pub cnn_state: NetworkState,
    pub gbm: GbmModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub cnn: NetworkConfig,
    #[serde(default)]
    pub gbm: GbmConfig,
}

/// Rows labelled 0 or 2, relabelled 0 and 1.
pub fn binary_subset(data: &Dataset) -> Result<Dataset> {
    let rows: Vec<usize> = (0..data.n_rows())
        .filter(|&i| GBM_CLASSES.contains(&data.labels()[i]))
        .collect();
    let sub = data.subset(&rows);
    let labels = sub.labels().iter().map(|&y| usize::from(y == GBM_CLASSES[1])).collect();
    sub.with_labels(labels)
}

/// Trains both stages. The network sees the (optionally resampled) training
/// set; the boosting model sees its class-0 and class-2 rows with true labels.
pub fn cascade_fit(
    train: &Dataset,
    config: &CascadeConfig,
    resample_plan: Option<&ResamplePlan>,
    seed: u64,
) -> Result<CascadeModel> {
    let counts = train.class_counts();
    if let Some(c) = (0..NUM_CLASSES).find(|&c| counts[c] == 0) {
        return Err(Error::EmptyClass(c));
    }
    let train = match resample_plan {
        Some(rp) => resample(train, rp)?,
        None => train.clone(),
    };
    let (cnn_spec, cnn_state, _) = nn::fit_network(&config.cnn, &train, NUM_CLASSES, seed)?;
    let gbm = fit_gbm(&binary_subset(&train)?, &config.gbm, 2)?;
    Ok(CascadeModel {
        cnn_spec,
        cnn_state,
        gbm,
    })
}

/// Combines first-stage predictions with second-stage binary outputs for the
/// rows the first stage did not accept, in row order.
pub fn route(cnn_preds: &[usize], gbm_binary: &[usize]) -> Result<Vec<usize>> {
    let mut rest = gbm_binary.iter();
    let out = cnn_preds
        .iter()
        .map(|&p| {
            if p == ACCEPTED_CLASS {
                Ok(ACCEPTED_CLASS)
            } else {
                rest.next()
                    .map(|&b| GBM_CLASSES[b.min(1)])
                    .ok_or_else(|| Error::shape("fewer second-stage outputs than routed rows"))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if rest.next().is_some() {
        return Err(Error::shape("more second-stage outputs than routed rows"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadePrediction {
    pub cnn: Vec<usize>,
    pub labels: Vec<usize>,
}

pub fn cascade_predict(model: &CascadeModel, data: &Dataset) -> Result<CascadePrediction> {
    let cnn = nn::predict(&model.cnn_spec, &model.cnn_state, data)?;
    let routed: Vec<usize> = (0..data.n_rows()).filter(|&i| cnn[i] != ACCEPTED_CLASS).collect();
    let gbm = if routed.is_empty() {
        Vec::new()
    } else {
        model.gbm.predict(data.subset(&routed).features().view())?
    };
    let labels = route(&cnn, &gbm)?;
    Ok(CascadePrediction { cnn, labels })
}

/// Second-stage confusion over the routed rows whose true class is 0 or 2,
/// as a 2 × 2 matrix indexed by position in [`GBM_CLASSES`].
pub fn gbm_stage_confusion(cnn: &[usize], labels: &[usize], truth: &[usize]) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::new(2);
    for i in 0..truth.len() {
        if cnn[i] == ACCEPTED_CLASS || !GBM_CLASSES.contains(&truth[i]) {
            continue;
        }
        let pos = |c: usize| GBM_CLASSES.iter().position(|&g| g == c);
        if let (Some(p), Some(a)) = (pos(labels[i]), pos(truth[i])) {
            cm.add(p, a, 1);
        }
    }
    cm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeEvaluation {
    /// `(accepted hits + second-stage hits) / first-stage total`.
    pub accuracy: f64,
    pub combined: ConfusionMatrix,
    pub metrics: MetricsReport,
    pub expected_gbm_total: u64,
    pub gbm_total: u64,
    pub warnings: Vec<String>,
}

/// Assembles the cascade's 3 × 3 confusion from the first-stage matrix and
/// the second-stage 2 × 2 matrix over classes 0 and 2.
///
/// The combined matrix takes the accepted row from the first stage, places the
/// second-stage counts in rows and columns 0 and 2, and keeps true class-1
/// rows the first stage routed away in the rows where it put them.
pub fn cascade_evaluate(cnn: &ConfusionMatrix, gbm: &ConfusionMatrix) -> Result<CascadeEvaluation> {
    if cnn.classes() != NUM_CLASSES || gbm.classes() != 2 {
        return Err(Error::shape(
            "cascade evaluation needs a 3 × 3 and a 2 × 2 confusion matrix",
        ));
    }
    let a = ACCEPTED_CLASS;
    let misrouted: u64 = (0..NUM_CLASSES).filter(|&p| p != a).map(|p| cnn.get(p, a)).sum();
    let expected_gbm_total = cnn.total() - cnn.row_sum(a) - misrouted;
    let mut warnings = Vec::new();
    if gbm.total() != expected_gbm_total {
        warnings.push(format!(
            "second-stage matrix totals {} but the first stage routed {} class-0/2 rows",
            gbm.total(),
            expected_gbm_total
        ));
    }
    let mut combined = ConfusionMatrix::new(NUM_CLASSES);
    for actual in 0..NUM_CLASSES {
        combined.add(a, actual, cnn.get(a, actual));
    }
    for p in 0..NUM_CLASSES {
        if p != a {
            combined.add(p, a, cnn.get(p, a));
        }
    }
    for (pi, &p) in GBM_CLASSES.iter().enumerate() {
        for (ai, &actual) in GBM_CLASSES.iter().enumerate() {
            combined.add(p, actual, gbm.get(pi, ai));
        }
    }
    let hits = cnn.get(a, a) + gbm.trace();
    let accuracy = if cnn.total() == 0 {
        0.0
    } else {
        hits as f64 / cnn.total() as f64
    };
    Ok(CascadeEvaluation {
        accuracy,
        metrics: metrics(&combined)?,
        combined,
        expected_gbm_total,
        gbm_total: gbm.total(),
        warnings,
    })
}

/// Note comparing a published percentage with a computed fraction, or
/// `None` when they agree to two decimals.
pub fn claim_annotation(what: &str, claimed_pct: f64, computed: f64) -> Option<String> {
    let shown = crate::eval::pct(computed);
    if shown == format!("{claimed_pct:.2}") {
        None
    } else {
        Some(format!(
            "{what}: published {claimed_pct:.2}%, computed {shown}% from the same counts"
        ))
    }
}

/// Published first-stage counts on the 106880-row resampled set, rows
/// predicted 0/1/2, columns actual 0/1/2.
pub const PUBLISHED_FIRST_STAGE: [[u64; 3]; 3] = [[22279, 97, 12255], [5744, 25888, 5989], [13130, 263, 21235]];
/// Published second-stage counts, rows predicted 0/2, columns actual 0/2.
pub const PUBLISHED_SECOND_STAGE: [[u64; 2]; 2] = [[22279, 12255], [13130, 21235]];
/// Published cascade accuracy, percent.
pub const PUBLISHED_ACCURACY: f64 = 64.94;
/// Row total stated for the second-stage matrix.
pub const PUBLISHED_SECOND_STAGE_TOTAL: u64 = 80632;
/// Published cascade recall, precision and F1, percent.
pub const PUBLISHED_SCORES: (f64, f64, f64) = (68.87, 65.04, 61.56);

pub fn published_matrices() -> (ConfusionMatrix, ConfusionMatrix) {
    let rows = |m: &[[u64; 3]]| m.iter().map(|r| r.to_vec()).collect();
    let first = ConfusionMatrix::from_counts(rows(&PUBLISHED_FIRST_STAGE)).expect("square");
    let second =
        ConfusionMatrix::from_counts(PUBLISHED_SECOND_STAGE.iter().map(|r| r.to_vec()).collect()).expect("square");
    (first, second)
}

/// Recomputes the published cascade figures from the published counts and
/// lists every figure that does not follow from them.
pub fn published_annotations() -> Result<Vec<String>> {
    let (first, second) = published_matrices();
    let eval = cascade_evaluate(&first, &second)?;
    let mut notes = Vec::new();
    notes.extend(claim_annotation("cascade accuracy", PUBLISHED_ACCURACY, eval.accuracy));
    if second.total() != PUBLISHED_SECOND_STAGE_TOTAL {
        notes.push(format!(
            "second-stage total: published {PUBLISHED_SECOND_STAGE_TOTAL}, but its cells sum to {}, the {} rows the first stage routes away less the {} class-1 rows among them",
            second.total(),
            first.total() - first.row_sum(ACCEPTED_CLASS),
            first.total() - first.row_sum(ACCEPTED_CLASS) - eval.expected_gbm_total
        ));
    }
    let (r, p, f) = PUBLISHED_SCORES;
    let h = crate::eval::harmonic_mean(p, r);
    if crate::eval::round_half_up(h, 2) != f {
        notes.push(format!(
            "cascade F1: published {f:.2}, harmonic mean of the published {p:.2} precision and {r:.2} recall is {h:.2}"
        ));
    }
    if first.column_sum(ACCEPTED_CLASS) != first.row_sum(ACCEPTED_CLASS) {
        notes.push(format!(
            "class-1 count: the published 26248 is the actual-class column sum ({}); rows predicted 1 sum to {}",
            first.column_sum(ACCEPTED_CLASS),
            first.row_sum(ACCEPTED_CLASS)
        ));
    }
    Ok(notes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeCvReport {
    pub cnn: CvReport,
    pub cascade: CvReport,
    /// Second-stage confusion pooled over folds.
    pub gbm_stage: ConfusionMatrix,
    /// [`cascade_evaluate`] on the pooled first- and second-stage matrices.
    pub evaluation: CascadeEvaluation,
}

/// Cross-validated cascade: both stages fit on each training split and the
/// network alone and the full cascade are scored on the same test rows.
pub fn cascade_cross_validate(
    data: &Dataset,
    plan: &FoldPlan,
    prep: FoldPrep<'_>,
    config: &CascadeConfig,
    seed: u64,
) -> Result<CascadeCvReport> {
    let per_fold = run_folds(data, plan, prep, seed, |split| {
        let model = cascade_fit(&split.train, config, None, split.seed)?;
        let pred = cascade_predict(&model, &split.test)?;
        let truth = split.test.labels();
        let fold = |preds: &[usize]| -> Result<FoldResult> {
            Ok(FoldResult {
                fold: split.fold,
                train_counts: split.train.class_counts(),
                test_size: split.test.n_rows(),
                metrics: metrics(&confusion(preds, truth, NUM_CLASSES)?)?,
            })
        };
        Ok((
            fold(&pred.cnn)?,
            fold(&pred.labels)?,
            gbm_stage_confusion(&pred.cnn, &pred.labels, truth),
        ))
    })?;
    let mut gbm_stage = ConfusionMatrix::new(2);
    let mut cnn_folds = Vec::new();
    let mut cascade_folds = Vec::new();
    for (c, k, g) in per_fold {
        gbm_stage.merge(&g)?;
        cnn_folds.push(c);
        cascade_folds.push(k);
    }
    let cnn = CvReport::from_folds(cnn_folds, NUM_CLASSES)?;
    let cascade = CvReport::from_folds(cascade_folds, NUM_CLASSES)?;
    let evaluation = cascade_evaluate(&cnn.pooled.confusion, &gbm_stage)?;
    Ok(CascadeCvReport {
        cnn,
        cascade,
        gbm_stage,
        evaluation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Routing {
    accepted_class: usize,
    gbm_classes: [usize; 2],
}

/// Writes `cnn.rlnn`, `cnn_spec.json`, `gbm.json` and `routing.json` into `dir`.
pub fn save_cascade(model: &CascadeModel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    nn::save_state(&model.cnn_state, &dir.join("cnn.rlnn"))?;
    write_json(&dir.join("cnn_spec.json"), &model.cnn_spec)?;
    write_json(&dir.join("gbm.json"), &model.gbm)?;
    write_json(
        &dir.join("routing.json"),
        &Routing {
            accepted_class: ACCEPTED_CLASS,
            gbm_classes: GBM_CLASSES,
        },
    )
}

pub fn load_cascade(dir: &Path) -> Result<CascadeModel> {
    let routing: Routing = read_json(&dir.join("routing.json"))?;
    if routing.accepted_class != ACCEPTED_CLASS || routing.gbm_classes != GBM_CLASSES {
        return Err(Error::Format(format!("unsupported routing {routing:?}")));
    }
    let cnn_spec: NetworkSpec = read_json(&dir.join("cnn_spec.json"))?;
    let cnn_state = nn::load_state(&dir.join("cnn.rlnn"))?;
    cnn_state.check(&cnn_spec)?;
    Ok(CascadeModel {
        cnn_spec,
        cnn_state,
        gbm: read_json(&dir.join("gbm.json"))?,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
