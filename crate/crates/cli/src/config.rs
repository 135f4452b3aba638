//! Experiment configuration: a JSON file, overridden field by field by flags.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use readmit_core::data::DEFAULT_LABEL_COLUMN;
use readmit_core::eval::SweepGrid;
use readmit_core::nn::{ArchOptions, Architecture, NetworkConfig};
use readmit_core::optim::{OptimizerConfig, OptimizerKind};
use readmit_core::resample::{NearMissVersion, ResampleMethod, ResamplePlan};
use readmit_core::select::{ScoreMethod, Selection};
use readmit_core::trees::{ForestConfig, GbmConfig};

use crate::CliError;

pub const SEED_ENV: &str = "READMIT_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Network(NetworkConfig),
    Gbm(GbmConfig),
    Forest(ForestConfig),
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Network(NetworkConfig {
            architecture: Architecture::Cnn2,
            options: ArchOptions::default(),
            optimizer: OptimizerConfig::new(OptimizerKind::Adam, 1e-4),
            epochs: 10,
            batch_size: 64,
        })
    }
}

impl ModelConfig {
    pub fn tag(&self) -> &'static str {
        match self {
            ModelConfig::Network(n) => n.architecture.name(),
            ModelConfig::Gbm(_) => "gbm",
            ModelConfig::Forest(_) => "forest",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResampleConfig {
    pub method: ResampleMethod,
    #[serde(default = "default_k_neighbors")]
    pub k_neighbors: usize,
    #[serde(default)]
    pub nearmiss_version: NearMissVersion,
    #[serde(default = "default_n_ref")]
    pub n_ref: usize,
}

fn default_k_neighbors() -> usize {
    5
}

fn default_n_ref() -> usize {
    3
}

impl ResampleConfig {
    pub fn new(method: ResampleMethod) -> Self {
        ResampleConfig {
            method,
            k_neighbors: default_k_neighbors(),
            nearmiss_version: NearMissVersion::default(),
            n_ref: default_n_ref(),
        }
    }

    pub fn plan(&self, seed: u64) -> ResamplePlan {
        let mut plan = ResamplePlan::new(self.method, seed);
        plan.k_neighbors = self.k_neighbors;
        plan.nearmiss_version = self.nearmiss_version;
        plan.n_ref = self.n_ref;
        plan
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub method: ScoreMethod,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvConfig {
    #[serde(default = "default_folds")]
    pub k: usize,
    /// Fold shuffling seed; the run seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_folds() -> usize {
    10
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k: default_folds(),
            seed: None,
        }
    }
}

/// Lists swept by the comparison subcommands. Empty lists mean the
/// subcommand's default.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default)]
    pub score_methods: Vec<ScoreMethod>,
    /// Feature counts compared by `select`.
    #[serde(default)]
    pub ks: Vec<usize>,
    #[serde(default)]
    pub resample_methods: Vec<ResampleMethod>,
    #[serde(default)]
    pub sweep: Option<SweepGrid>,
    #[serde(default)]
    pub regimes: Vec<String>,
}

fn yes() -> bool {
    true
}

fn default_label_column() -> String {
    DEFAULT_LABEL_COLUMN.to_string()
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    #[serde(default = "yes")]
    pub normalize: bool,
    #[serde(default)]
    pub selection: Option<SelectionConfig>,
    #[serde(default)]
    pub resample: Option<ResampleConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    /// Second stage of the cascade and the model of the binary study.
    #[serde(default)]
    pub gbm: GbmConfig,
    #[serde(default)]
    pub cv: CvConfig,
    pub seed: Option<u64>,
    /// Stratified share of the rows to keep.
    #[serde(default)]
    pub fraction: Option<f64>,
    /// Normalize, select and resample the whole dataset before splitting
    /// folds, and pool confusions across folds in the cascade report.
    #[serde(default)]
    pub paper_mode: bool,
    /// Drop zero-mean features from Pearson scoring.
    #[serde(default)]
    pub paper_exclusion: bool,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: None,
            label_column: default_label_column(),
            normalize: true,
            selection: None,
            resample: None,
            model: ModelConfig::default(),
            gbm: GbmConfig::default(),
            cv: CvConfig::default(),
            seed: None,
            fraction: None,
            paper_mode: false,
            paper_exclusion: false,
            study: StudyConfig::default(),
            output: default_output(),
        }
    }
}

/// Flags shared by every experiment subcommand. Each one, when given,
/// replaces the matching config field.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Name of the 0/1/2 label column (default: readmitted).
    #[arg(long)]
    pub label_column: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run seed; falls back to the config, then to READMIT_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep a stratified share of the rows, in (0, 1].
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Worker threads for fold-level parallelism (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Preprocess the whole dataset before dealing folds, as the published runs did.
    #[arg(long)]
    pub paper_mode: bool,
    /// Also drop zero-mean features from Pearson scoring.
    #[arg(long)]
    pub paper_exclusion: bool,
    /// Skip min-max scaling.
    #[arg(long)]
    pub no_normalize: bool,
    /// Number of cross-validation folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Feature scoring method: chi2, pearson or anova_f. Needs --k.
    #[arg(long)]
    pub select: Option<String>,
    /// Number of features kept by --select.
    #[arg(long)]
    pub k: Option<usize>,
    /// Resampling method, or `none`.
    #[arg(long)]
    pub resample: Option<String>,
    /// Model tag: an architecture name, `gbm` or `forest`.
    #[arg(long)]
    pub model: Option<String>,
    /// Network optimizer: sgd, adam or adabelief.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Network learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Network training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Network mini-batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Boosting rounds for every gradient-boosting model in the run.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Trees in a random forest model.
    #[arg(long)]
    pub trees: Option<usize>,
}

/// A config with every field resolved, plus its seed.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub dataset: PathBuf,
    pub seed: u64,
}

impl Resolved {
    pub fn selection(&self) -> Option<Selection> {
        self.config.selection.map(|s| Selection {
            method: s.method,
            k: s.k,
            exclude_zero_mean: self.config.paper_exclusion,
        })
    }

    pub fn cv_seed(&self) -> u64 {
        self.config.cv.seed.unwrap_or(self.seed)
    }
}

fn parse<T: std::str::FromStr<Err = readmit_core::Error>>(s: &str) -> Result<T, CliError> {
    s.parse()
        .map_err(|e: readmit_core::Error| CliError::Config(e.to_string()))
}

pub fn read_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
}

/// Applies `args`, then `study` overrides, to the config file (if any).
pub fn resolve(
    args: &CommonArgs,
    study: impl FnOnce(&mut StudyConfig) -> Result<(), CliError>,
    env_seed: Option<String>,
) -> Result<Resolved, CliError> {
    let mut c = match &args.config {
        Some(p) => read_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(d) = &args.data {
        c.dataset = Some(d.clone());
    }
    if let Some(l) = &args.label_column {
        c.label_column = l.clone();
    }
    if let Some(o) = &args.out {
        c.output = o.clone();
    }
    if let Some(s) = args.seed {
        c.seed = Some(s);
    }
    if c.seed.is_none() {
        if let Some(v) = env_seed {
            let s = v
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{SEED_ENV} must be an unsigned integer, got `{v}`")))?;
            c.seed = Some(s);
        }
    }
    if let Some(f) = args.fraction {
        c.fraction = Some(f);
    }
    c.paper_mode |= args.paper_mode;
    c.paper_exclusion |= args.paper_exclusion;
    if args.no_normalize {
        c.normalize = false;
    }
    if let Some(k) = args.folds {
        c.cv.k = k;
    }
    match (&args.select, args.k) {
        (Some(m), Some(k)) => c.selection = Some(SelectionConfig { method: parse(m)?, k }),
        (Some(_), None) => return Err(CliError::Config("--select needs --k".into())),
        (None, Some(k)) => match &mut c.selection {
            Some(sel) => sel.k = k,
            None => {
                return Err(CliError::Config(
                    "--k needs --select or a selection in the config".into(),
                ))
            }
        },
        (None, None) => {}
    }
    if let Some(r) = &args.resample {
        c.resample = if r == "none" {
            None
        } else {
            Some(ResampleConfig::new(parse(r)?))
        };
    }
    if let Some(tag) = &args.model {
        c.model = match tag.as_str() {
            "gbm" => ModelConfig::Gbm(c.gbm),
            "forest" => ModelConfig::Forest(ForestConfig::default()),
            arch => {
                let architecture: Architecture = parse(arch)?;
                match c.model {
                    ModelConfig::Network(n) => ModelConfig::Network(NetworkConfig { architecture, ..n }),
                    _ => match ModelConfig::default() {
                        ModelConfig::Network(n) => ModelConfig::Network(NetworkConfig { architecture, ..n }),
                        other => other,
                    },
                }
            }
        };
    }
    if let Some(r) = args.rounds {
        c.gbm.rounds = r;
        if let ModelConfig::Gbm(g) = &mut c.model {
            g.rounds = r;
        }
    }
    if let Some(t) = args.trees {
        match &mut c.model {
            ModelConfig::Forest(f) => f.n_trees = t,
            _ => return Err(CliError::Config("--trees applies only to the forest model".into())),
        }
    }
    let net_flags = args.optimizer.is_some() || args.lr.is_some() || args.epochs.is_some() || args.batch_size.is_some();
    if net_flags {
        let ModelConfig::Network(n) = &mut c.model else {
            return Err(CliError::Config(
                "--optimizer, --lr, --epochs and --batch-size apply only to network models".into(),
            ));
        };
        if let Some(o) = &args.optimizer {
            n.optimizer.kind = parse(o)?;
        }
        if let Some(lr) = args.lr {
            n.optimizer.learning_rate = lr;
        }
        if let Some(e) = args.epochs {
            n.epochs = e;
        }
        if let Some(b) = args.batch_size {
            n.batch_size = b;
        }
    }
    study(&mut c.study)?;
    validate(c)
}

pub fn parse_list<T: std::str::FromStr<Err = readmit_core::Error>>(items: &[String]) -> Result<Vec<T>, CliError> {
    items.iter().map(|s| parse(s)).collect()
}

fn validate(c: ExperimentConfig) -> Result<Resolved, CliError> {
    let dataset = c
        .dataset
        .clone()
        .ok_or_else(|| CliError::Config("dataset: no input CSV given (use --data or the config)".into()))?;
    let seed = c
        .seed
        .ok_or_else(|| CliError::Config(format!("seed: required (use --seed, the config or {SEED_ENV})")))?;
    if let Some(f) = c.fraction {
        if !(f > 0.0 && f <= 1.0) {
            return Err(CliError::Config(format!("fraction: must be in (0, 1], got {f}")));
        }
    }
    if c.cv.k < 2 {
        return Err(CliError::Config(format!("cv.k: need at least 2 folds, got {}", c.cv.k)));
    }
    if let Some(s) = c.selection {
        if s.k == 0 {
            return Err(CliError::Config("selection.k: must be at least 1".into()));
        }
    }
    for name in &c.study.regimes {
        crate::commands::Regime::parse(name).map_err(|e| CliError::Config(format!("study.regimes: {e}")))?;
    }
    if let ModelConfig::Network(n) = &c.model {
        if n.architecture == Architecture::Custom {
            return Err(CliError::Config(
                "model.architecture: custom networks are not available from the CLI".into(),
            ));
        }
        if n.batch_size == 0 {
            return Err(CliError::Config("model.batch_size: must be at least 1".into()));
        }
        n.optimizer
            .validate()
            .map_err(|e| CliError::Config(format!("model.optimizer: {e}")))?;
    }
    Ok(Resolved {
        dataset,
        seed,
        config: c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args() -> CommonArgs {
        CommonArgs {
            data: Some("x.csv".into()),
            ..CommonArgs::default()
        }
    }

    #[test]
    fn seed_precedence() {
        let mut a = args();
        assert!(matches!(resolve(&a, |_| Ok(()), None), Err(CliError::Config(_))));
        assert_eq!(resolve(&a, |_| Ok(()), Some("7".into())).unwrap().seed, 7);
        a.seed = Some(3);
        assert_eq!(resolve(&a, |_| Ok(()), Some("7".into())).unwrap().seed, 3);
        a.seed = None;
        assert!(resolve(&a, |_| Ok(()), Some("seven".into())).is_err());
    }

    #[test]
    fn flags_override_model_fields() {
        let mut a = args();
        a.seed = Some(1);
        a.model = Some("vanilla".into());
        a.lr = Some(0.01);
        a.batch_size = Some(16);
        let r = resolve(&a, |_| Ok(()), None).unwrap();
        let ModelConfig::Network(n) = r.config.model else {
            panic!()
        };
        assert_eq!(n.architecture, Architecture::Vanilla);
        assert_eq!(n.optimizer.learning_rate, 0.01);
        assert_eq!(n.batch_size, 16);
        assert_eq!(n.epochs, 10);

        a.model = Some("gbm".into());
        assert!(matches!(resolve(&a, |_| Ok(()), None), Err(CliError::Config(_))));
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_fields() {
        let mut a = args();
        a.seed = Some(5);
        a.select = Some("anova_f".into());
        a.k = Some(16);
        a.resample = Some("adasyn".into());
        let r = resolve(&a, |_| Ok(()), None).unwrap();
        let json = serde_json::to_string_pretty(&r.config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r.config);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"dataset": "a.csv", "sed": 1}"#).is_err());
    }

    #[test]
    fn invalid_fields_are_named() {
        let mut a = args();
        a.seed = Some(1);
        a.fraction = Some(1.5);
        let Err(CliError::Config(msg)) = resolve(&a, |_| Ok(()), None) else {
            panic!()
        };
        assert!(msg.starts_with("fraction"));
        a.fraction = None;
        a.folds = Some(1);
        let Err(CliError::Config(msg)) = resolve(&a, |_| Ok(()), None) else {
            panic!()
        };
        assert!(msg.starts_with("cv.k"));
        a.folds = None;
        a.resample = Some("bogus".into());
        assert!(matches!(resolve(&a, |_| Ok(()), None), Err(CliError::Config(_))));
    }
}
