//! Class-balance correction over a shared exact k-NN backend.
//!
//! Oversamplers append synthetic rows after the untouched originals; NearMiss
//! drops majority rows and keeps everything else in its original order.

pub mod knn;
mod nearmiss;
pub mod svm;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{class_counts, indices_by_class, Dataset, NUM_CLASSES};
use crate::error::{Error, Result};

use knn::{knn_batch, knn_self, Points};
pub use nearmiss::{nearmiss_undersample, NearMissVersion};
use svm::LinearMargin;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMethod {
    Smote,
    BorderlineSmote,
    SvmSmote,
    Adasyn,
    RandomOver,
    Nearmiss,
}

impl ResampleMethod {
    pub const ALL: [ResampleMethod; 6] = [
        ResampleMethod::Smote,
        ResampleMethod::BorderlineSmote,
        ResampleMethod::SvmSmote,
        ResampleMethod::Adasyn,
        ResampleMethod::RandomOver,
        ResampleMethod::Nearmiss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ResampleMethod::Smote => "smote",
            ResampleMethod::BorderlineSmote => "borderline_smote",
            ResampleMethod::SvmSmote => "svm_smote",
            ResampleMethod::Adasyn => "adasyn",
            ResampleMethod::RandomOver => "random_over",
            ResampleMethod::Nearmiss => "nearmiss",
        }
    }

    pub fn is_oversampler(self) -> bool {
        self != ResampleMethod::Nearmiss
    }
}

impl std::str::FromStr for ResampleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ResampleMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown resample method `{s}`")))
    }
}

fn default_k() -> usize {
    5
}

fn default_n_ref() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResamplePlan {
    pub method: ResampleMethod,
    #[serde(default = "default_k")]
    pub k_neighbors: usize,
    pub seed: u64,
    /// Desired rows per class. `None` equalizes to the majority for
    /// oversamplers and to the minority for NearMiss.
    #[serde(default)]
    pub target_counts: Option<BTreeMap<usize, usize>>,
    #[serde(default)]
    pub nearmiss_version: NearMissVersion,
    #[serde(default = "default_n_ref")]
    pub n_ref: usize,
}

impl ResamplePlan {
    pub fn new(method: ResampleMethod, seed: u64) -> Self {
        ResamplePlan {
            method,
            k_neighbors: default_k(),
            seed,
            target_counts: None,
            nearmiss_version: NearMissVersion::default(),
            n_ref: default_n_ref(),
        }
    }

    pub fn with_targets(mut self, targets: impl IntoIterator<Item = (usize, usize)>) -> Self {
        self.target_counts = Some(targets.into_iter().collect());
        self
    }

    /// Concrete per-class targets for `labels`.
    pub fn resolve_targets(&self, labels: &[usize]) -> Result<[usize; NUM_CLASSES]> {
        let counts = class_counts(labels);
        let mut targets = counts;
        match &self.target_counts {
            Some(explicit) => {
                for (&class, &count) in explicit {
                    if class >= NUM_CLASSES {
                        return Err(Error::config(format!("target for unknown class {class}")));
                    }
                    targets[class] = count;
                }
            }
            None => {
                let present = counts.iter().copied().filter(|&c| c > 0);
                let goal = if self.method.is_oversampler() {
                    present.max().unwrap_or(0)
                } else {
                    present.min().unwrap_or(0)
                };
                for c in 0..NUM_CLASSES {
                    if counts[c] > 0 {
                        targets[c] = goal;
                    }
                }
            }
        }
        for c in 0..NUM_CLASSES {
            let ok = if self.method.is_oversampler() {
                targets[c] >= counts[c]
            } else {
                targets[c] <= counts[c]
            };
            if !ok {
                return Err(Error::config(format!(
                    "target {} for class {c} conflicts with {} existing rows under {}",
                    targets[c],
                    counts[c],
                    self.method.name()
                )));
            }
        }
        Ok(targets)
    }

    fn validate(&self) -> Result<()> {
        if self.k_neighbors < 1 {
            return Err(Error::config("k_neighbors must be at least 1"));
        }
        if self.n_ref < 1 {
            return Err(Error::config("n_ref must be at least 1"));
        }
        Ok(())
    }
}

/// Applies any plan: oversampling or NearMiss undersampling.
pub fn resample(data: &Dataset, plan: &ResamplePlan) -> Result<Dataset> {
    if plan.method.is_oversampler() {
        oversample(data, plan)
    } else {
        plan.validate()?;
        let targets = plan.resolve_targets(data.labels())?;
        let counts = data.class_counts();
        let mut out = data.clone();
        for c in 0..NUM_CLASSES {
            if targets[c] < counts[c] {
                out = nearmiss_undersample(&out, c, targets[c], plan.nearmiss_version, plan.n_ref)?;
            }
        }
        Ok(out)
    }
}

/// Appends synthetic rows until every class reaches its target count.
pub fn oversample(data: &Dataset, plan: &ResamplePlan) -> Result<Dataset> {
    if !plan.method.is_oversampler() {
        return Err(Error::config(format!("{} is not an oversampler", plan.method.name())));
    }
    plan.validate()?;
    let targets = plan.resolve_targets(data.labels())?;
    let by_class = indices_by_class(data.labels());
    let all = Points::new(data.as_flat(), data.n_features().max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut synthetic = Vec::new();
    let mut synthetic_labels = Vec::new();

    for class in 0..NUM_CLASSES {
        let members = &by_class[class];
        let need = targets[class] - members.len();
        if need == 0 {
            continue;
        }
        let min_members = if plan.method == ResampleMethod::RandomOver {
            1
        } else {
            plan.k_neighbors + 1
        };
        if members.len() < min_members {
            return Err(Error::ClassTooSmall {
                class,
                count: members.len(),
                needed: min_members,
            });
        }
        let rows = match plan.method {
            ResampleMethod::RandomOver => random_over(data, members, need, &mut rng),
            ResampleMethod::Smote => {
                let class_rows = gather(data, members);
                let pts = Points::new(&class_rows, data.n_features());
                let neighbors = knn_self(pts, plan.k_neighbors)?;
                let bases: Vec<usize> = (0..members.len()).collect();
                interpolate_uniform(pts, &neighbors, &bases, need, 1.0, &mut rng)
            }
            ResampleMethod::BorderlineSmote => {
                let class_rows = gather(data, members);
                let pts = Points::new(&class_rows, data.n_features());
                let neighbors = knn_self(pts, plan.k_neighbors)?;
                let others = other_class_counts(data, all, members, plan.k_neighbors)?;
                let k = plan.k_neighbors;
                let mut danger: Vec<usize> = (0..members.len())
                    .filter(|&i| 2 * others[i] >= k && others[i] < k)
                    .collect();
                if danger.is_empty() {
                    danger = (0..members.len()).collect();
                }
                interpolate_uniform(pts, &neighbors, &danger, need, 1.0, &mut rng)
            }
            ResampleMethod::Adasyn => {
                let class_rows = gather(data, members);
                let pts = Points::new(&class_rows, data.n_features());
                let neighbors = knn_self(pts, plan.k_neighbors)?;
                let others = other_class_counts(data, all, members, plan.k_neighbors)?;
                let budget = adasyn_allocation(&others, need);
                let mut rows = Vec::with_capacity(need * data.n_features());
                for (i, &count) in budget.iter().enumerate() {
                    for _ in 0..count {
                        let nb = neighbors[i][rng.gen_range(0..neighbors[i].len())];
                        let u: f64 = rng.gen();
                        push_step(&mut rows, pts.row(i), pts.row(nb), u);
                    }
                }
                rows
            }
            ResampleMethod::SvmSmote => svm_smote(data, all, members, need, plan.k_neighbors, &mut rng)?,
            ResampleMethod::Nearmiss => unreachable!(),
        };
        synthetic_labels.extend(std::iter::repeat_n(class, need));
        synthetic.extend(rows);
    }
    data.append_rows(&synthetic, &synthetic_labels)
}

fn gather(data: &Dataset, indices: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(indices.len() * data.n_features());
    for &i in indices {
        out.extend_from_slice(data.row(i));
    }
    out
}

fn push_step(out: &mut Vec<f64>, base: &[f64], toward: &[f64], step: f64) {
    out.extend(base.iter().zip(toward).map(|(x, n)| x + step * (n - x)));
}

fn random_over(data: &Dataset, members: &[usize], need: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut rows = Vec::with_capacity(need * data.n_features());
    for _ in 0..need {
        let pick = members[rng.gen_range(0..members.len())];
        rows.extend_from_slice(data.row(pick));
    }
    rows
}

/// `need` points, each `base + direction * u * (neighbor - base)` with the
/// base drawn uniformly from `bases` and the neighbour from its same-class
/// list. `direction` is 1 for interpolation and -1 for extrapolation.
fn interpolate_uniform(
    pts: Points<'_>,
    neighbors: &[Vec<usize>],
    bases: &[usize],
    need: usize,
    direction: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut rows = Vec::with_capacity(need * pts.dim());
    for _ in 0..need {
        let i = bases[rng.gen_range(0..bases.len())];
        let nb = neighbors[i][rng.gen_range(0..neighbors[i].len())];
        let u: f64 = rng.gen();
        push_step(&mut rows, pts.row(i), pts.row(nb), direction * u);
    }
    rows
}

/// For each class member, how many of its `k` nearest rows in the whole
/// dataset belong to another class.
fn other_class_counts(data: &Dataset, all: Points<'_>, members: &[usize], k: usize) -> Result<Vec<usize>> {
    let class = data.labels()[members[0]];
    let queries = gather(data, members);
    let neighbors = knn_batch(Points::new(&queries, all.dim()), all, k, |q| Some(members[q]))?;
    Ok(neighbors
        .iter()
        .map(|nbrs| nbrs.iter().filter(|&&j| data.labels()[j] != class).count())
        .collect())
}

/// Splits `total` synthetic rows in proportion to `weights` by largest
/// remainder, lower index first on equal remainders. Zero weights get zero.
/// If every weight is zero the budget is spread evenly.
pub fn adasyn_allocation(weights: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if weights.is_empty() {
        return Vec::new();
    }
    let (weights, sum): (Vec<usize>, usize) = if sum == 0 {
        (vec![1; weights.len()], weights.len())
    } else {
        (weights.to_vec(), sum)
    };
    let mut alloc: Vec<usize> = weights.iter().map(|&w| w * total / sum).collect();
    let assigned: usize = alloc.iter().sum();
    let mut remainders: Vec<(usize, usize)> = weights.iter().enumerate().map(|(i, &w)| (w * total % sum, i)).collect();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter().take(total - assigned) {
        alloc[i] += 1;
    }
    alloc
}

fn svm_smote(
    data: &Dataset,
    all: Points<'_>,
    members: &[usize],
    need: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let class = data.labels()[members[0]];
    let positive: Vec<bool> = data.labels().iter().map(|&l| l == class).collect();
    let margin = LinearMargin::fit(all, &positive, svm::DEFAULT_LAMBDA, svm::DEFAULT_EPOCHS, rng);

    let class_rows = gather(data, members);
    let pts = Points::new(&class_rows, data.n_features());
    let neighbors = knn_self(pts, k)?;
    let others = other_class_counts(data, all, members, k)?;

    let mut danger = Vec::new();
    let mut safe = Vec::new();
    for i in 0..members.len() {
        if margin.decision(pts.row(i)) > 1.0 {
            continue;
        }
        match others[i] {
            m if m == k => {}
            m if 2 * m >= k => danger.push(i),
            _ => safe.push(i),
        }
    }
    if danger.is_empty() && safe.is_empty() {
        let bases: Vec<usize> = (0..members.len()).collect();
        return Ok(interpolate_uniform(pts, &neighbors, &bases, need, 1.0, rng));
    }
    let n_danger = (need as f64 * danger.len() as f64 / (danger.len() + safe.len()) as f64).round() as usize;
    let n_danger = if safe.is_empty() { need } else { n_danger.min(need) };
    let mut rows = if n_danger > 0 {
        interpolate_uniform(pts, &neighbors, &danger, n_danger, 1.0, rng)
    } else {
        Vec::new()
    };
    if need > n_danger {
        rows.extend(interpolate_uniform(pts, &neighbors, &safe, need - n_danger, -1.0, rng));
    }
    Ok(rows)
}
