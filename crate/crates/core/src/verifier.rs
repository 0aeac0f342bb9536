//! The end-to-end procedure: walk the trees of a seeded forest in
//! order, validating each pure positive leaf by active resampling, pruning
//! contained boxes and stopping once estimated coverage reaches the target.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};

use crate::error::{Error, Result};
use crate::forest::{get_pure_positive_leaves, train_trees, ForestConfig, TreeNode};
use crate::geometry::{AxisBox, BoxSet, UnitMap, XiGrid};
use crate::guarantees::{
    chernoff_miss_probability, chernoff_premise_holds, coverage_lower_bound, error_upper_bound,
    forest_miss_probability, plan_budget, purity_for, wilks_confidence, wilks_n, BudgetPlan, GuaranteeParams,
};
use crate::nn::{Labeler, MarginLabeler};
use crate::sampling::{get_examples, sample_uniform, Purpose, RngStream, UnionSampler, UnitLabeler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Full procedure with active resampling.
    Verify,
    /// Ablation: accept every pure positive leaf without resampling.
    NoFilter,
    /// Baseline: one deep tree instead of a forest of shallow ones.
    SingleTree,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Verify => "verify",
            Mode::NoFilter => "no_filter",
            Mode::SingleTree => "single_tree",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "verify" => Ok(Mode::Verify),
            "no_filter" => Ok(Mode::NoFilter),
            "single_tree" => Ok(Mode::SingleTree),
            other => Err(Error::param("mode", format!("unknown mode `{other}`"))),
        }
    }
}

/// How the per-box confidence is derived from `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaMode {
    /// Every accepted box individually holds with confidence `1 − δ`.
    PerBox,
    /// `δ / |B|max` per box, so all boxes hold jointly with `1 − δ`.
    Bonferroni,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunOptions {
    /// Samples for the final error estimate; `None` uses `k`.
    pub error_samples: Option<usize>,
    /// Resampling budget; `None` uses the planner's total.
    pub max_resamples: Option<u64>,
    /// Fixed resamples per box instead of the tolerance-limit size.
    pub resample_override: Option<u64>,
    pub delta_mode: DeltaMode,
    /// Reuse one test set for every coverage check.
    pub fixed_test_set: bool,
    pub single_tree_depth: u32,
    pub chernoff_alpha: f64,
    pub coverage_k_factor: u32,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            error_samples: None,
            max_resamples: None,
            resample_override: None,
            delta_mode: DeltaMode::PerBox,
            fixed_test_set: false,
            single_tree_depth: 11,
            chernoff_alpha: 2.0,
            coverage_k_factor: 3,
        }
    }
}

/// Every run parameter except the network itself; echoed into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSettings {
    pub region: AxisBox,
    pub params: GuaranteeParams,
    pub forest: ForestConfig,
    pub m: usize,
    pub k: usize,
    pub options: RunOptions,
}

#[derive(Debug, Clone)]
pub struct VerificationTask {
    pub labeler: MarginLabeler,
    pub region: AxisBox,
    pub params: GuaranteeParams,
    pub forest: ForestConfig,
    pub m: usize,
    pub k: usize,
    pub options: RunOptions,
}

impl VerificationTask {
    /// Task with the default experimental configuration.
    pub fn new(labeler: MarginLabeler, region: AxisBox) -> Self {
        VerificationTask {
            labeler,
            region,
            params: GuaranteeParams::default(),
            forest: ForestConfig::default(),
            m: 20_000,
            k: 10_000,
            options: RunOptions::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.region.dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.m == 0 {
            return Err(Error::param("m", "need at least one training example"));
        }
        if self.k == 0 {
            return Err(Error::param("k", "need at least one test sample"));
        }
        if self.options.error_samples == Some(0) {
            return Err(Error::param("error_samples", "must be positive"));
        }
        if self.options.resample_override == Some(0) {
            return Err(Error::param("resample_override", "must be positive"));
        }
        self.region.ensure_nondegenerate()?;
        if self.labeler.input_dim() != self.dim() {
            return Err(Error::Dim {
                expected: self.labeler.input_dim(),
                got: self.dim(),
            });
        }
        self.forest.validate(self.dim())
    }

    pub fn settings(&self) -> TaskSettings {
        TaskSettings {
            region: self.region.clone(),
            params: self.params,
            forest: self.forest.clone(),
            m: self.m,
            k: self.k,
            options: self.options.clone(),
        }
    }

    /// Forest configuration actually used by `mode` with this seed.
    pub fn forest_for(&self, mode: Mode, seed: u64) -> ForestConfig {
        let mut cfg = self.forest.clone();
        cfg.seed = seed;
        if mode == Mode::SingleTree {
            cfg.n_trees = 1;
            cfg.max_depth = self.options.single_tree_depth;
        }
        cfg
    }

    /// `(n, per-box δ, budget plan)` for a forest shape.
    fn sample_plan(&self, forest: &ForestConfig) -> Result<(u64, f64, BudgetPlan)> {
        let plan = plan_budget(&self.params, forest.n_trees as u64, forest.max_depth)?;
        let delta_box = match self.options.delta_mode {
            DeltaMode::PerBox => self.params.delta,
            DeltaMode::Bonferroni => self.params.delta / plan.max_boxes as f64,
        };
        let n = match self.options.resample_override {
            Some(n) => n,
            None => wilks_n(delta_box, self.params.purity)?,
        };
        let total = n
            .checked_mul(plan.max_boxes)
            .ok_or(Error::Overflow("total_resamples"))?;
        Ok((
            n,
            delta_box,
            BudgetPlan {
                n_per_box: n,
                total_resamples: total,
                ..plan
            },
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evidence {
    /// The leaf already held at least `n` distinct positive training points.
    TrainingSamples,
    /// `n` fresh uniform draws inside the box were all positive.
    Resampled,
    /// Accepted without any check (ablation mode).
    Unfiltered,
}

/// One accepted candidate, before pruning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub tree: usize,
    pub leaf: usize,
    pub samples_inside: usize,
    pub resamples: u64,
    pub evidence: Evidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub n_per_box: u64,
    pub delta: f64,
    pub delta_per_box: f64,
    pub purity: f64,
    /// `δ^(1/n)`; equals or exceeds `purity` unless `n` was overridden.
    pub purity_implied: f64,
    pub confidence_per_box: f64,
    pub xi: f64,
    pub depth: u32,
    pub chernoff_alpha: f64,
    pub chernoff_miss_probability: f64,
    pub chernoff_premise_holds: bool,
    pub forest_miss_probability: f64,
    pub coverage_k_factor: u32,
    pub coverage_lower_bound: f64,
    /// Estimated union volume as a fraction of the input region.
    pub union_volume_fraction: f64,
    pub error_upper_bound: f64,
    pub epsilon: f64,
    pub epsilon_consistent: bool,
    pub budget: BudgetPlan,
    pub max_resamples: u64,
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub mode: Mode,
    pub seed: u64,
    /// Accepted boxes in original input coordinates.
    pub boxes: BoxSet,
    pub coverage_estimate: f64,
    pub coverage_met: bool,
    pub error_estimate: f64,
    pub trees_used: usize,
    pub resamples_spent: u64,
    pub positives_seen: usize,
    pub coverage_trace: Vec<f64>,
    pub acceptances: Vec<Acceptance>,
    pub certificate: Certificate,
    pub warnings: Vec<String>,
    pub settings: TaskSettings,
    pub wall_time_ms: f64,
}

impl VerificationReport {
    /// JSON with the wall-clock time zeroed; identical across reruns with the
    /// same task and seed.
    pub fn canonical_json(&self) -> String {
        let mut copy = self.clone();
        copy.wall_time_ms = 0.0;
        serde_json::to_string_pretty(&copy).expect("report serializes")
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per box: lower coordinates, then upper coordinates.
    pub fn write_boxes_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let dim = self.settings.region.dim();
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = (0..dim)
            .map(|i| format!("lower_{i}"))
            .chain((0..dim).map(|i| format!("upper_{i}")))
            .collect();
        w.write_record(&header)?;
        for b in &self.boxes {
            let row: Vec<String> = b.lower().iter().chain(b.upper()).map(|v| v.to_string()).collect();
            w.write_record(&row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterOutcome {
    pub accepted: bool,
    pub resamples_used: u64,
}

/// Active resampling of one candidate. Stops at the first negative draw,
/// which does not change the accept/reject outcome.
pub fn filter_box<L: Labeler + ?Sized, R: Rng + ?Sized>(
    b: &AxisBox,
    tree_sample_count: usize,
    n: u64,
    labeler: &L,
    rng: &mut R,
) -> Result<FilterOutcome> {
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    if tree_sample_count as u64 >= n {
        return Ok(FilterOutcome {
            accepted: true,
            resamples_used: 0,
        });
    }
    b.ensure_nondegenerate()?;
    for used in 1..=n {
        let x = sample_uniform(b, 1, rng)?.pop().expect("one point");
        if !labeler.label(&x)? {
            return Ok(FilterOutcome {
                accepted: false,
                resamples_used: used,
            });
        }
    }
    Ok(FilterOutcome {
        accepted: true,
        resamples_used: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageEstimate {
    pub coverage: f64,
    pub positives_seen: usize,
    /// Test points inside the union, positive or not.
    pub inside_union: usize,
    pub samples: usize,
}

fn coverage_of(boxes: &BoxSet, points: &[Vec<f64>], labels: &[bool]) -> CoverageEstimate {
    let mut positives = 0;
    let mut hits = 0;
    let mut inside = 0;
    for (x, &y) in points.iter().zip(labels) {
        let covered = boxes.in_union(x);
        inside += usize::from(covered);
        if y {
            positives += 1;
            hits += usize::from(covered);
        }
    }
    CoverageEstimate {
        coverage: if positives == 0 {
            0.0
        } else {
            hits as f64 / positives as f64
        },
        positives_seen: positives,
        inside_union: inside,
        samples: points.len(),
    }
}

/// Fraction of positive uniform test points in `domain` that fall inside the
/// union of `boxes`; 0 when no test point is positive.
pub fn estimate_coverage<L: Labeler + ?Sized, R: Rng + ?Sized>(
    boxes: &BoxSet,
    labeler: &L,
    domain: &AxisBox,
    k: usize,
    rng: &mut R,
) -> Result<CoverageEstimate> {
    if k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    let points = sample_uniform(domain, k, rng)?;
    let labels = label_all(labeler, &points)?;
    Ok(coverage_of(boxes, &points, &labels))
}

fn label_all<L: Labeler + ?Sized>(labeler: &L, points: &[Vec<f64>]) -> Result<Vec<bool>> {
    points.par_iter().map(|x| labeler.label(x)).collect()
}

/// Fraction of negatives among uniform draws over the union of `boxes`.
pub fn estimate_error<L: Labeler + ?Sized, R: Rng + ?Sized>(
    boxes: &BoxSet,
    labeler: &L,
    n_error_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_error_samples == 0 {
        return Err(Error::param("n_error_samples", "must be at least 1"));
    }
    let sampler = UnionSampler::new(boxes)?;
    let points: Vec<Vec<f64>> = (0..n_error_samples).map(|_| sampler.sample(rng)).collect();
    let negatives = label_all(labeler, &points)?.into_iter().filter(|y| !y).count();
    Ok(negatives as f64 / n_error_samples as f64)
}

const TRAIN_BATCH: usize = 8;

pub fn run(task: &VerificationTask, seed: u64) -> Result<VerificationReport> {
    run_mode(task, seed, Mode::Verify)
}

pub fn run_ablation_no_filter(task: &VerificationTask, seed: u64) -> Result<VerificationReport> {
    run_mode(task, seed, Mode::NoFilter)
}

pub fn run_single_tree_baseline(task: &VerificationTask, seed: u64) -> Result<VerificationReport> {
    run_mode(task, seed, Mode::SingleTree)
}

pub fn run_mode(task: &VerificationTask, seed: u64, mode: Mode) -> Result<VerificationReport> {
    let started = Instant::now();
    task.validate()?;
    let dim = task.dim();
    let map = UnitMap::new(task.region.clone())?;
    let labeler = UnitLabeler::new(&task.labeler, &map)?;
    let unit = AxisBox::unit(dim);

    let forest_cfg = task.forest_for(mode, seed);
    forest_cfg.validate(dim)?;
    let grid = XiGrid::unit(dim, forest_cfg.max_depth)?;
    let (n, delta_box, budget) = task.sample_plan(&forest_cfg)?;
    let max_resamples = task.options.max_resamples.unwrap_or(budget.total_resamples);
    let mut warnings = Vec::new();

    let data = get_examples(
        &labeler,
        task.m,
        &unit,
        &mut RngStream::for_purpose(seed, Purpose::Training, 0, 0),
    )?;
    info!(
        mode = mode.as_str(),
        trees = forest_cfg.n_trees,
        positives = data.positives_count(),
        n,
        "training data drawn"
    );

    let fixed_test = if task.options.fixed_test_set {
        let mut rng = RngStream::for_purpose(seed, Purpose::Coverage, 0, 0);
        let points = sample_uniform(&unit, task.k, &mut rng)?;
        let labels = label_all(&labeler, &points)?;
        Some((points, labels))
    } else {
        None
    };

    let mut boxes = BoxSet::default();
    let mut acceptances = Vec::new();
    let mut coverage_trace = Vec::new();
    let mut spent = 0u64;
    let mut budget_exhausted = false;
    let mut last = CoverageEstimate {
        coverage: 0.0,
        positives_seen: 0,
        inside_union: 0,
        samples: 0,
    };
    let mut trees_used = 0;
    let mut met = false;

    let mut trained: Vec<TreeNode> = Vec::new();
    for t in 0..forest_cfg.n_trees {
        // trees are trained in parallel batches as the walk reaches them
        if t == trained.len() {
            let end = (t + TRAIN_BATCH.max(rayon::current_num_threads())).min(forest_cfg.n_trees);
            trained.extend(train_trees(&data, &forest_cfg, &grid, t..end)?);
        }
        let leaves = get_pure_positive_leaves(&trained[t]);
        let outcomes = leaves
            .par_iter()
            .enumerate()
            .map(|(j, leaf)| {
                debug_assert!(unit.encloses(&leaf.bbox));
                match mode {
                    Mode::NoFilter => Ok(FilterOutcome {
                        accepted: true,
                        resamples_used: 0,
                    }),
                    _ => filter_box(
                        &leaf.bbox,
                        leaf.n_distinct,
                        n,
                        &labeler,
                        &mut RngStream::for_purpose(seed, Purpose::Filter, t as u64, j as u64),
                    ),
                }
            })
            .collect::<Result<Vec<_>>>()?;

        // budget accounting in leaf order keeps the result schedule-independent
        let mut exhausted_here = false;
        for (j, (leaf, outcome)) in leaves.iter().zip(outcomes).enumerate() {
            let needs_resampling = mode != Mode::NoFilter && (leaf.n_distinct as u64) < n;
            if needs_resampling {
                if exhausted_here || spent + n > max_resamples {
                    exhausted_here = true;
                    continue;
                }
                spent += outcome.resamples_used;
            }
            if outcome.accepted {
                boxes.push(leaf.bbox.clone());
                acceptances.push(Acceptance {
                    tree: t,
                    leaf: j,
                    samples_inside: leaf.n_distinct,
                    resamples: outcome.resamples_used,
                    evidence: match (mode, needs_resampling) {
                        (Mode::NoFilter, _) => Evidence::Unfiltered,
                        (_, true) => Evidence::Resampled,
                        (_, false) => Evidence::TrainingSamples,
                    },
                });
            }
        }
        if exhausted_here && !budget_exhausted {
            budget_exhausted = true;
            warn!(tree = t, spent, max_resamples, "resampling budget exhausted");
            warnings.push(format!(
                "resampling budget of {max_resamples} exhausted at tree {t}; remaining candidates skipped"
            ));
        }

        boxes = boxes.remove_duplicate_boxes();
        last = match &fixed_test {
            Some((points, labels)) => coverage_of(&boxes, points, labels),
            None => estimate_coverage(
                &boxes,
                &labeler,
                &unit,
                task.k,
                &mut RngStream::for_purpose(seed, Purpose::Coverage, t as u64 + 1, 0),
            )?,
        };
        coverage_trace.push(last.coverage);
        trees_used = t + 1;
        debug!(
            tree = t,
            boxes = boxes.len(),
            coverage = last.coverage,
            "tree processed"
        );
        if last.coverage >= task.params.coverage_target {
            met = true;
            break;
        }
    }

    if last.positives_seen == 0 {
        warnings.push("no positive test samples; coverage reported as 0".into());
    }
    if !met {
        warnings.push(format!(
            "coverage target {} not reached after {} trees (achieved {:.4})",
            task.params.coverage_target, trees_used, last.coverage
        ));
    }
    let error_estimate = if boxes.is_empty() {
        warnings.push("no boxes accepted; error estimate reported as 0".into());
        0.0
    } else {
        estimate_error(
            &boxes,
            &labeler,
            task.options.error_samples.unwrap_or(task.k),
            &mut RngStream::for_purpose(seed, Purpose::Error, 0, 0),
        )?
    };
    if !task.params.epsilon_consistent() {
        warnings.push("epsilon is below 1 - R and cannot be certified".into());
    }

    let positive_fraction = last.positives_seen as f64 / last.samples.max(1) as f64;
    let union_fraction = last.inside_union as f64 / last.samples.max(1) as f64;
    let p_neg = chernoff_miss_probability(task.m as u64, grid.xi(), dim as u32, task.options.chernoff_alpha)?;
    let certificate = Certificate {
        n_per_box: n,
        delta: task.params.delta,
        delta_per_box: delta_box,
        purity: task.params.purity,
        purity_implied: purity_for(n, delta_box)?,
        confidence_per_box: wilks_confidence(n, task.params.purity)?,
        xi: grid.xi(),
        depth: grid.depth(),
        chernoff_alpha: task.options.chernoff_alpha,
        chernoff_miss_probability: p_neg,
        chernoff_premise_holds: chernoff_premise_holds(
            task.m as u64,
            n,
            grid.xi(),
            dim as u32,
            task.options.chernoff_alpha,
        ),
        forest_miss_probability: forest_miss_probability(
            p_neg,
            trees_used as u64,
            positive_fraction,
            grid.xi(),
            dim as u32,
        ),
        coverage_k_factor: task.options.coverage_k_factor,
        coverage_lower_bound: coverage_lower_bound(task.options.coverage_k_factor, dim as u32)?,
        union_volume_fraction: union_fraction,
        error_upper_bound: error_upper_bound(task.params.purity, union_fraction),
        epsilon: task.params.epsilon,
        epsilon_consistent: task.params.epsilon_consistent(),
        budget,
        max_resamples,
        budget_exhausted,
    };

    let boxes = boxes.iter().map(|b| map.box_from_unit(b)).collect();
    Ok(VerificationReport {
        mode,
        seed,
        boxes,
        coverage_estimate: last.coverage,
        coverage_met: met,
        error_estimate,
        trees_used,
        resamples_spent: spent,
        positives_seen: last.positives_seen,
        coverage_trace,
        acceptances,
        certificate,
        warnings,
        settings: task.settings(),
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}
