//! Experiment harnesses: the dimension sweep on halfspace tasks and paired
//! mode comparisons. Both score boxes against the analytic preimage when one
//! is available.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use tracing::info;

use crate::error::{Error, Result};
use crate::geometry::{AxisBox, BoxSet};
use crate::guarantees::purity_for;
use crate::sampling::{sample_uniform, Purpose, RngStream, UnionSampler};
use crate::synthetic::{generate_synthetic, SyntheticSpec, SyntheticTask, Truth};
use crate::verifier::{run_mode, Mode, VerificationReport, VerificationTask};

/// Coverage of the true preimage and false-positive share of the union,
/// both by uniform sampling against `truth`. Boxes are in unit coordinates.
pub fn evaluate_against_truth(boxes: &BoxSet, truth: &Truth, samples: usize, seed: u64) -> Result<(f64, f64)> {
    if samples == 0 {
        return Err(Error::param("samples", "must be positive"));
    }
    let dim = match boxes.iter().next() {
        Some(b) => b.dim(),
        None => return Ok((0.0, 0.0)),
    };
    let mut rng = RngStream::for_purpose(seed, Purpose::Auxiliary, 0, 0);
    let points = sample_uniform(&AxisBox::unit(dim), samples, &mut rng)?;
    let mut positives = 0usize;
    let mut covered = 0usize;
    for x in &points {
        if truth.contains(x) {
            positives += 1;
            covered += usize::from(boxes.in_union(x));
        }
    }
    let coverage = if positives == 0 {
        0.0
    } else {
        covered as f64 / positives as f64
    };
    let sampler = UnionSampler::new(boxes)?;
    let mut rng = RngStream::for_purpose(seed, Purpose::Auxiliary, 1, 0);
    let wrong = (0..samples)
        .filter(|_| !truth.contains(&sampler.sample(&mut rng)))
        .count();
    Ok((coverage, wrong as f64 / samples as f64))
}

/// The noisy-boundary box at stress scale: `R = 0.9`, `δ = 0.05` and only
/// 2000 training points, so the resampling step carries the purity
/// guarantee. `noise_seed` places the holes.
pub fn noisy_box_stress_task(noise_seed: u64) -> Result<SyntheticTask> {
    let mut synth = generate_synthetic(&SyntheticSpec::noisy_box2d(), noise_seed)?;
    let task = &mut synth.task;
    task.params.purity = 0.9;
    task.params.delta = 0.05;
    task.params.epsilon = 0.1;
    task.m = 2000;
    Ok(synth)
}

/// The noisy box at stress scale and the three-box union at default settings.
pub fn default_ablation_cases() -> Result<Vec<AblationCase>> {
    let noisy = noisy_box_stress_task(0)?;
    let multi = generate_synthetic(&SyntheticSpec::multi_box2d(), 0)?;
    Ok(vec![
        AblationCase {
            name: "noisy_box2d".into(),
            task: noisy.task,
            truth: Some(noisy.truth),
        },
        AblationCase {
            name: "multi_box2d".into(),
            task: multi.task,
            truth: Some(multi.truth),
        },
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HalfspaceShape {
    /// `x0 + x1 ≥ 1`.
    Diagonal,
    /// `x0 ≥ 0.5`.
    Axis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalabilityConfig {
    pub m: usize,
    pub k: usize,
    pub n_resamples: u64,
    pub delta: f64,
    pub coverage_target: f64,
    pub n_trees: usize,
    pub depth: u32,
    pub eval_samples: usize,
    pub shape: HalfspaceShape,
}

impl Default for ScalabilityConfig {
    fn default() -> Self {
        ScalabilityConfig {
            m: 20_000,
            k: 10_000,
            n_resamples: 200,
            delta: 0.05,
            coverage_target: 0.75,
            n_trees: 500,
            depth: 5,
            eval_samples: 20_000,
            shape: HalfspaceShape::Diagonal,
        }
    }
}

impl ScalabilityConfig {
    pub fn task(&self, dim: usize) -> Result<(VerificationTask, Truth)> {
        let spec = match self.shape {
            HalfspaceShape::Diagonal => SyntheticSpec::diagonal_halfspace(dim),
            HalfspaceShape::Axis => SyntheticSpec::axis_halfspace(dim),
        };
        let synth = generate_synthetic(&spec, 0)?;
        let mut task = synth.task;
        task.m = self.m;
        task.k = self.k;
        task.params.delta = self.delta;
        task.params.purity = purity_for(self.n_resamples, self.delta)?;
        task.params.epsilon = 1.0 - task.params.purity;
        task.params.coverage_target = self.coverage_target;
        task.forest.n_trees = self.n_trees;
        task.forest.max_depth = self.depth;
        task.options.resample_override = Some(self.n_resamples);
        Ok((task, synth.truth))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityRow {
    pub n: usize,
    pub seed: u64,
    pub coverage: f64,
    pub error: f64,
    pub n_boxes: usize,
    pub n_trees_used: usize,
    pub wall_time_ms: f64,
    pub coverage_estimate: f64,
    pub error_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n: usize,
    pub coverage: f64,
    pub error: f64,
    pub n_boxes: f64,
    pub n_trees_used: f64,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityTable {
    pub rows: Vec<ScalabilityRow>,
}

impl ScalabilityTable {
    /// Per-dimension means, ordered by dimension.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut groups: BTreeMap<usize, Vec<&ScalabilityRow>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry(r.n).or_default().push(r);
        }
        groups
            .into_iter()
            .map(|(n, rows)| SummaryRow {
                n,
                coverage: mean(rows.iter().map(|r| r.coverage)),
                error: mean(rows.iter().map(|r| r.error)),
                n_boxes: mean(rows.iter().map(|r| r.n_boxes as f64)),
                n_trees_used: mean(rows.iter().map(|r| r.n_trees_used as f64)),
                wall_time_ms: mean(rows.iter().map(|r| r.wall_time_ms)),
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_rows(w, &self.rows)
    }

    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        write_rows(w, &self.summary())
    }
}

pub fn run_scalability_suite(dims: &[usize], config: &ScalabilityConfig, seeds: &[u64]) -> Result<ScalabilityTable> {
    if dims.is_empty() || seeds.is_empty() {
        return Err(Error::param("suite", "dims and seeds must be nonempty"));
    }
    let mut rows = Vec::with_capacity(dims.len() * seeds.len());
    for &dim in dims {
        let (task, truth) = config.task(dim)?;
        for &seed in seeds {
            let report = run_mode(&task, seed, Mode::Verify)?;
            let (coverage, error) = evaluate_against_truth(&report.boxes, &truth, config.eval_samples, seed)?;
            info!(
                dim,
                seed,
                coverage,
                error,
                boxes = report.boxes.len(),
                "scalability run"
            );
            rows.push(ScalabilityRow {
                n: dim,
                seed,
                coverage,
                error,
                n_boxes: report.boxes.len(),
                n_trees_used: report.trees_used,
                wall_time_ms: report.wall_time_ms,
                coverage_estimate: report.coverage_estimate,
                error_estimate: report.error_estimate,
            });
        }
    }
    Ok(ScalabilityTable { rows })
}

/// One task of a paired comparison; `truth` scores boxes when present.
#[derive(Debug, Clone)]
pub struct AblationCase {
    pub name: String,
    pub task: VerificationTask,
    pub truth: Option<Truth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub task: String,
    pub mode: Mode,
    pub seed: u64,
    pub n_boxes: usize,
    pub n_trees_used: usize,
    pub coverage: f64,
    pub error: f64,
    pub coverage_estimate: f64,
    pub error_estimate: f64,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub task: String,
    pub mode: Mode,
    pub runs: usize,
    pub n_boxes: f64,
    pub coverage: f64,
    pub error: f64,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn summary(&self) -> Vec<AblationSummary> {
        let mut groups: BTreeMap<(String, &'static str), (Mode, Vec<&AblationRow>)> = BTreeMap::new();
        for r in &self.rows {
            groups
                .entry((r.task.clone(), r.mode.as_str()))
                .or_insert_with(|| (r.mode, Vec::new()))
                .1
                .push(r);
        }
        groups
            .into_iter()
            .map(|((task, _), (mode, rows))| AblationSummary {
                task,
                mode,
                runs: rows.len(),
                n_boxes: mean(rows.iter().map(|r| r.n_boxes as f64)),
                coverage: mean(rows.iter().map(|r| r.coverage)),
                error: mean(rows.iter().map(|r| r.error)),
                wall_time_ms: mean(rows.iter().map(|r| r.wall_time_ms)),
            })
            .collect()
    }

    pub fn mean_for(&self, task: &str, mode: Mode) -> Option<AblationSummary> {
        self.summary().into_iter().find(|s| s.task == task && s.mode == mode)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_rows(w, &self.rows)
    }

    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        write_rows(w, &self.summary())
    }
}

pub fn run_ablation_suite(cases: &[AblationCase], seeds: &[u64], modes: &[Mode]) -> Result<AblationTable> {
    if cases.is_empty() || seeds.is_empty() || modes.is_empty() {
        return Err(Error::param("suite", "cases, seeds and modes must be nonempty"));
    }
    let mut rows = Vec::new();
    for case in cases {
        for &seed in seeds {
            for &mode in modes {
                let report = run_mode(&case.task, seed, mode)?;
                rows.push(score(case, &report)?);
            }
        }
    }
    Ok(AblationTable { rows })
}

fn score(case: &AblationCase, report: &VerificationReport) -> Result<AblationRow> {
    let (coverage, error) = match &case.truth {
        Some(truth) => evaluate_against_truth(&report.boxes, truth, case.task.k, report.seed)?,
        None => (report.coverage_estimate, report.error_estimate),
    };
    Ok(AblationRow {
        task: case.name.clone(),
        mode: report.mode,
        seed: report.seed,
        n_boxes: report.boxes.len(),
        n_trees_used: report.trees_used,
        coverage,
        error,
        coverage_estimate: report.coverage_estimate,
        error_estimate: report.error_estimate,
        wall_time_ms: report.wall_time_ms,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn write_rows<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    for r in rows {
        writer.serialize(r)?;
    }
    writer.flush().map_err(csv::Error::from)?;
    Ok(())
}
