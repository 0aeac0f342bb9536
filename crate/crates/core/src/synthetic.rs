//! Synthetic tasks with known preimages, built as exact ReLU networks over
//! the unit cube.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::AxisBox;
use crate::nn::{Expr, MarginLabeler, OutputProperty};
use crate::sampling::{Purpose, RngStream};
use crate::verifier::VerificationTask;

/// Small negative holes punched into the boundary cells of a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryNoise {
    /// Boundary cells have side `2^-depth`; holes have half that side.
    pub depth: u32,
    /// Chance that a given boundary cell gets a hole.
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticSpec {
    BoxIndicator {
        lower: Vec<f64>,
        upper: Vec<f64>,
        #[serde(default)]
        noise: Option<BoundaryNoise>,
    },
    MultiBoxUnion {
        boxes: Vec<AxisBox>,
    },
    /// Positive where `normal · x ≥ offset`.
    Halfspace {
        normal: Vec<f64>,
        offset: f64,
    },
    /// `period` cells per axis, positive where the cell indices sum to an even number.
    Checkerboard {
        dim: usize,
        period: u32,
    },
}

impl SyntheticSpec {
    pub fn dim(&self) -> usize {
        match self {
            SyntheticSpec::BoxIndicator { lower, .. } => lower.len(),
            SyntheticSpec::MultiBoxUnion { boxes } => boxes.first().map_or(0, AxisBox::dim),
            SyntheticSpec::Halfspace { normal, .. } => normal.len(),
            SyntheticSpec::Checkerboard { dim, .. } => *dim,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SyntheticSpec::BoxIndicator { .. } => "box_indicator",
            SyntheticSpec::MultiBoxUnion { .. } => "multi_box_union",
            SyntheticSpec::Halfspace { .. } => "halfspace",
            SyntheticSpec::Checkerboard { .. } => "checkerboard",
        }
    }

    /// `[0.25, 0.75]²`, the basic 2-D indicator.
    pub fn box2d() -> Self {
        SyntheticSpec::BoxIndicator {
            lower: vec![0.25, 0.25],
            upper: vec![0.75, 0.75],
            noise: None,
        }
    }

    /// A box touching two sides of the domain with holes punched into the
    /// grid cells along its two inner edges.
    pub fn noisy_box2d() -> Self {
        SyntheticSpec::BoxIndicator {
            lower: vec![0.25, 0.0],
            upper: vec![1.0, 0.75],
            noise: Some(BoundaryNoise {
                depth: 5,
                probability: 0.5,
            }),
        }
    }

    /// Three disjoint grid-aligned boxes, each side at least `3ξ` for `ξ = 1/32`.
    pub fn multi_box2d() -> Self {
        let b = |l: [f64; 2], u: [f64; 2]| AxisBox::new(l.to_vec(), u.to_vec()).expect("valid box");
        SyntheticSpec::MultiBoxUnion {
            boxes: vec![
                b([0.0625, 0.125], [0.3125, 0.5]),
                b([0.5, 0.0625], [0.875, 0.3125]),
                b([0.375, 0.625], [0.75, 0.9375]),
            ],
        }
    }

    /// `x0 + x1 ≥ 1` embedded in `dim` dimensions.
    pub fn diagonal_halfspace(dim: usize) -> Self {
        let mut normal = vec![0.0; dim];
        normal[0] = 1.0;
        if dim > 1 {
            normal[1] = 1.0;
        }
        let offset = if dim > 1 { 1.0 } else { 0.5 };
        SyntheticSpec::Halfspace { normal, offset }
    }

    /// `x0 ≥ 0.5` embedded in `dim` dimensions.
    pub fn axis_halfspace(dim: usize) -> Self {
        let mut normal = vec![0.0; dim];
        normal[0] = 1.0;
        SyntheticSpec::Halfspace { normal, offset: 0.5 }
    }
}

/// Analytic description of a synthetic preimage in unit coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Truth {
    /// Closed union of `include` minus the open interiors of `holes`.
    Boxes {
        include: Vec<AxisBox>,
        holes: Vec<AxisBox>,
    },
    Halfspace {
        normal: Vec<f64>,
        offset: f64,
    },
}

impl Truth {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Truth::Boxes { include, holes } => {
                include.iter().any(|b| b.covers(x))
                    && !holes
                        .iter()
                        .any(|h| x.iter().enumerate().all(|(a, &v)| h.lower()[a] < v && v < h.upper()[a]))
            }
            Truth::Halfspace { normal, offset } => dot(normal, x) >= *offset,
        }
    }

    /// Exact positive volume when it has a closed form.
    pub fn analytic_volume(&self) -> Option<f64> {
        match self {
            Truth::Boxes { include, holes } => Some(set_volume(include, holes)),
            Truth::Halfspace { normal, offset } => {
                let nonzero: Vec<usize> = (0..normal.len()).filter(|&i| normal[i] != 0.0).collect();
                if nonzero.len() == 1 {
                    let w = normal[nonzero[0]];
                    let t = (offset / w).clamp(0.0, 1.0);
                    Some(if w > 0.0 { 1.0 - t } else { t })
                } else if (0.5 * normal.iter().sum::<f64>() - offset).abs() < 1e-12 {
                    // hyperplane through the cube center: the map x -> 1 - x swaps the halves
                    Some(0.5)
                } else {
                    None
                }
            }
        }
    }

    pub fn holes(&self) -> &[AxisBox] {
        match self {
            Truth::Boxes { holes, .. } => holes,
            Truth::Halfspace { .. } => &[],
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Volume of `∪ include \ ∪ holes` by coordinate compression.
fn set_volume(include: &[AxisBox], holes: &[AxisBox]) -> f64 {
    let Some(first) = include.first() else {
        return 0.0;
    };
    let dim = first.dim();
    let breaks: Vec<Vec<f64>> = (0..dim)
        .map(|a| {
            let mut v: Vec<f64> = include
                .iter()
                .chain(holes)
                .flat_map(|b| [b.lower()[a], b.upper()[a]])
                .collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        })
        .collect();
    let mut idx = vec![0usize; dim];
    let mut total = 0.0;
    if breaks.iter().any(|b| b.len() < 2) {
        return 0.0;
    }
    loop {
        let mid: Vec<f64> = (0..dim)
            .map(|a| 0.5 * (breaks[a][idx[a]] + breaks[a][idx[a] + 1]))
            .collect();
        let inside = include.iter().any(|b| b.covers(&mid)) && !holes.iter().any(|h| h.covers(&mid));
        if inside {
            total += (0..dim)
                .map(|a| breaks[a][idx[a] + 1] - breaks[a][idx[a]])
                .product::<f64>();
        }
        let mut a = 0;
        loop {
            if a == dim {
                return total;
            }
            idx[a] += 1;
            if idx[a] + 1 < breaks[a].len() {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub spec: SyntheticSpec,
    pub task: VerificationTask,
    pub truth: Truth,
}

impl SyntheticTask {
    pub fn name(&self) -> String {
        format!("{}_{}d", self.spec.kind(), self.spec.dim())
    }
}

const MAX_CHECKER_CELLS: u64 = 4096;

/// Network and property for `spec`; `seed` only affects noise placement.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticTask> {
    let dim = spec.dim();
    if dim == 0 {
        return Err(Error::param("dim", "synthetic tasks need at least one dimension"));
    }
    let unit = AxisBox::unit(dim);
    let (expr, truth) = match spec {
        SyntheticSpec::BoxIndicator { lower, upper, noise } => {
            let b = AxisBox::new(lower.clone(), upper.clone())?;
            b.ensure_nondegenerate()?;
            check_inside(&unit, &b)?;
            let holes = match noise {
                Some(n) => punch_holes(&b, n, seed)?,
                None => Vec::new(),
            };
            let mut parts = vec![Expr::inside_box(b.lower(), b.upper())];
            parts.extend(holes.iter().map(|h| Expr::outside_box(h.lower(), h.upper())));
            let expr = if parts.len() == 1 {
                parts.pop().unwrap()
            } else {
                Expr::Min(parts)
            };
            (
                expr,
                Truth::Boxes {
                    include: vec![b],
                    holes,
                },
            )
        }
        SyntheticSpec::MultiBoxUnion { boxes } => {
            if boxes.is_empty() {
                return Err(Error::EmptyBoxSet);
            }
            for b in boxes {
                if b.dim() != dim {
                    return Err(Error::Dim {
                        expected: dim,
                        got: b.dim(),
                    });
                }
                b.ensure_nondegenerate()?;
                check_inside(&unit, b)?;
            }
            let expr = Expr::Max(boxes.iter().map(|b| Expr::inside_box(b.lower(), b.upper())).collect());
            (
                expr,
                Truth::Boxes {
                    include: boxes.clone(),
                    holes: Vec::new(),
                },
            )
        }
        SyntheticSpec::Halfspace { normal, offset } => {
            if normal.iter().all(|&w| w == 0.0) || normal.iter().any(|w| !w.is_finite()) || !offset.is_finite() {
                return Err(Error::param("normal", "must be finite and nonzero"));
            }
            let expr = Expr::Affine {
                coeffs: normal.clone(),
                bias: -offset,
            };
            (
                expr,
                Truth::Halfspace {
                    normal: normal.clone(),
                    offset: *offset,
                },
            )
        }
        SyntheticSpec::Checkerboard { dim, period } => {
            if !period.is_power_of_two() || *period < 2 {
                return Err(Error::param("period", "must be a power of two, at least 2"));
            }
            let cells = (*period as u64)
                .checked_pow(*dim as u32)
                .filter(|&c| c <= MAX_CHECKER_CELLS);
            let Some(cells) = cells else {
                return Err(Error::Intractable(format!("checkerboard with {period}^{dim} cells")));
            };
            let side = 1.0 / *period as f64;
            let mut include = Vec::new();
            for code in 0..cells {
                let mut rest = code;
                let idx: Vec<u64> = (0..*dim)
                    .map(|_| {
                        let i = rest % *period as u64;
                        rest /= *period as u64;
                        i
                    })
                    .collect();
                if idx.iter().sum::<u64>() % 2 == 0 {
                    include.push(AxisBox::new(
                        idx.iter().map(|&i| i as f64 * side).collect(),
                        idx.iter().map(|&i| (i + 1) as f64 * side).collect(),
                    )?);
                }
            }
            let expr = Expr::Max(include.iter().map(|b| Expr::inside_box(b.lower(), b.upper())).collect());
            (
                expr,
                Truth::Boxes {
                    include,
                    holes: Vec::new(),
                },
            )
        }
    };
    let network = expr.compile(dim)?;
    let labeler = MarginLabeler::new(network, OutputProperty::threshold(0.0))?;
    Ok(SyntheticTask {
        spec: spec.clone(),
        task: VerificationTask::new(labeler, unit),
        truth,
    })
}

fn check_inside(unit: &AxisBox, b: &AxisBox) -> Result<()> {
    if unit.encloses(b) {
        Ok(())
    } else {
        Err(Error::InvalidBox(format!("{b:?} leaves the unit cube")))
    }
}

/// Picks boundary grid cells inside `b` and one random quadrant hole in each.
fn punch_holes(b: &AxisBox, noise: &BoundaryNoise, seed: u64) -> Result<Vec<AxisBox>> {
    if noise.depth == 0 || noise.depth > 20 {
        return Err(Error::param("noise.depth", "must be in 1..=20"));
    }
    if !(0.0..=1.0).contains(&noise.probability) {
        return Err(Error::param("noise.probability", "must be in [0, 1]"));
    }
    let dim = b.dim();
    let per = 1u64 << noise.depth;
    let xi = 1.0 / per as f64;
    let mut ranges = Vec::with_capacity(dim);
    for a in 0..dim {
        let lo = b.lower()[a] * per as f64;
        let hi = b.upper()[a] * per as f64;
        if lo.fract() != 0.0 || hi.fract() != 0.0 {
            return Err(Error::param("noise", "box must be aligned to the noise grid"));
        }
        ranges.push((lo as u64, hi as u64));
    }
    let cells: u64 = ranges.iter().map(|(l, h)| h - l).product();
    if cells > 1 << 22 {
        return Err(Error::Intractable("too many noise cells".into()));
    }
    // only box faces strictly inside the domain count as boundary
    let inner_face =
        |a: usize, c: u64| (c == ranges[a].0 && b.lower()[a] > 0.0) || (c + 1 == ranges[a].1 && b.upper()[a] < 1.0);
    let mut rng = RngStream::for_purpose(seed, Purpose::Synthetic, 0, 0);
    let mut holes = Vec::new();
    let mut idx: Vec<u64> = ranges.iter().map(|r| r.0).collect();
    for _ in 0..cells {
        if (0..dim).any(|a| inner_face(a, idx[a])) && rng.gen::<f64>() < noise.probability {
            let quadrant: u32 = rng.gen_range(0..(1u32 << dim));
            let lower: Vec<f64> = (0..dim)
                .map(|a| (idx[a] as f64 + if quadrant >> a & 1 == 1 { 0.5 } else { 0.0 }) * xi)
                .collect();
            let upper: Vec<f64> = lower.iter().map(|l| l + 0.5 * xi).collect();
            holes.push(AxisBox::new(lower, upper)?);
        }
        for a in 0..dim {
            idx[a] += 1;
            if idx[a] < ranges[a].1 {
                break;
            }
            idx[a] = ranges[a].0;
        }
    }
    Ok(holes)
}
