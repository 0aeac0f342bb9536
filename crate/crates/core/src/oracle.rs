//! Brute-force ground truth on a fine dyadic grid over the input region.
//!
//! Each cell is probed on its `3^N` half-lattice points and its `2^N`
//! sub-cell centers. Points on the cell boundary may sit exactly on the
//! decision boundary (margin 0) without spoiling the cell; interior probes
//! must be strictly signed.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AxisBox, BoxSet, UnitMap};
use crate::nn::Labeler;
use crate::sampling::UnitLabeler;
use crate::verifier::VerificationTask;

pub const MAX_DIM: usize = 4;
pub const MAX_CELL_BITS: u32 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellClass {
    Positive,
    Negative,
    Mixed,
}

#[derive(Debug, Clone)]
pub struct GridOracle {
    map: UnitMap,
    depth: u32,
    cells_per_axis: u64,
    classes: Vec<CellClass>,
    positive: usize,
    negative: usize,
}

/// Volume shares of the input region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeBracket {
    pub positive: f64,
    pub negative: f64,
    pub mixed: f64,
}

impl VolumeBracket {
    /// Lower and upper bound on the preimage volume fraction.
    pub fn bounds(&self) -> (f64, f64) {
        (self.positive, self.positive + self.mixed)
    }
}

/// Oracle-measured purity of a union of boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleError {
    /// `vol(negative ∩ union) / vol(union)`.
    pub error: f64,
    /// `vol(mixed ∩ union) / vol(union)`; the true error lies in
    /// `[error, error + band]`.
    pub band: f64,
}

impl OracleError {
    pub fn worst_case(&self) -> f64 {
        self.error + self.band
    }
}

/// Per-class volume of `cells ∩ union`, in cells.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Overlap {
    positive: f64,
    negative: f64,
    mixed: f64,
}

impl Overlap {
    fn total(&self) -> f64 {
        self.positive + self.negative + self.mixed
    }
}

pub fn build_oracle(task: &VerificationTask, depth: u32) -> Result<GridOracle> {
    GridOracle::new(&task.labeler, &task.region, depth)
}

pub fn oracle_coverage(oracle: &GridOracle, boxes: &BoxSet) -> Result<f64> {
    oracle.coverage(boxes)
}

pub fn oracle_error(oracle: &GridOracle, boxes: &BoxSet) -> Result<OracleError> {
    oracle.error(boxes)
}

impl GridOracle {
    pub fn new<L: Labeler + ?Sized>(labeler: &L, region: &AxisBox, depth: u32) -> Result<Self> {
        let dim = region.dim();
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Intractable(format!(
                "oracle supports 1..={MAX_DIM} dimensions, got {dim}"
            )));
        }
        if depth == 0 || dim as u32 * depth > MAX_CELL_BITS {
            return Err(Error::Intractable(format!(
                "2^({dim}·{depth}) cells exceeds the 2^{MAX_CELL_BITS} limit"
            )));
        }
        let map = UnitMap::new(region.clone())?;
        let unit = UnitLabeler::new(labeler, &map)?;
        let cells_per_axis = 1u64 << depth;
        let total = 1usize << (dim as u32 * depth);
        let classes = (0..total)
            .into_par_iter()
            .map(|c| classify(&unit, &cell_coords(c, dim, cells_per_axis), cells_per_axis))
            .collect::<Result<Vec<_>>>()?;
        let positive = classes.iter().filter(|&&c| c == CellClass::Positive).count();
        let negative = classes.iter().filter(|&&c| c == CellClass::Negative).count();
        Ok(GridOracle {
            map,
            depth,
            cells_per_axis,
            classes,
            positive,
            negative,
        })
    }

    pub fn dim(&self) -> usize {
        self.map.dim()
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn region(&self) -> &AxisBox {
        self.map.region()
    }

    pub fn cell_count(&self) -> usize {
        self.classes.len()
    }

    pub fn count(&self, class: CellClass) -> usize {
        match class {
            CellClass::Positive => self.positive,
            CellClass::Negative => self.negative,
            CellClass::Mixed => self.classes.len() - self.positive - self.negative,
        }
    }

    /// Class of the cell containing `x` (original coordinates).
    pub fn class_at(&self, x: &[f64]) -> Result<CellClass> {
        if x.len() != self.dim() {
            return Err(Error::Dim {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let u = self.map.to_unit(x);
        let per = self.cells_per_axis;
        let coords: Vec<u64> = u
            .iter()
            .map(|v| ((v.clamp(0.0, 1.0) * per as f64) as u64).min(per - 1))
            .collect();
        Ok(self.classes[cell_index(&coords, per)])
    }

    /// The cell with integer coordinates `coords`, in original coordinates.
    pub fn cell_box(&self, coords: &[u64]) -> AxisBox {
        self.map.box_from_unit(&unit_cell(coords, self.cells_per_axis))
    }

    pub fn cells_of(&self, class: CellClass) -> impl Iterator<Item = Vec<u64>> + '_ {
        let dim = self.dim();
        let per = self.cells_per_axis;
        self.classes
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == class)
            .map(move |(i, _)| cell_coords(i, dim, per))
    }

    pub fn bracket(&self) -> VolumeBracket {
        let n = self.classes.len() as f64;
        VolumeBracket {
            positive: self.positive as f64 / n,
            negative: self.negative as f64 / n,
            mixed: self.count(CellClass::Mixed) as f64 / n,
        }
    }

    /// `vol(positive ∩ union) / vol(positive)`; boxes are in original coordinates.
    pub fn coverage(&self, boxes: &BoxSet) -> Result<f64> {
        if self.positive == 0 {
            return Err(Error::param("oracle", "zero positive volume; coverage undefined"));
        }
        Ok(self.overlap(boxes)?.positive / self.positive as f64)
    }

    pub fn error(&self, boxes: &BoxSet) -> Result<OracleError> {
        let o = self.overlap(boxes)?;
        let total = o.total();
        if total <= 0.0 {
            return Err(Error::EmptyBoxSet);
        }
        Ok(OracleError {
            error: o.negative / total,
            band: o.mixed / total,
        })
    }

    /// Per-box purity, one entry per box in order.
    pub fn box_errors(&self, boxes: &BoxSet) -> Result<Vec<OracleError>> {
        boxes
            .iter()
            .map(|b| self.error(&BoxSet::new(vec![b.clone()])))
            .collect()
    }

    fn overlap(&self, boxes: &BoxSet) -> Result<Overlap> {
        let dim = self.dim();
        let per = self.cells_per_axis;
        let scale = per as f64;
        // boxes in cell units, clipped to the grid
        let mut scaled = Vec::with_capacity(boxes.len());
        for b in boxes {
            if b.dim() != dim {
                return Err(Error::Dim {
                    expected: dim,
                    got: b.dim(),
                });
            }
            let u = self.map.box_to_unit(b);
            let lower: Vec<f64> = u.lower().iter().map(|v| (v * scale).clamp(0.0, scale)).collect();
            let upper: Vec<f64> = u.upper().iter().map(|v| (v * scale).clamp(0.0, scale)).collect();
            if lower.iter().zip(&upper).any(|(l, h)| h <= l) {
                continue;
            }
            scaled.push((lower, upper));
        }

        let mut full = vec![false; self.classes.len()];
        let mut partial: HashMap<usize, Vec<usize>> = HashMap::new();
        for (bi, (lower, upper)) in scaled.iter().enumerate() {
            let ranges: Vec<(u64, u64)> = lower
                .iter()
                .zip(upper)
                .map(|(&l, &h)| (l.floor() as u64, (h.ceil() as u64).min(per)))
                .collect();
            for_each_cell(&ranges, |coords| {
                let idx = cell_index(coords, per);
                if full[idx] {
                    return;
                }
                let inside = coords
                    .iter()
                    .enumerate()
                    .all(|(a, &c)| lower[a] <= c as f64 && (c + 1) as f64 <= upper[a]);
                if inside {
                    full[idx] = true;
                } else {
                    partial.entry(idx).or_default().push(bi);
                }
            });
        }

        let mut acc = Overlap::default();
        let mut add = |idx: usize, v: f64| match self.classes[idx] {
            CellClass::Positive => acc.positive += v,
            CellClass::Negative => acc.negative += v,
            CellClass::Mixed => acc.mixed += v,
        };
        for (idx, &f) in full.iter().enumerate() {
            if f {
                add(idx, 1.0);
            }
        }
        let mut keys: Vec<usize> = partial.keys().copied().filter(|&i| !full[i]).collect();
        keys.sort_unstable();
        for idx in keys {
            let coords = cell_coords(idx, dim, per);
            let clipped: Vec<(Vec<f64>, Vec<f64>)> = partial[&idx]
                .iter()
                .map(|&bi| {
                    let (l, h) = &scaled[bi];
                    let lo = coords.iter().zip(l).map(|(&c, &v)| v.max(c as f64)).collect();
                    let hi = coords.iter().zip(h).map(|(&c, &v)| v.min((c + 1) as f64)).collect();
                    (lo, hi)
                })
                .collect();
            add(idx, union_volume(&clipped));
        }
        Ok(acc)
    }
}

fn cell_coords(mut index: usize, dim: usize, per: u64) -> Vec<u64> {
    (0..dim)
        .map(|_| {
            let c = index as u64 % per;
            index /= per as usize;
            c
        })
        .collect()
}

fn cell_index(coords: &[u64], per: u64) -> usize {
    coords
        .iter()
        .rev()
        .fold(0usize, |acc, &c| acc * per as usize + c as usize)
}

fn unit_cell(coords: &[u64], per: u64) -> AxisBox {
    let scale = per as f64;
    AxisBox::new(
        coords.iter().map(|&c| c as f64 / scale).collect(),
        coords.iter().map(|&c| (c + 1) as f64 / scale).collect(),
    )
    .expect("grid cell is a valid box")
}

fn for_each_cell(ranges: &[(u64, u64)], mut f: impl FnMut(&[u64])) {
    if ranges.iter().any(|(a, b)| a >= b) {
        return;
    }
    let mut coords: Vec<u64> = ranges.iter().map(|r| r.0).collect();
    loop {
        f(&coords);
        let mut axis = 0;
        loop {
            if axis == ranges.len() {
                return;
            }
            coords[axis] += 1;
            if coords[axis] < ranges[axis].1 {
                break;
            }
            coords[axis] = ranges[axis].0;
            axis += 1;
        }
    }
}

/// Exact volume of a union of boxes by coordinate compression.
fn union_volume(boxes: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let Some(first) = boxes.first() else {
        return 0.0;
    };
    let dim = first.0.len();
    let breaks: Vec<Vec<f64>> = (0..dim)
        .map(|a| {
            let mut v: Vec<f64> = boxes.iter().flat_map(|(l, h)| [l[a], h[a]]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        })
        .collect();
    let ranges: Vec<(u64, u64)> = breaks.iter().map(|b| (0, b.len().saturating_sub(1) as u64)).collect();
    let mut total = 0.0;
    for_each_cell(&ranges, |idx| {
        let mid: Vec<f64> = idx
            .iter()
            .enumerate()
            .map(|(a, &i)| 0.5 * (breaks[a][i as usize] + breaks[a][i as usize + 1]))
            .collect();
        let covered = boxes
            .iter()
            .any(|(l, h)| mid.iter().enumerate().all(|(a, &m)| l[a] <= m && m <= h[a]));
        if covered {
            total += idx
                .iter()
                .enumerate()
                .map(|(a, &i)| breaks[a][i as usize + 1] - breaks[a][i as usize])
                .product::<f64>();
        }
    });
    total
}

fn classify<L: Labeler>(labeler: &L, coords: &[u64], per: u64) -> Result<CellClass> {
    let dim = coords.len();
    let scale = per as f64;
    let mut all_nonneg = true;
    let mut all_nonpos = true;
    let mut x = vec![0.0; dim];

    // half-lattice: offsets 0, 1/2, 1 of a cell per axis; only the center is interior
    let lattice = 3usize.pow(dim as u32);
    for code in 0..lattice {
        let mut rest = code;
        let mut interior = true;
        for (a, xa) in x.iter_mut().enumerate() {
            let step = rest % 3;
            rest /= 3;
            interior &= step == 1;
            *xa = (coords[a] as f64 + 0.5 * step as f64) / scale;
        }
        let v = labeler.margin(&x)?;
        let (pos_ok, neg_ok) = if interior {
            (v > 0.0, v < 0.0)
        } else {
            (v >= 0.0, v <= 0.0)
        };
        all_nonneg &= pos_ok;
        all_nonpos &= neg_ok;
        if !all_nonneg && !all_nonpos {
            return Ok(CellClass::Mixed);
        }
    }
    for code in 0..(1usize << dim) {
        for (a, xa) in x.iter_mut().enumerate() {
            let q = if code >> a & 1 == 1 { 0.75 } else { 0.25 };
            *xa = (coords[a] as f64 + q) / scale;
        }
        let v = labeler.margin(&x)?;
        all_nonneg &= v > 0.0;
        all_nonpos &= v < 0.0;
        if !all_nonneg && !all_nonpos {
            return Ok(CellClass::Mixed);
        }
    }
    Ok(if all_nonneg {
        CellClass::Positive
    } else {
        CellClass::Negative
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Expr, FnLabeler};

    fn bx(l: &[f64], u: &[f64]) -> AxisBox {
        AxisBox::new(l.to_vec(), u.to_vec()).unwrap()
    }

    fn square_oracle(depth: u32) -> GridOracle {
        let e = Expr::inside_box(&[0.25, 0.25], &[0.75, 0.75]);
        let lab = FnLabeler::new(2, move |x: &[f64]| e.eval(x));
        GridOracle::new(&lab, &AxisBox::unit(2), depth).unwrap()
    }

    #[test]
    fn aligned_box_is_exact() {
        let o = square_oracle(4);
        let b = o.bracket();
        assert_eq!(b.positive, 0.25);
        assert_eq!(b.mixed, 0.0);
        assert_eq!(b.negative, 0.75);
    }

    #[test]
    fn unaligned_box_has_mixed_shell() {
        let e = Expr::inside_box(&[0.3, 0.3], &[0.7, 0.7]);
        let lab = FnLabeler::new(2, move |x: &[f64]| e.eval(x));
        let o = GridOracle::new(&lab, &AxisBox::unit(2), 4).unwrap();
        let (lo, hi) = o.bracket().bounds();
        assert!(lo <= 0.16 && 0.16 <= hi);
        assert!(o.count(CellClass::Mixed) > 0);
        for cell in o.cells_of(CellClass::Mixed) {
            let c = o.cell_box(&cell);
            let touches = [0.3, 0.7]
                .iter()
                .any(|&t| (0..2).any(|a| c.lower()[a] <= t && t <= c.upper()[a]));
            assert!(touches, "{c:?}");
        }
    }

    #[test]
    fn all_negative_has_no_positive_cells() {
        let lab = FnLabeler::new(3, |_: &[f64]| -1.0);
        let o = GridOracle::new(&lab, &AxisBox::unit(3), 3).unwrap();
        assert_eq!(o.count(CellClass::Positive), 0);
        assert!(o.coverage(&BoxSet::default()).is_err());
    }

    #[test]
    fn diagonal_mixed_count_grows_with_depth() {
        let lab = FnLabeler::new(2, |x: &[f64]| x[0] + x[1] - 1.0);
        let mut prev_width = 1.0;
        for depth in [3, 5, 7] {
            let o = GridOracle::new(&lab, &AxisBox::unit(2), depth).unwrap();
            assert_eq!(o.count(CellClass::Mixed), 1usize << depth);
            let (lo, hi) = o.bracket().bounds();
            assert!(lo <= 0.5 && 0.5 <= hi);
            assert!(hi - lo < prev_width);
            prev_width = hi - lo;
        }
    }

    #[test]
    fn tractability_guard() {
        let lab = FnLabeler::new(5, |_: &[f64]| 1.0);
        assert!(matches!(
            GridOracle::new(&lab, &AxisBox::unit(5), 2),
            Err(Error::Intractable(_))
        ));
        let lab = FnLabeler::new(3, |_: &[f64]| 1.0);
        assert!(matches!(
            GridOracle::new(&lab, &AxisBox::unit(3), 9),
            Err(Error::Intractable(_))
        ));
        assert!(GridOracle::new(&lab, &AxisBox::unit(3), 8).is_ok());
    }

    #[test]
    fn coverage_examples() {
        let o = square_oracle(4);
        let exact = BoxSet::new(vec![bx(&[0.25, 0.25], &[0.75, 0.75])]);
        assert_eq!(o.coverage(&exact).unwrap(), 1.0);
        let half = BoxSet::new(vec![bx(&[0.25, 0.25], &[0.5, 0.75])]);
        assert_eq!(o.coverage(&half).unwrap(), 0.5);
        assert_eq!(o.coverage(&BoxSet::default()).unwrap(), 0.0);
        // overlapping boxes are not double counted
        let twice = BoxSet::new(vec![bx(&[0.25, 0.25], &[0.5, 0.75]), bx(&[0.25, 0.25], &[0.5, 0.75])]);
        assert_eq!(o.coverage(&twice).unwrap(), 0.5);
    }

    #[test]
    fn error_examples() {
        let o = square_oracle(4);
        let inside = BoxSet::new(vec![bx(&[0.3, 0.3], &[0.6, 0.7])]);
        assert_eq!(o.error(&inside).unwrap(), OracleError { error: 0.0, band: 0.0 });
        let outside = BoxSet::new(vec![bx(&[0.8, 0.0], &[1.0, 0.2])]);
        assert_eq!(o.error(&outside).unwrap().error, 1.0);
        let straddle = BoxSet::new(vec![bx(&[0.5, 0.25], &[1.0, 0.75])]);
        assert_eq!(o.error(&straddle).unwrap().error, 0.5);
        assert!(matches!(o.error(&BoxSet::default()), Err(Error::EmptyBoxSet)));
    }

    #[test]
    fn partial_cells_use_exact_overlap() {
        let o = square_oracle(2);
        // a quarter-cell box overlapping a positive cell and a negative cell
        let b = BoxSet::new(vec![bx(&[0.125, 0.25], &[0.375, 0.375])]);
        let e = o.error(&b).unwrap();
        assert!((e.error - 0.5).abs() < 1e-12);
        assert!((o.coverage(&b).unwrap() - 0.0625).abs() < 1e-12);
    }

    #[test]
    fn union_volume_by_compression() {
        let v = union_volume(&[(vec![0.0, 0.0], vec![2.0, 1.0]), (vec![1.0, 0.0], vec![3.0, 2.0])]);
        assert_eq!(v, 5.0);
        assert_eq!(union_volume(&[]), 0.0);
    }

    #[test]
    fn original_coordinates_are_respected() {
        let e = Expr::inside_box(&[-1.0, 0.0], &[0.0, 5.0]);
        let lab = FnLabeler::new(2, move |x: &[f64]| e.eval(x));
        let region = bx(&[-2.0, 0.0], &[2.0, 10.0]);
        let o = GridOracle::new(&lab, &region, 3).unwrap();
        assert_eq!(o.bracket().positive, 0.125);
        assert_eq!(o.class_at(&[-0.5, 2.0]).unwrap(), CellClass::Positive);
        assert_eq!(o.class_at(&[1.5, 2.0]).unwrap(), CellClass::Negative);
        let exact = BoxSet::new(vec![bx(&[-1.0, 0.0], &[0.0, 5.0])]);
        assert_eq!(o.coverage(&exact).unwrap(), 1.0);
    }
}
