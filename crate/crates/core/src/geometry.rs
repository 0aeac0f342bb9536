//! Axis-aligned boxes, dyadic grids, containment and union membership.
//!
//! Everything downstream of task setup works in the unit cube `[0, 1]^N`;
//! [`UnitMap`] converts to and from the task's original input region.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed N-dimensional hyperrectangle `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct AxisBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Deserialize)]
struct RawBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawBox> for AxisBox {
    type Error = Error;

    fn try_from(raw: RawBox) -> Result<Self> {
        AxisBox::new(raw.lower, raw.upper)
    }
}

impl AxisBox {
    /// Zero-width sides are representable; callers that sample from a box
    /// reject them via [`AxisBox::ensure_nondegenerate`].
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidBox("zero-dimensional box".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::Dim {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() {
                return Err(Error::InvalidBox(format!("non-finite bound on axis {i}")));
            }
            if l > u {
                return Err(Error::InvalidBox(format!("lower {l} > upper {u} on axis {i}")));
            }
        }
        Ok(AxisBox { lower, upper })
    }

    pub fn unit(dim: usize) -> Self {
        AxisBox {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.side(i)).product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn is_degenerate(&self) -> bool {
        self.lower.iter().zip(&self.upper).any(|(l, u)| l >= u)
    }

    pub fn ensure_nondegenerate(&self) -> Result<()> {
        match self.lower.iter().zip(&self.upper).position(|(l, u)| l >= u) {
            Some(axis) => Err(Error::DegenerateBox { axis }),
            None => Ok(()),
        }
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::Dim {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }

    pub fn contains_box(&self, inner: &AxisBox) -> Result<bool> {
        self.check_dim(inner.dim())?;
        Ok(self.encloses(inner))
    }

    pub fn contains_point(&self, x: &[f64]) -> Result<bool> {
        self.check_dim(x.len())?;
        Ok(self.covers(x))
    }

    #[inline]
    pub(crate) fn encloses(&self, inner: &AxisBox) -> bool {
        (0..self.dim()).all(|i| self.lower[i] <= inner.lower[i] && inner.upper[i] <= self.upper[i])
    }

    #[inline]
    pub(crate) fn covers(&self, x: &[f64]) -> bool {
        self.lower
            .iter()
            .zip(&self.upper)
            .zip(x)
            .all(|((l, u), v)| *l <= *v && *v <= *u)
    }

    /// Intersection, `None` when empty. Touching boxes yield a degenerate box.
    pub fn intersection(&self, other: &AxisBox) -> Option<AxisBox> {
        let mut lower = Vec::with_capacity(self.dim());
        let mut upper = Vec::with_capacity(self.dim());
        for i in 0..self.dim() {
            let l = self.lower[i].max(other.lower[i]);
            let u = self.upper[i].min(other.upper[i]);
            if l > u {
                return None;
            }
            lower.push(l);
            upper.push(u);
        }
        Some(AxisBox { lower, upper })
    }

    /// Splits at `threshold` on `axis` into `(below, above)`.
    pub fn split_at(&self, axis: usize, threshold: f64) -> (AxisBox, AxisBox) {
        let mut below = self.clone();
        let mut above = self.clone();
        below.upper[axis] = threshold;
        above.lower[axis] = threshold;
        (below, above)
    }

    /// Volume of the intersection (0 when disjoint or touching).
    pub fn overlap_volume(&self, other: &AxisBox) -> f64 {
        (0..self.dim())
            .map(|i| (self.upper[i].min(other.upper[i]) - self.lower[i].max(other.lower[i])).max(0.0))
            .product()
    }
}

pub fn volume(b: &AxisBox) -> f64 {
    b.volume()
}

pub fn contains_box(outer: &AxisBox, inner: &AxisBox) -> Result<bool> {
    outer.contains_box(inner)
}

pub fn contains_point(b: &AxisBox, x: &[f64]) -> Result<bool> {
    b.contains_point(x)
}

/// An ordered collection of boxes, possibly overlapping.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoxSet {
    boxes: Vec<AxisBox>,
}

impl BoxSet {
    pub fn new(boxes: Vec<AxisBox>) -> Self {
        BoxSet { boxes }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn push(&mut self, b: AxisBox) {
        self.boxes.push(b);
    }

    pub fn iter(&self) -> std::slice::Iter<'_, AxisBox> {
        self.boxes.iter()
    }

    pub fn boxes(&self) -> &[AxisBox] {
        &self.boxes
    }

    pub fn into_boxes(self) -> Vec<AxisBox> {
        self.boxes
    }

    pub fn in_union(&self, x: &[f64]) -> bool {
        self.boxes.iter().any(|b| b.dim() == x.len() && b.covers(x))
    }

    /// Number of boxes containing `x`.
    pub fn multiplicity(&self, x: &[f64]) -> usize {
        self.boxes.iter().filter(|b| b.covers(x)).count()
    }

    /// Sum of individual volumes (overlaps counted repeatedly).
    pub fn total_volume(&self) -> f64 {
        self.boxes.iter().map(AxisBox::volume).sum()
    }

    /// Drops every box contained in another one; among exact duplicates the
    /// earliest survives. Surviving boxes keep their input order.
    pub fn remove_duplicate_boxes(&self) -> BoxSet {
        let n = self.boxes.len();
        let vols: Vec<f64> = self.boxes.iter().map(AxisBox::volume).collect();
        let mut by_volume: Vec<usize> = (0..n).collect();
        by_volume.sort_by(|&a, &b| vols[b].total_cmp(&vols[a]).then(a.cmp(&b)));

        let keep: Vec<bool> = (0..n)
            .map(|i| {
                let bi = &self.boxes[i];
                !by_volume
                    .iter()
                    .take_while(|&&j| vols[j] >= vols[i])
                    .any(|&j| j != i && self.boxes[j].encloses(bi) && (self.boxes[j] != *bi || j < i))
            })
            .collect();
        BoxSet {
            boxes: self
                .boxes
                .iter()
                .zip(keep)
                .filter(|&(_, k)| k)
                .map(|(b, _)| b.clone())
                .collect(),
        }
    }
}

impl FromIterator<AxisBox> for BoxSet {
    fn from_iter<I: IntoIterator<Item = AxisBox>>(iter: I) -> Self {
        BoxSet::new(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a BoxSet {
    type Item = &'a AxisBox;
    type IntoIter = std::slice::Iter<'a, AxisBox>;

    fn into_iter(self) -> Self::IntoIter {
        self.boxes.iter()
    }
}

pub fn remove_duplicate_boxes(s: &BoxSet) -> BoxSet {
    s.remove_duplicate_boxes()
}

pub fn in_union(s: &BoxSet, x: &[f64]) -> bool {
    s.in_union(x)
}

/// Dyadic grid of step `xi = 2^-depth` (relative to each side of `domain`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XiGrid {
    domain: AxisBox,
    depth: u32,
    xi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapDirection {
    Down,
    Up,
}

/// Result of [`snap_to_grid`]; `clamped` flags an out-of-domain input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snapped {
    pub value: f64,
    pub clamped: bool,
}

impl XiGrid {
    pub const MAX_DEPTH: u32 = 40;

    pub fn new(domain: AxisBox, depth: u32) -> Result<Self> {
        if depth == 0 || depth > Self::MAX_DEPTH {
            return Err(Error::param("depth", format!("must be in 1..={}", Self::MAX_DEPTH)));
        }
        domain.ensure_nondegenerate()?;
        Ok(XiGrid {
            domain,
            depth,
            xi: (-(depth as f64)).exp2(),
        })
    }

    pub fn unit(dim: usize, depth: u32) -> Result<Self> {
        Self::new(AxisBox::unit(dim), depth)
    }

    pub fn domain(&self) -> &AxisBox {
        &self.domain
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn cells_per_axis(&self) -> u64 {
        1u64 << self.depth
    }

    /// Coordinate of grid line `k` on `axis`.
    pub fn line(&self, axis: usize, k: u64) -> f64 {
        if k == self.cells_per_axis() {
            return self.domain.upper[axis];
        }
        self.domain.lower[axis] + (k as f64) * self.xi * self.domain.side(axis)
    }

    /// Position of `value` in grid units (fractional).
    fn grid_units(&self, axis: usize, value: f64) -> f64 {
        (value - self.domain.lower[axis]) / self.domain.side(axis) * self.cells_per_axis() as f64
    }

    /// Index of the cell containing `value`; the upper domain edge belongs to
    /// the last cell.
    pub fn cell_of(&self, axis: usize, value: f64) -> u64 {
        let t = self.grid_units(axis, value).floor();
        if t <= 0.0 {
            0
        } else {
            (t as u64).min(self.cells_per_axis() - 1)
        }
    }

    /// Exact grid-line test; in the unit cube this is an exact dyadic check.
    pub fn line_index(&self, axis: usize, value: f64) -> Option<u64> {
        let t = self.grid_units(axis, value);
        (t.fract() == 0.0 && t >= 0.0 && t <= self.cells_per_axis() as f64 && self.line(axis, t as u64) == value)
            .then_some(t as u64)
    }
}

pub fn snap_to_grid(value: f64, grid: &XiGrid, axis: usize, direction: SnapDirection) -> Snapped {
    let lo = grid.domain.lower[axis];
    let hi = grid.domain.upper[axis];
    if value <= lo || value >= hi {
        let clamped = value < lo || value > hi;
        return Snapped {
            value: if value <= lo { lo } else { hi },
            clamped,
        };
    }
    let t = grid.grid_units(axis, value);
    let nearest = t.round();
    // floating drift around a grid line snaps to the line itself
    let k = if (t - nearest).abs() < 1e-9 {
        nearest
    } else {
        match direction {
            SnapDirection::Down => t.floor(),
            SnapDirection::Up => t.ceil(),
        }
    };
    Snapped {
        value: grid.line(axis, k as u64),
        clamped: false,
    }
}

/// Affine map between an input region and the unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitMap {
    region: AxisBox,
}

impl UnitMap {
    pub fn new(region: AxisBox) -> Result<Self> {
        region.ensure_nondegenerate()?;
        Ok(UnitMap { region })
    }

    pub fn region(&self) -> &AxisBox {
        &self.region
    }

    pub fn dim(&self) -> usize {
        self.region.dim()
    }

    pub fn from_unit_into(&self, u: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(u.iter().enumerate().map(|(i, &t)| {
            let (lo, hi) = (self.region.lower[i], self.region.upper[i]);
            if t == 0.0 {
                lo
            } else if t == 1.0 {
                hi
            } else {
                (lo + t * (hi - lo)).clamp(lo, hi)
            }
        }));
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(u.len());
        self.from_unit_into(u, &mut out);
        out
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let (lo, hi) = (self.region.lower[i], self.region.upper[i]);
                if v == lo {
                    0.0
                } else if v == hi {
                    1.0
                } else {
                    (v - lo) / (hi - lo)
                }
            })
            .collect()
    }

    pub fn box_from_unit(&self, b: &AxisBox) -> AxisBox {
        AxisBox {
            lower: self.from_unit(&b.lower),
            upper: self.from_unit(&b.upper),
        }
    }

    pub fn box_to_unit(&self, b: &AxisBox) -> AxisBox {
        AxisBox {
            lower: self.to_unit(&b.lower),
            upper: self.to_unit(&b.upper),
        }
    }
}
