//! Randomized decision trees whose split thresholds are restricted to the
//! dyadic `ξ`-grid, and forests of such trees.
//!
//! Leaves are never classified by vote: the verifier only harvests leaves
//! whose (bootstrap) training samples are all positive.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{snap_to_grid, AxisBox, SnapDirection, XiGrid};
use crate::sampling::{Dataset, Purpose, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: u32,
    pub bootstrap: bool,
    /// Candidate axes drawn per split; `None` means `floor(sqrt(N))`, at least 1.
    pub features_per_split: Option<usize>,
    pub min_samples_split: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 500,
            max_depth: 5,
            bootstrap: true,
            features_per_split: None,
            min_samples_split: 2,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn features_for(&self, dim: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (dim as f64).sqrt().floor() as usize)
            .clamp(1, dim.max(1))
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::param("n_trees", "need at least one tree"));
        }
        if self.max_depth == 0 || self.max_depth > XiGrid::MAX_DEPTH {
            return Err(Error::param(
                "max_depth",
                format!("must be in 1..={}", XiGrid::MAX_DEPTH),
            ));
        }
        if let Some(k) = self.features_per_split {
            if k == 0 || k > dim {
                return Err(Error::param("features_per_split", format!("must be in 1..={dim}")));
            }
        }
        if self.min_samples_split == 0 {
            return Err(Error::param("min_samples_split", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    /// Bootstrap samples routed here, counted with multiplicity.
    pub n_samples: usize,
    pub n_positive: usize,
    /// Distinct training points routed here.
    pub n_distinct: usize,
    pub bbox: AxisBox,
}

impl Leaf {
    pub fn is_pure_positive(&self) -> bool {
        self.n_samples >= 1 && self.n_positive == self.n_samples
    }
}

/// Left child receives `x[axis] < threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Internal {
        axis: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf(Leaf),
}

impl TreeNode {
    pub fn leaves(&self) -> Vec<&Leaf> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            match node {
                TreeNode::Leaf(l) => out.push(l),
                TreeNode::Internal { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf(_) => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// `(axis, threshold)` of every internal node, pre-order.
    pub fn splits(&self) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            if let TreeNode::Internal {
                axis,
                threshold,
                left,
                right,
            } = node
            {
                out.push((*axis, *threshold));
                stack.push(right);
                stack.push(left);
            }
        }
        out
    }

    pub fn route(&self, x: &[f64]) -> &Leaf {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf(l) => return l,
                TreeNode::Internal {
                    axis,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*axis] < *threshold { left } else { right };
                }
            }
        }
    }
}

/// Binary Gini impurity `2p(1 − p)`; zero for an empty node.
pub fn gini_impurity(n_pos: usize, n_total: usize) -> f64 {
    if n_total == 0 {
        return 0.0;
    }
    let p = n_pos as f64 / n_total as f64;
    2.0 * p * (1.0 - p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub axis: usize,
    pub threshold: f64,
    pub impurity_decrease: f64,
}

/// Exhaustive scan of the grid lines strictly inside `node_box` on each
/// candidate axis. Ties (within `TIE_TOLERANCE`) go to the lowest axis, then
/// to the threshold nearest the middle of the node, then the lower one.
/// Thresholds that leave either side empty are skipped.
pub const TIE_TOLERANCE: f64 = 1e-12;

pub fn best_split(
    data: &Dataset,
    indices: &[usize],
    node_box: &AxisBox,
    grid: &XiGrid,
    candidate_axes: &[usize],
) -> Option<Split> {
    let n = indices.len();
    let samples = data.samples();
    let n_pos = indices.iter().filter(|&&i| samples[i].y).count();
    if n == 0 || n_pos == 0 || n_pos == n {
        return None;
    }
    let parent = gini_impurity(n_pos, n);
    let mut axes = candidate_axes.to_vec();
    axes.sort_unstable();
    axes.dedup();

    let mut best: Option<Split> = None;
    let mut tot = Vec::new();
    let mut pos = Vec::new();
    for axis in axes {
        let lo = snap_to_grid(node_box.lower()[axis], grid, axis, SnapDirection::Up).value;
        let hi = snap_to_grid(node_box.upper()[axis], grid, axis, SnapDirection::Down).value;
        let (Some(k_lo), Some(k_hi)) = (grid.line_index(axis, lo), grid.line_index(axis, hi)) else {
            continue;
        };
        if k_hi < k_lo + 2 {
            continue;
        }
        let cells = (k_hi - k_lo) as usize;
        let mid = 0.5 * (node_box.lower()[axis] + node_box.upper()[axis]);
        tot.clear();
        tot.resize(cells, 0usize);
        pos.clear();
        pos.resize(cells, 0usize);
        for &i in indices {
            let c = grid.cell_of(axis, samples[i].x[axis]).clamp(k_lo, k_hi - 1);
            let slot = (c - k_lo) as usize;
            tot[slot] += 1;
            pos[slot] += usize::from(samples[i].y);
        }
        let (mut nl, mut pl) = (0usize, 0usize);
        for j in 1..cells {
            nl += tot[j - 1];
            pl += pos[j - 1];
            let nr = n - nl;
            if nl == 0 || nr == 0 {
                continue;
            }
            let pr = n_pos - pl;
            let child = (nl as f64 * gini_impurity(pl, nl) + nr as f64 * gini_impurity(pr, nr)) / n as f64;
            let decrease = parent - child;
            let threshold = grid.line(axis, k_lo + j as u64);
            let better = best.is_none_or(|b| {
                decrease > b.impurity_decrease + TIE_TOLERANCE
                    || (b.axis == axis
                        && decrease >= b.impurity_decrease - TIE_TOLERANCE
                        && (threshold - mid).abs() < (b.threshold - mid).abs())
            });
            if better {
                best = Some(Split {
                    axis,
                    threshold,
                    impurity_decrease: decrease,
                });
            }
        }
    }
    best
}

struct Builder<'a, R> {
    data: &'a Dataset,
    config: &'a ForestConfig,
    grid: &'a XiGrid,
    features: usize,
    rng: &'a mut R,
}

impl<R: Rng> Builder<'_, R> {
    fn leaf(&self, indices: &[usize], bbox: AxisBox) -> TreeNode {
        let samples = self.data.samples();
        let n_positive = indices.iter().filter(|&&i| samples[i].y).count();
        let mut distinct = indices.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        TreeNode::Leaf(Leaf {
            n_samples: indices.len(),
            n_positive,
            n_distinct: distinct.len(),
            bbox,
        })
    }

    fn grow(&mut self, indices: Vec<usize>, bbox: AxisBox, depth: u32) -> TreeNode {
        let samples = self.data.samples();
        let n = indices.len();
        let n_pos = indices.iter().filter(|&&i| samples[i].y).count();
        if n_pos == 0 || n_pos == n || depth >= self.config.max_depth || n < self.config.min_samples_split {
            return self.leaf(&indices, bbox);
        }
        let dim = bbox.dim();
        let chosen: Vec<usize> = sample_indices(self.rng, dim, self.features).into_vec();
        let mut split = best_split(self.data, &indices, &bbox, self.grid, &chosen);
        if split.is_none() && self.features < dim {
            // keep looking on the axes that were not drawn
            let rest: Vec<usize> = (0..dim).filter(|a| !chosen.contains(a)).collect();
            split = best_split(self.data, &indices, &bbox, self.grid, &rest);
        }
        let Some(split) = split else {
            return self.leaf(&indices, bbox);
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
            .iter()
            .partition(|&&i| samples[i].x[split.axis] < split.threshold);
        let (left_box, right_box) = bbox.split_at(split.axis, split.threshold);
        let left = self.grow(left_idx, left_box, depth + 1);
        let right = self.grow(right_idx, right_box, depth + 1);
        TreeNode::Internal {
            axis: split.axis,
            threshold: split.threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

/// Grows one tree on a bootstrap resample (if configured) of `data`.
pub fn train_tree<R: Rng>(data: &Dataset, config: &ForestConfig, grid: &XiGrid, rng: &mut R) -> Result<TreeNode> {
    if data.is_empty() {
        return Err(Error::param("data", "cannot train on an empty dataset"));
    }
    let dim = data.dim();
    if dim != grid.dim() {
        return Err(Error::Dim {
            expected: grid.dim(),
            got: dim,
        });
    }
    config.validate(dim)?;
    let m = data.len();
    let indices: Vec<usize> = if config.bootstrap {
        (0..m).map(|_| rng.gen_range(0..m)).collect()
    } else {
        (0..m).collect()
    };
    let mut builder = Builder {
        data,
        config,
        grid,
        features: config.features_for(dim),
        rng,
    };
    Ok(builder.grow(indices, grid.domain().clone(), 0))
}

/// The stream tree `t` of a forest seeded with `seed` draws from.
pub fn tree_stream(seed: u64, t: usize) -> RngStream {
    RngStream::for_purpose(seed, Purpose::Tree, t as u64, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Forest {
    trees: Vec<TreeNode>,
    config: ForestConfig,
    grid: XiGrid,
}

impl Forest {
    pub fn trees(&self) -> &[TreeNode] {
        &self.trees
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn grid(&self) -> &XiGrid {
        &self.grid
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("forest serializes")
    }
}

/// Trains `n_trees` trees in parallel, each on its own stream.
pub fn train_forest(data: &Dataset, config: &ForestConfig, grid: &XiGrid) -> Result<Forest> {
    let trees = train_trees(data, config, grid, 0..config.n_trees)?;
    Ok(Forest {
        trees,
        config: config.clone(),
        grid: grid.clone(),
    })
}

/// Trees `range` of the forest described by `config`. Tree `t` is the same
/// whichever range it is trained in.
pub fn train_trees(
    data: &Dataset,
    config: &ForestConfig,
    grid: &XiGrid,
    range: std::ops::Range<usize>,
) -> Result<Vec<TreeNode>> {
    config.validate(data.dim())?;
    if grid.depth() != config.max_depth {
        return Err(Error::param("max_depth", "grid depth must equal the tree depth bound"));
    }
    if range.end > config.n_trees {
        return Err(Error::param(
            "range",
            format!("forest has only {} trees", config.n_trees),
        ));
    }
    range
        .into_par_iter()
        .map(|t| train_tree(data, config, grid, &mut tree_stream(config.seed, t)))
        .collect()
}

/// Leaves whose training samples are all positive (and non-empty).
pub fn get_pure_positive_leaves(tree: &TreeNode) -> Vec<Leaf> {
    tree.leaves()
        .into_iter()
        .filter(|l| l.is_pure_positive())
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::LabeledSample;

    fn ds(points: &[(f64, bool)]) -> Dataset {
        Dataset::new(points.iter().map(|&(x, y)| LabeledSample { x: vec![x], y }).collect())
    }

    fn cfg(depth: u32) -> ForestConfig {
        ForestConfig {
            n_trees: 1,
            max_depth: depth,
            bootstrap: false,
            ..ForestConfig::default()
        }
    }

    #[test]
    fn tree_ranges_match_full_forest() {
        let mut rng = RngStream::new(9, 0);
        let data = Dataset::new(
            (0..300)
                .map(|_| {
                    let x = vec![rng.gen::<f64>(), rng.gen::<f64>()];
                    let y = x[0] > 0.4;
                    LabeledSample { x, y }
                })
                .collect(),
        );
        let config = ForestConfig {
            n_trees: 12,
            seed: 4,
            ..ForestConfig::default()
        };
        let grid = XiGrid::unit(2, 5).unwrap();
        let full = train_forest(&data, &config, &grid).unwrap();
        let mut parts = train_trees(&data, &config, &grid, 0..5).unwrap();
        parts.extend(train_trees(&data, &config, &grid, 5..12).unwrap());
        assert_eq!(full.trees(), parts.as_slice());
        assert!(train_trees(&data, &config, &grid, 10..13).is_err());
    }

    #[test]
    fn gini_values() {
        assert_eq!(gini_impurity(0, 10), 0.0);
        assert_eq!(gini_impurity(5, 10), 0.5);
        assert_eq!(gini_impurity(3, 4), 0.375);
        assert_eq!(gini_impurity(0, 0), 0.0);
    }

    /// Independent check: evaluate every interior grid threshold by hand.
    fn brute_force_split(points: &[(f64, bool)], depth: u32) -> (f64, f64) {
        let g = |p: &[(f64, bool)]| {
            let n = p.len() as f64;
            let k = p.iter().filter(|q| q.1).count() as f64;
            if n == 0.0 {
                0.0
            } else {
                1.0 - (k / n).powi(2) - (1.0 - k / n).powi(2)
            }
        };
        let cells = 1u32 << depth;
        let mut scored = Vec::new();
        for j in 1..cells {
            let t = j as f64 / cells as f64;
            let (l, r): (Vec<_>, Vec<_>) = points.iter().partition(|p| p.0 < t);
            if l.is_empty() || r.is_empty() {
                continue;
            }
            let n = points.len() as f64;
            scored.push((t, g(points) - l.len() as f64 / n * g(&l) - r.len() as f64 / n * g(&r)));
        }
        let top = scored.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        // among near-maximal thresholds prefer the most central, then the lowest
        scored
            .into_iter()
            .filter(|s| s.1 >= top - 1e-12)
            .min_by(|a, b| {
                (a.0 - 0.5)
                    .abs()
                    .total_cmp(&(b.0 - 0.5).abs())
                    .then(a.0.total_cmp(&b.0))
            })
            .unwrap()
    }

    #[test]
    fn best_split_separates_one_dimensional_classes() {
        let pts = [(0.1, true), (0.2, true), (0.8, false), (0.9, false)];
        let (t, d) = brute_force_split(&pts, 2);
        assert_eq!((t, d), (0.5, 0.5));
        let data = ds(&pts);
        let grid = XiGrid::unit(1, 2).unwrap();
        let s = best_split(&data, &[0, 1, 2, 3], &AxisBox::unit(1), &grid, &[0]).unwrap();
        assert_eq!(s.axis, 0);
        assert_eq!(s.threshold, t);
        assert!((s.impurity_decrease - d).abs() < 1e-12);
    }

    #[test]
    fn best_split_matches_brute_force_on_random_data() {
        let mut rng = RngStream::new(3, 0);
        for depth in [2, 3, 5] {
            let pts: Vec<(f64, bool)> = (0..60)
                .map(|_| {
                    let x: f64 = rng.gen();
                    (x, rng.gen_bool(if x < 0.4 { 0.8 } else { 0.2 }))
                })
                .collect();
            let (t, d) = brute_force_split(&pts, depth);
            let data = ds(&pts);
            let idx: Vec<usize> = (0..pts.len()).collect();
            let s = best_split(&data, &idx, &AxisBox::unit(1), &XiGrid::unit(1, depth).unwrap(), &[0]).unwrap();
            assert_eq!(s.threshold, t);
            assert!((s.impurity_decrease - d).abs() < 1e-12);
        }
    }

    #[test]
    fn no_split_on_pure_or_narrow_nodes() {
        let data = ds(&[(0.1, true), (0.2, true)]);
        let grid = XiGrid::unit(1, 3).unwrap();
        assert!(best_split(&data, &[0, 1], &AxisBox::unit(1), &grid, &[0]).is_none());

        let data = ds(&[(0.13, true), (0.14, false)]);
        let narrow = AxisBox::new(vec![0.125], vec![0.25]).unwrap();
        assert!(best_split(&data, &[0, 1], &narrow, &grid, &[0]).is_none());
    }

    #[test]
    fn uniform_label_dataset_gives_single_leaf() {
        let data = ds(&[(0.1, false), (0.6, false), (0.9, false)]);
        let grid = XiGrid::unit(1, 4).unwrap();
        let tree = train_tree(&data, &cfg(4), &grid, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(tree.depth(), 0);
        assert!(get_pure_positive_leaves(&tree).is_empty());

        let data = ds(&[(0.1, true), (0.6, true)]);
        let tree = train_tree(&data, &cfg(4), &grid, &mut RngStream::new(0, 0)).unwrap();
        let leaves = get_pure_positive_leaves(&tree);
        assert_eq!(leaves.len(), 1);
        assert_eq!(leaves[0].bbox, AxisBox::unit(1));
    }

    #[test]
    fn depth_one_separable_tree() {
        let data = ds(&[(0.1, true), (0.3, true), (0.6, false), (0.9, false)]);
        let grid = XiGrid::unit(1, 1).unwrap();
        let tree = train_tree(&data, &cfg(1), &grid, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(tree.depth(), 1);
        assert_eq!(tree.leaves().len(), 2);
        let pure = get_pure_positive_leaves(&tree);
        assert_eq!(pure.len(), 1);
        assert_eq!(pure[0].bbox, AxisBox::new(vec![0.0], vec![0.5]).unwrap());
        assert_eq!(pure[0].n_distinct, 2);
    }

    #[test]
    fn leaves_tile_the_cube() {
        let mut rng = RngStream::new(8, 0);
        let pts: Vec<LabeledSample> = (0..2000)
            .map(|_| {
                let x = vec![rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
                let y = x[0] * x[0] + x[1] > 0.7;
                LabeledSample { x, y }
            })
            .collect();
        let data = Dataset::new(pts);
        let c = ForestConfig {
            n_trees: 4,
            max_depth: 6,
            ..ForestConfig::default()
        };
        let forest = train_forest(&data, &c, &XiGrid::unit(3, 6).unwrap()).unwrap();
        for tree in forest.trees() {
            let total: f64 = tree.leaves().iter().map(|l| l.bbox.volume()).sum();
            assert!((total - 1.0).abs() < 1e-9);
            assert!(tree.depth() <= 6);
            assert!(get_pure_positive_leaves(tree).len() <= 1 << 5);
            for (axis, t) in tree.splits() {
                assert!(forest.grid().line_index(axis, t).is_some());
            }
        }
    }

    #[test]
    fn forest_is_deterministic_and_tree_zero_uses_stream_zero() {
        let mut rng = RngStream::new(1, 1);
        let pts: Vec<LabeledSample> = (0..500)
            .map(|_| {
                let x = vec![rng.gen::<f64>(), rng.gen::<f64>()];
                let y = x[0] > 0.3 && x[1] < 0.6;
                LabeledSample { x, y }
            })
            .collect();
        let data = Dataset::new(pts);
        let grid = XiGrid::unit(2, 5).unwrap();
        let c = ForestConfig {
            n_trees: 1,
            seed: 77,
            ..ForestConfig::default()
        };
        let f1 = train_forest(&data, &c, &grid).unwrap();
        let f2 = train_forest(&data, &c, &grid).unwrap();
        assert_eq!(f1, f2);
        let lone = train_tree(&data, &c, &grid, &mut tree_stream(77, 0)).unwrap();
        assert_eq!(f1.trees()[0], lone);
    }

    #[test]
    fn config_validation() {
        assert!(ForestConfig {
            n_trees: 0,
            ..ForestConfig::default()
        }
        .validate(2)
        .is_err());
        assert!(ForestConfig {
            max_depth: 0,
            ..ForestConfig::default()
        }
        .validate(2)
        .is_err());
        assert!(ForestConfig {
            features_per_split: Some(3),
            ..ForestConfig::default()
        }
        .validate(2)
        .is_err());
        assert_eq!(ForestConfig::default().features_for(10), 3);
        assert_eq!(ForestConfig::default().features_for(2), 1);
    }
}
