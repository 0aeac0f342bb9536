use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rfprove::forest::{train_tree, ForestConfig};
use rfprove::geometry::{snap_to_grid, SnapDirection};
use rfprove::nn::{Expr, FnLabeler, Labeler};
use rfprove::oracle::{CellClass, GridOracle};
use rfprove::sampling::{sample_uniform, sample_union_uniform, Dataset, LabeledSample, RngStream};
use rfprove::synthetic::{generate_synthetic, SyntheticSpec};
use rfprove::verifier::run;
use rfprove::{AxisBox, BoxSet, UnitMap, XiGrid};

fn grid_box(dim: usize) -> impl Strategy<Value = AxisBox> {
    proptest::collection::vec((0u32..=8, 1u32..=8), dim).prop_map(|sides| {
        let lower: Vec<f64> = sides.iter().map(|&(l, _)| l as f64 / 8.0).collect();
        let upper: Vec<f64> = sides.iter().map(|&(l, w)| (l + w) as f64 / 8.0).collect();
        AxisBox::new(lower, upper).unwrap()
    })
}

fn box_sets() -> impl Strategy<Value = (usize, Vec<AxisBox>)> {
    (1usize..=3).prop_flat_map(|dim| (Just(dim), proptest::collection::vec(grid_box(dim), 0..10)))
}

fn point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-0.25f64..2.25, dim)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn dedup_is_idempotent_and_keeps_the_union((dim, boxes) in box_sets(), seed in any::<u64>()) {
        let set = BoxSet::new(boxes.clone());
        let once = set.remove_duplicate_boxes();
        prop_assert_eq!(once.remove_duplicate_boxes(), once.clone());
        for b in &once {
            prop_assert!(boxes.contains(b));
        }
        for (i, a) in once.iter().enumerate() {
            for (j, b) in once.iter().enumerate() {
                prop_assert!(i == j || !a.contains_box(b).unwrap());
            }
        }
        let region = AxisBox::new(vec![-0.25; dim], vec![2.25; dim]).unwrap();
        for x in sample_uniform(&region, 200, &mut RngStream::new(seed, 0)).unwrap() {
            prop_assert_eq!(set.in_union(&x), once.in_union(&x));
        }
    }

    #[test]
    fn union_samples_land_in_the_union((_, boxes) in box_sets(), seed in any::<u64>()) {
        prop_assume!(!boxes.is_empty());
        let set = BoxSet::new(boxes);
        for x in sample_union_uniform(&set, 100, &mut RngStream::new(seed, 0)).unwrap() {
            prop_assert!(set.in_union(&x));
        }
    }

    #[test]
    fn unit_map_round_trips(
        lower in proptest::collection::vec(-100.0f64..100.0, 3),
        widths in proptest::collection::vec(0.01f64..50.0, 3),
        u in proptest::collection::vec(0.0f64..=1.0, 3),
    ) {
        let upper: Vec<f64> = lower.iter().zip(&widths).map(|(l, w)| l + w).collect();
        let region = AxisBox::new(lower, upper).unwrap();
        let map = UnitMap::new(region.clone()).unwrap();
        let x = map.from_unit(&u);
        prop_assert!(region.contains_point(&x).unwrap());
        for (a, b) in map.to_unit(&x).iter().zip(&u) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn snapping_lands_on_lines_on_the_requested_side(v in -0.5f64..1.5, depth in 1u32..12) {
        let grid = XiGrid::unit(1, depth).unwrap();
        let down = snap_to_grid(v, &grid, 0, SnapDirection::Down);
        let up = snap_to_grid(v, &grid, 0, SnapDirection::Up);
        prop_assert!(grid.line_index(0, down.value).is_some());
        prop_assert!(grid.line_index(0, up.value).is_some());
        prop_assert_eq!(down.clamped, !(0.0..=1.0).contains(&v));
        if (0.0..=1.0).contains(&v) {
            prop_assert!(down.value <= v + 1e-9 && up.value >= v - 1e-9);
            prop_assert!(up.value - down.value <= grid.xi() + 1e-12);
        }
    }

    #[test]
    fn leaves_partition_the_cube(seed in any::<u64>(), dim in 1usize..4, depth in 1u32..7, threshold in 0.1f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = sample_uniform(&AxisBox::unit(dim), 200, &mut rng).unwrap();
        let data = Dataset::new(points.into_iter().map(|x| {
            let y = x.iter().sum::<f64>() / dim as f64 > threshold;
            LabeledSample { x, y }
        }).collect());
        let config = ForestConfig { n_trees: 1, max_depth: depth, ..ForestConfig::default() };
        let grid = XiGrid::unit(dim, depth).unwrap();
        let tree = train_tree(&data, &config, &grid, &mut rng).unwrap();
        let leaves = tree.leaves();
        let volume: f64 = leaves.iter().map(|l| l.bbox.volume()).sum();
        prop_assert!((volume - 1.0).abs() < 1e-9);
        prop_assert!(tree.depth() <= depth as usize);
        for x in sample_uniform(&AxisBox::unit(dim), 100, &mut rng).unwrap() {
            let holders = leaves.iter().filter(|l| {
                (0..dim).all(|a| l.bbox.lower()[a] <= x[a] && x[a] < l.bbox.upper()[a])
            }).count();
            prop_assert_eq!(holders, 1);
            prop_assert!(tree.route(&x).bbox.contains_point(&x).unwrap());
        }
        for leaf in &leaves {
            prop_assert!(leaf.n_distinct <= leaf.n_samples);
            prop_assert!(leaf.n_positive <= leaf.n_samples);
        }
    }

    #[test]
    fn compiled_min_max_trees_match_their_reference(
        boxes in proptest::collection::vec(grid_box(2), 1..4),
        hole in grid_box(2),
        x in proptest::collection::vec(0u32..=64, 2),
    ) {
        let union = Expr::Max(boxes.iter().map(|b| Expr::inside_box(b.lower(), b.upper())).collect());
        let e = Expr::Min(vec![union, Expr::outside_box(hole.lower(), hole.upper())]);
        let net = e.compile(2).unwrap();
        let x: Vec<f64> = x.iter().map(|&v| v as f64 / 64.0).collect();
        prop_assert_eq!(net.forward(&x).unwrap()[0], e.eval(&x));
    }

    #[test]
    fn dedup_keeps_the_point_queries(b in grid_box(2), x in point(2)) {
        let set = BoxSet::new(vec![b.clone(), b.clone()]);
        prop_assert_eq!(set.remove_duplicate_boxes().len(), 1);
        prop_assert_eq!(set.in_union(&x), b.contains_point(&x).unwrap());
    }
}

#[test]
fn oracle_cells_agree_with_labels() {
    let unaligned = Expr::inside_box(&[0.3, 0.2], &[0.7, 0.9]);
    let diagonal = Expr::Affine {
        coeffs: vec![1.0, 1.0],
        bias: -1.0,
    };
    for e in [unaligned, diagonal] {
        let lab = FnLabeler::new(2, move |x: &[f64]| e.eval(x));
        let oracle = GridOracle::new(&lab, &AxisBox::unit(2), 5).unwrap();
        let mut rng = RngStream::new(5, 0);
        for class in [CellClass::Positive, CellClass::Negative] {
            let cells: Vec<_> = oracle.cells_of(class).collect();
            assert!(!cells.is_empty());
            for cell in cells {
                for x in sample_uniform(&oracle.cell_box(&cell), 5, &mut rng).unwrap() {
                    assert_eq!(lab.label(&x).unwrap(), class == CellClass::Positive, "{x:?}");
                }
            }
        }
    }
}

#[test]
fn oracle_brackets_the_sampled_volume() {
    let e = Expr::Max(vec![
        Expr::inside_box(&[0.1, 0.15], &[0.45, 0.6]),
        Expr::inside_box(&[0.3, 0.5], &[0.95, 0.8]),
    ]);
    let lab = FnLabeler::new(2, move |x: &[f64]| e.eval(x));
    let oracle = GridOracle::new(&lab, &AxisBox::unit(2), 6).unwrap();
    let (lo, hi) = oracle.bracket().bounds();
    let n = 200_000;
    let pts = sample_uniform(&AxisBox::unit(2), n, &mut RngStream::new(11, 0)).unwrap();
    let p = pts.iter().filter(|x| lab.label(x).unwrap()).count() as f64 / n as f64;
    let slack = 4.0 * (p * (1.0 - p) / n as f64).sqrt();
    assert!(lo - slack <= p && p <= hi + slack, "{lo} {p} {hi}");
    assert!(hi - lo > 0.0);
}

#[test]
fn oracle_volume_converges_to_the_analytic_value() {
    let synth = generate_synthetic(
        &SyntheticSpec::BoxIndicator {
            lower: vec![0.3, 0.2],
            upper: vec![0.7, 0.9],
            noise: None,
        },
        0,
    )
    .unwrap();
    let truth = synth.truth.analytic_volume().unwrap();
    let coarse = rfprove::oracle::build_oracle(&synth.task, 4).unwrap().bracket();
    let fine = rfprove::oracle::build_oracle(&synth.task, 8).unwrap().bracket();
    for b in [coarse, fine] {
        let (lo, hi) = b.bounds();
        assert!(lo <= truth && truth <= hi);
    }
    assert!(fine.mixed < coarse.mixed);
    assert!((fine.positive - truth).abs() < (coarse.positive - truth).abs());
}

#[test]
fn coverage_trace_is_monotone_with_a_fixed_test_set() {
    for spec in [SyntheticSpec::multi_box2d(), SyntheticSpec::diagonal_halfspace(3)] {
        let mut task = generate_synthetic(&spec, 0).unwrap().task;
        task.m = 3000;
        task.k = 3000;
        task.forest.n_trees = 30;
        task.params.coverage_target = 1.0;
        task.options.fixed_test_set = true;
        for seed in 0..3 {
            let r = run(&task, seed).unwrap();
            assert!(
                r.coverage_trace.windows(2).all(|w| w[0] <= w[1]),
                "{:?}",
                r.coverage_trace
            );
        }
    }
}
