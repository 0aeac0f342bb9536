//! Seeded sampling: uniform points in boxes, labeled example generation, and
//! exact uniform sampling over a (possibly overlapping) union of boxes.

use std::io::Write;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AxisBox, BoxSet, UnitMap};
use crate::nn::Labeler;

/// What a stream is used for; part of the stream id so that purposes never
/// collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Training = 1,
    Tree = 2,
    Filter = 3,
    Coverage = 4,
    Error = 5,
    Synthetic = 6,
    Auxiliary = 7,
}

/// Packs `(purpose, major, minor)` into a 64-bit ChaCha stream id:
/// 8 bits of purpose, 28 bits each for the two indices.
pub fn stream_id(purpose: Purpose, major: u64, minor: u64) -> u64 {
    const MASK: u64 = (1 << 28) - 1;
    debug_assert!(major <= MASK && minor <= MASK);
    ((purpose as u64) << 56) | ((major & MASK) << 28) | (minor & MASK)
}

/// A single-owner ChaCha8 stream keyed by `(seed, stream_id)`.
///
/// ChaCha's 64-bit stream parameter gives independent, counter-based
/// sequences for each id, so results never depend on thread scheduling.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream { seed, stream_id, rng }
    }

    pub fn for_purpose(seed: u64, purpose: Purpose, major: u64, minor: u64) -> Self {
        Self::new(seed, stream_id(purpose, major, minor))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// Evaluates a labeler on unit-cube coordinates by mapping them back into the
/// task's input region first.
pub struct UnitLabeler<'a, L: ?Sized> {
    inner: &'a L,
    map: &'a UnitMap,
}

impl<'a, L: Labeler + ?Sized> UnitLabeler<'a, L> {
    pub fn new(inner: &'a L, map: &'a UnitMap) -> Result<Self> {
        if inner.input_dim() != map.dim() {
            return Err(Error::Dim {
                expected: inner.input_dim(),
                got: map.dim(),
            });
        }
        Ok(UnitLabeler { inner, map })
    }
}

impl<L: Labeler + ?Sized> Labeler for UnitLabeler<'_, L> {
    fn input_dim(&self) -> usize {
        self.map.dim()
    }

    fn margin(&self, u: &[f64]) -> Result<f64> {
        self.inner.margin(&self.map.from_unit(u))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub y: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
    positives_count: usize,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledSample>) -> Self {
        let positives_count = samples.iter().filter(|s| s.y).count();
        Dataset {
            samples,
            positives_count,
        }
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positives_count(&self) -> usize {
        self.positives_count
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.x.len())
    }

    /// CSV with one column per coordinate plus `label`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.dim()).map(|i| format!("x{i}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for s in &self.samples {
            let mut row: Vec<String> = s.x.iter().map(|v| v.to_string()).collect();
            row.push(u8::from(s.y).to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn uniform_point<R: Rng + ?Sized>(b: &AxisBox, rng: &mut R) -> Vec<f64> {
    b.lower()
        .iter()
        .zip(b.upper())
        .map(|(&l, &u)| (l + rng.gen::<f64>() * (u - l)).min(u))
        .collect()
}

/// `count` i.i.d. uniform points in `b`.
pub fn sample_uniform<R: Rng + ?Sized>(b: &AxisBox, count: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    b.ensure_nondegenerate()?;
    Ok((0..count).map(|_| uniform_point(b, rng)).collect())
}

/// Draws `count` uniform points in `region` and labels each one.
pub fn get_examples<L: Labeler + ?Sized, R: Rng + ?Sized>(
    labeler: &L,
    count: usize,
    region: &AxisBox,
    rng: &mut R,
) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::param("count", "at least one example is required"));
    }
    let points = sample_uniform(region, count, rng)?;
    let samples = points
        .into_iter()
        .map(|x| {
            let y = labeler.label(&x)?;
            Ok(LabeledSample { x, y })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(samples))
}

/// Uniform sampler over `∪ b_i`: pick a box proportionally to its volume,
/// draw inside it, and accept with probability `1 / multiplicity(x)`.
pub struct UnionSampler<'a> {
    set: &'a BoxSet,
    weights: WeightedIndex<f64>,
}

impl<'a> UnionSampler<'a> {
    pub fn new(set: &'a BoxSet) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::EmptyBoxSet);
        }
        for b in set {
            b.ensure_nondegenerate()?;
        }
        let weights = WeightedIndex::new(set.iter().map(AxisBox::volume))
            .map_err(|e| Error::InvalidBox(format!("cannot weight boxes by volume: {e}")))?;
        Ok(UnionSampler { set, weights })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        loop {
            let b = &self.set.boxes()[self.weights.sample(rng)];
            let x = uniform_point(b, rng);
            let k = self.set.multiplicity(&x).max(1);
            if k == 1 || rng.gen::<f64>() * (k as f64) < 1.0 {
                return x;
            }
        }
    }
}

pub fn sample_union_uniform<R: Rng + ?Sized>(s: &BoxSet, count: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let sampler = UnionSampler::new(s)?;
    Ok((0..count).map(|_| sampler.sample(rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::FnLabeler;

    fn bx(l: &[f64], u: &[f64]) -> AxisBox {
        AxisBox::new(l.to_vec(), u.to_vec()).unwrap()
    }

    #[test]
    fn same_stream_same_sequence() {
        let a: Vec<u64> = (0..16)
            .map({
                let mut r = RngStream::new(42, 3);
                move |_| r.next_u64()
            })
            .collect();
        let mut r = RngStream::new(42, 3);
        let b: Vec<u64> = (0..16).map(|_| r.next_u64()).collect();
        assert_eq!(a, b);
        assert_ne!(RngStream::new(42, 4).next_u64(), RngStream::new(42, 3).next_u64());
        assert_ne!(RngStream::new(43, 3).next_u64(), RngStream::new(42, 3).next_u64());
    }

    #[test]
    fn stream_ids_do_not_collide_across_purposes() {
        assert_ne!(stream_id(Purpose::Filter, 1, 2), stream_id(Purpose::Coverage, 1, 2));
        assert_ne!(stream_id(Purpose::Filter, 1, 2), stream_id(Purpose::Filter, 2, 1));
    }

    #[test]
    fn zero_count_is_empty() {
        let mut rng = RngStream::new(1, 0);
        assert!(sample_uniform(&AxisBox::unit(2), 0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn degenerate_box_is_rejected() {
        let mut rng = RngStream::new(1, 0);
        assert!(sample_uniform(&bx(&[0.0, 0.5], &[1.0, 0.5]), 3, &mut rng).is_err());
    }

    #[test]
    fn uniform_points_are_inside_and_centred() {
        let mut rng = RngStream::new(5, 0);
        let pts = sample_uniform(&AxisBox::unit(2), 10_000, &mut rng).unwrap();
        assert!(pts.iter().all(|p| AxisBox::unit(2).contains_point(p).unwrap()));
        for axis in 0..2 {
            let mean = pts.iter().map(|p| p[axis]).sum::<f64>() / pts.len() as f64;
            assert!((0.48..=0.52).contains(&mean), "axis {axis} mean {mean}");
        }
    }

    #[test]
    fn examples_inside_and_outside_indicator_region() {
        let inside = bx(&[0.25, 0.25], &[0.75, 0.75]);
        let lab = FnLabeler::new(2, |x: &[f64]| {
            (x[0] - 0.25).min(0.75 - x[0]).min(x[1] - 0.25).min(0.75 - x[1])
        });
        let mut rng = RngStream::new(9, 0);
        let d = get_examples(&lab, 500, &inside, &mut rng).unwrap();
        assert_eq!(d.positives_count(), 500);
        let outside = bx(&[0.8, 0.8], &[1.0, 1.0]);
        let d = get_examples(&lab, 500, &outside, &mut rng).unwrap();
        assert_eq!(d.positives_count(), 0);
        assert!(get_examples(&lab, 0, &inside, &mut rng).is_err());
    }

    #[test]
    fn half_space_splits_training_set_evenly() {
        let lab = FnLabeler::new(3, |x: &[f64]| x[0] + x[1] - 1.0);
        let mut rng = RngStream::new(11, 0);
        let d = get_examples(&lab, 20_000, &AxisBox::unit(3), &mut rng).unwrap();
        let frac = d.positives_count() as f64 / 20_000.0;
        assert!((0.47..=0.53).contains(&frac), "{frac}");
        for s in d.samples() {
            assert_eq!(lab.label(&s.x).unwrap(), s.y);
        }
    }

    #[test]
    fn union_sampling_weights_disjoint_boxes_by_volume() {
        let s = BoxSet::new(vec![bx(&[0.0, 0.0], &[0.75, 1.0]), bx(&[0.75, 0.0], &[1.0, 1.0])]);
        let mut rng = RngStream::new(2, 0);
        let pts = sample_union_uniform(&s, 10_000, &mut rng).unwrap();
        let in_first = pts.iter().filter(|p| p[0] < 0.75).count() as f64 / 1e4;
        assert!((0.72..=0.78).contains(&in_first), "{in_first}");
    }

    #[test]
    fn union_sampling_does_not_double_count_overlap() {
        let b = bx(&[0.0, 0.0], &[1.0, 1.0]);
        let s = BoxSet::new(vec![b.clone(), b]);
        let mut rng = RngStream::new(4, 0);
        let pts = sample_union_uniform(&s, 10_000, &mut rng).unwrap();
        let left = pts.iter().filter(|p| p[0] < 0.5).count() as f64 / 1e4;
        assert!((0.47..=0.53).contains(&left), "{left}");
    }

    #[test]
    fn union_sampling_of_empty_set_fails() {
        let mut rng = RngStream::new(4, 0);
        assert!(matches!(
            sample_union_uniform(&BoxSet::default(), 1, &mut rng),
            Err(Error::EmptyBoxSet)
        ));
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let d = Dataset::new(vec![
            LabeledSample {
                x: vec![0.5, 0.25],
                y: true,
            },
            LabeledSample {
                x: vec![0.0, 1.0],
                y: false,
            },
        ]);
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "x0,x1,label\n0.5,0.25,1\n0,1,0\n");
    }
}
