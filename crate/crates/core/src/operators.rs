//! Linear measurement operators `A`, their adjoints, and inpainting masks.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::rng::{gaussian_sample, RngState};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
enum Kind {
    Identity,
    /// Kept indices into the flattened input, strictly increasing.
    Mask(Vec<usize>),
    /// Non-overlapping `factor x factor` block mean on a `height x width` image.
    Downsample {
        factor: usize,
        height: usize,
        width: usize,
    },
    Compose(Vec<MeasurementOp>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementOp {
    kind: Kind,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
}

impl MeasurementOp {
    pub fn identity(shape: &[usize]) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidShape(shape.to_vec()));
        }
        Ok(Self {
            kind: Kind::Identity,
            input_shape: shape.to_vec(),
            output_shape: shape.to_vec(),
        })
    }

    /// Keeps the listed entries of the flattened input, in the given order
    /// after sorting.
    pub fn mask(shape: &[usize], keep: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || n == 0 {
            return Err(Error::InvalidShape(shape.to_vec()));
        }
        let mut idx = keep.to_vec();
        idx.sort_unstable();
        if idx.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("mask indices must be unique".into()));
        }
        if let Some(&last) = idx.last() {
            if last >= n {
                return Err(Error::InvalidArgument(format!(
                    "mask index {last} out of range for {n} entries"
                )));
            }
        } else {
            return Err(Error::InvalidArgument("mask keeps no entries".into()));
        }
        Ok(Self {
            output_shape: vec![idx.len()],
            kind: Kind::Mask(idx),
            input_shape: shape.to_vec(),
        })
    }

    /// Observes everything except `missing`.
    pub fn inpainting(shape: &[usize], missing: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        Self::mask(shape, &complement(missing, n))
    }

    pub fn downsample(height: usize, width: usize, factor: usize) -> Result<Self> {
        if factor == 0 || height == 0 || width == 0 || height % factor != 0 || width % factor != 0 {
            return Err(Error::InvalidArgument(format!(
                "downsample factor {factor} must divide {height}x{width}"
            )));
        }
        Ok(Self {
            kind: Kind::Downsample { factor, height, width },
            input_shape: vec![height, width],
            output_shape: vec![height / factor, width / factor],
        })
    }

    /// `ops[0]` is applied first.
    pub fn compose(ops: Vec<MeasurementOp>) -> Result<Self> {
        let (first, last) = match (ops.first(), ops.last()) {
            (Some(f), Some(l)) => (f.input_shape.clone(), l.output_shape.clone()),
            _ => return Err(Error::InvalidArgument("empty composition".into())),
        };
        for w in ops.windows(2) {
            if w[0].output_shape.iter().product::<usize>() != w[1].input_shape.iter().product::<usize>() {
                return Err(Error::ShapeMismatch {
                    expected: w[1].input_shape.clone(),
                    actual: w[0].output_shape.clone(),
                });
            }
        }
        Ok(Self {
            kind: Kind::Compose(ops),
            input_shape: first,
            output_shape: last,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape.iter().product()
    }

    /// Kept indices when this is a plain mask.
    pub fn mask_indices(&self) -> Option<&[usize]> {
        match &self.kind {
            Kind::Mask(idx) => Some(idx),
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        match &self.kind {
            Kind::Identity => format!("identity{:?}", self.input_shape),
            Kind::Mask(idx) => format!("mask({} of {})", idx.len(), self.input_len()),
            Kind::Downsample { factor, height, width } => format!("downsample(f={factor}, {height}x{width})"),
            Kind::Compose(ops) => {
                let parts: Vec<String> = ops.iter().map(|o| o.describe()).collect();
                format!("compose[{}]", parts.join(", "))
            }
        }
    }

    fn check_len<S: Scalar>(v: &Tensor<S>, want: usize, shape: &[usize]) -> Result<()> {
        if v.len() != want {
            return Err(Error::ShapeMismatch {
                expected: shape.to_vec(),
                actual: v.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// `A x`. The input may have any shape with the right number of entries.
    pub fn apply<S: Scalar>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Self::check_len(x, self.input_len(), &self.input_shape)?;
        let xs = x.as_slice();
        let out = match &self.kind {
            Kind::Identity => xs.to_vec(),
            Kind::Mask(idx) => idx.iter().map(|&i| xs[i]).collect(),
            &Kind::Downsample { factor, height, width } => {
                let (oh, ow) = (height / factor, width / factor);
                let norm = S::of((factor * factor) as f64).recip();
                let mut out = vec![S::zero(); oh * ow];
                for r in 0..height {
                    for c in 0..width {
                        let o = (r / factor) * ow + c / factor;
                        out[o] = out[o] + xs[r * width + c];
                    }
                }
                out.iter_mut().for_each(|v| *v = *v * norm);
                out
            }
            Kind::Compose(ops) => {
                let mut cur = x.clone();
                for op in ops {
                    cur = op.apply(&cur)?;
                }
                cur.into_vec()
            }
        };
        Tensor::new(self.output_shape.clone(), out)
    }

    /// `Aᵀ u`, shaped like the operator input.
    pub fn adjoint<S: Scalar>(&self, u: &Tensor<S>) -> Result<Tensor<S>> {
        Self::check_len(u, self.output_len(), &self.output_shape)?;
        let us = u.as_slice();
        let out = match &self.kind {
            Kind::Identity => us.to_vec(),
            Kind::Mask(idx) => {
                let mut out = vec![S::zero(); self.input_len()];
                for (&i, &v) in idx.iter().zip(us) {
                    out[i] = v;
                }
                out
            }
            &Kind::Downsample { factor, height, width } => {
                let ow = width / factor;
                let norm = S::of((factor * factor) as f64).recip();
                (0..height * width)
                    .map(|k| us[(k / width / factor) * ow + (k % width) / factor] * norm)
                    .collect()
            }
            Kind::Compose(ops) => {
                let mut cur = u.clone();
                for op in ops.iter().rev() {
                    cur = op.adjoint(&cur)?;
                }
                cur.into_vec()
            }
        };
        Tensor::new(self.input_shape.clone(), out)
    }

    /// Dense row-major matrix of `A`, built column by column.
    pub fn to_matrix<S: Scalar>(&self) -> Result<Tensor<S>> {
        let (m, n) = (self.output_len(), self.input_len());
        let mut dense = vec![S::zero(); m * n];
        let mut basis = Tensor::zeros(&self.input_shape);
        for j in 0..n {
            basis.as_mut_slice()[j] = S::one();
            let col = self.apply(&basis)?;
            basis.as_mut_slice()[j] = S::zero();
            for (i, &v) in col.as_slice().iter().enumerate() {
                dense[i * n + j] = v;
            }
        }
        Tensor::matrix(m, n, dense)
    }
}

/// Indices in `0..n` not listed in `set`.
pub fn complement(set: &[usize], n: usize) -> Vec<usize> {
    let drop: BTreeSet<usize> = set.iter().copied().collect();
    (0..n).filter(|i| !drop.contains(i)).collect()
}

/// Collapse sorted indices into `(start, length)` runs.
pub fn run_lengths(indices: &[usize]) -> Vec<(usize, usize)> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for &i in indices {
        match runs.last_mut() {
            Some((s, l)) if *s + *l == i => *l += 1,
            _ => runs.push((i, 1)),
        }
    }
    runs
}

pub fn expand_runs(runs: &[(usize, usize)]) -> Vec<usize> {
    runs.iter().flat_map(|&(s, l)| s..s + l).collect()
}

/// Hole coverage used for free-form inpainting by default.
pub const DEFAULT_FREEFORM_COVERAGE: (f64, f64) = (0.10, 0.20);

/// Random brush-stroke mask on a `height x width` grid whose masked
/// fraction falls inside `coverage`. Strokes are random walks of 4 to 16
/// unit moves with a square brush of width 1 to 3; a stroke that would
/// overshoot the upper bound is discarded. Returns sorted flat indices.
pub fn make_freeform_mask(rng: &mut RngState, height: usize, width: usize, coverage: (f64, f64)) -> Result<Vec<usize>> {
    let (lo, hi) = coverage;
    if !(lo > 0.0 && hi < 1.0 && lo <= hi) {
        return Err(Error::InvalidArgument(format!(
            "coverage range ({lo}, {hi}) must lie inside (0, 1)"
        )));
    }
    let n = height * width;
    if n == 0 {
        return Err(Error::InvalidShape(vec![height, width]));
    }
    let (min_px, max_px) = ((lo * n as f64).ceil() as usize, (hi * n as f64).floor() as usize);
    if min_px > max_px || min_px == 0 {
        return Err(Error::InvalidArgument(format!(
            "no pixel count in {height}x{width} gives coverage in ({lo}, {hi})"
        )));
    }
    const DIRS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
    loop {
        let mut mask = vec![false; n];
        let mut count = 0;
        for _ in 0..200 {
            if count >= min_px {
                break;
            }
            let mut stroke = mask.clone();
            let brush = rng.below(1, 4) as isize;
            let (mut r, mut c) = (rng.below(0, height) as isize, rng.below(0, width) as isize);
            let mut dir = rng.below(0, 8);
            for _ in 0..rng.below(4, 17) {
                for dr in 0..brush {
                    for dc in 0..brush {
                        let (rr, cc) = (r + dr - brush / 2, c + dc - brush / 2);
                        if rr >= 0 && cc >= 0 && (rr as usize) < height && (cc as usize) < width {
                            stroke[rr as usize * width + cc as usize] = true;
                        }
                    }
                }
                // mostly keep heading, sometimes turn by 45 degrees
                match rng.below(0, 4) {
                    0 => dir = (dir + 1) % 8,
                    1 => dir = (dir + 7) % 8,
                    _ => {}
                }
                r = (r + DIRS[dir].0).clamp(0, height as isize - 1);
                c = (c + DIRS[dir].1).clamp(0, width as isize - 1);
            }
            let new_count = stroke.iter().filter(|&&m| m).count();
            if new_count <= max_px {
                mask = stroke;
                count = new_count;
            }
        }
        if (min_px..=max_px).contains(&count) {
            let idx: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
            log::debug!(
                "free-form mask: {} of {} pixels ({:.3})",
                idx.len(),
                n,
                idx.len() as f64 / n as f64
            );
            return Ok(idx);
        }
    }
}

/// Grow a mask to the union of the `block x block` tiles it touches.
pub fn dilate_mask(mask: &[usize], height: usize, width: usize, block: usize) -> Result<Vec<usize>> {
    if block == 0 || height % block != 0 || width % block != 0 {
        return Err(Error::InvalidArgument(format!(
            "block {block} must divide {height}x{width}"
        )));
    }
    let tiles_w = width / block;
    let mut tiles = BTreeSet::new();
    for &i in mask {
        if i >= height * width {
            return Err(Error::InvalidArgument(format!("mask index {i} out of range")));
        }
        tiles.insert((i / width / block) * tiles_w + (i % width) / block);
    }
    let mut out: Vec<usize> = tiles
        .iter()
        .flat_map(|&tile| {
            let (tr, tc) = (tile / tiles_w * block, tile % tiles_w * block);
            (0..block * block).map(move |k| (tr + k / block) * width + tc + k % block)
        })
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// Observation `y = A x₀ + σ_y ε`.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement<S> {
    pub y: Tensor<S>,
    pub op: MeasurementOp,
    pub noise_std: f64,
}

impl<S: Scalar> Measurement<S> {
    pub fn new(op: MeasurementOp, y: Tensor<S>, noise_std: f64) -> Result<Self> {
        if y.len() != op.output_len() {
            return Err(Error::ShapeMismatch {
                expected: op.output_shape().to_vec(),
                actual: y.shape().to_vec(),
            });
        }
        if !(noise_std >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise_std {noise_std} must be >= 0")));
        }
        let y = y.reshape(op.output_shape())?;
        Ok(Self { y, op, noise_std })
    }

    /// `|A x - y|₂`.
    pub fn residual(&self, x: &Tensor<S>) -> Result<S> {
        let r = self.op.apply(x)?.sub(&self.y)?;
        Ok(crate::tensor::norm(&r))
    }
}

pub fn synthesize_measurement<S: Scalar>(
    op: &MeasurementOp,
    x0_true: &Tensor<S>,
    noise_std: f64,
    rng: &mut RngState,
) -> Result<Measurement<S>> {
    let clean = op.apply(x0_true)?;
    let y = if noise_std == 0.0 {
        clean
    } else {
        let z = gaussian_sample::<S>(rng, op.output_shape());
        let mut y = clean;
        y.add_scaled(S::of(noise_std), &z)?;
        y
    };
    Measurement::new(op.clone(), y, noise_std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{dot, matvec};
    use proptest::prelude::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn identity_and_mask_examples() {
        let id = MeasurementOp::identity(&[2, 2]).unwrap();
        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(id.apply(&x).unwrap(), x);
        assert_eq!(id.adjoint(&x).unwrap(), x);

        let m = MeasurementOp::mask(&[2], &[0]).unwrap();
        assert_eq!(m.apply(&t(&[2], &[3.0, 5.0])).unwrap().as_slice(), &[3.0]);
        assert_eq!(m.adjoint(&t(&[1], &[2.0])).unwrap().as_slice(), &[2.0, 0.0]);
    }

    #[test]
    fn mask_validation() {
        assert!(MeasurementOp::mask(&[4], &[1, 1]).is_err());
        assert!(MeasurementOp::mask(&[4], &[4]).is_err());
        assert!(MeasurementOp::mask(&[4], &[]).is_err());
        let inp = MeasurementOp::inpainting(&[2, 2], &[1, 2]).unwrap();
        assert_eq!(inp.mask_indices().unwrap(), &[0, 3]);
    }

    #[test]
    fn downsample_constant_image() {
        let d = MeasurementOp::downsample(4, 6, 2).unwrap();
        let c = Tensor::<f64>::full(&[4, 6], 0.7);
        let y = d.apply(&c).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert!(y.as_slice().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        let back = d.adjoint(&Tensor::<f64>::full(&[2, 3], 0.8)).unwrap();
        assert!(back.as_slice().iter().all(|&v| (v - 0.2).abs() < 1e-15));
        assert!(MeasurementOp::downsample(5, 6, 2).is_err());
    }

    #[test]
    fn downsample_is_exact_on_block_constant_images() {
        let d = MeasurementOp::downsample(4, 4, 2).unwrap();
        let y = t(&[2, 2], &[1.0, -2.0, 0.5, 3.0]);
        let x = d.adjoint(&y).unwrap().scale(4.0);
        assert_eq!(d.apply(&x).unwrap(), y);
    }

    #[test]
    fn mask_projection_is_idempotent() {
        let m = MeasurementOp::mask(&[3, 3], &[0, 4, 8, 5]).unwrap();
        let x = t(&[3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let p = m.adjoint(&m.apply(&x).unwrap()).unwrap();
        let pp = m.adjoint(&m.apply(&p).unwrap()).unwrap();
        assert_eq!(p, pp);
    }

    #[test]
    fn compose_order() {
        let d = MeasurementOp::downsample(4, 4, 2).unwrap();
        let m = MeasurementOp::mask(&[2, 2], &[3]).unwrap();
        let c = MeasurementOp::compose(vec![d.clone(), m.clone()]).unwrap();
        assert_eq!(c.input_shape(), &[4, 4]);
        assert_eq!(c.output_shape(), &[1]);
        let x = Tensor::<f64>::from_f64(&[4, 4], &(0..16).map(|v| v as f64).collect::<Vec<_>>()).unwrap();
        // bottom-right block: (10 + 11 + 14 + 15) / 4
        assert_eq!(c.apply(&x).unwrap().as_slice(), &[12.5]);
        assert!(MeasurementOp::compose(vec![m, d]).is_err());
    }

    #[test]
    fn dense_matrix_matches_apply() {
        let op = MeasurementOp::compose(vec![
            MeasurementOp::downsample(4, 4, 2).unwrap(),
            MeasurementOp::mask(&[2, 2], &[0, 3]).unwrap(),
        ])
        .unwrap();
        let a = op.to_matrix::<f64>().unwrap();
        let mut rng = RngState::new(4);
        let x: Tensor<f64> = gaussian_sample(&mut rng, &[4, 4]);
        let via_dense = matvec(&a, &x).unwrap();
        assert!(via_dense.max_abs_diff(&op.apply(&x).unwrap().flatten()).unwrap() < 1e-15);
    }

    fn random_op(kind: usize, rng: &mut RngState) -> MeasurementOp {
        let keep: Vec<usize> = (0..64)
            .filter(|_| rng.bernoulli(0.5))
            .chain([7])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        match kind {
            0 => MeasurementOp::identity(&[8, 8]).unwrap(),
            1 => MeasurementOp::mask(&[8, 8], &keep).unwrap(),
            2 => MeasurementOp::downsample(8, 8, 2).unwrap(),
            _ => MeasurementOp::compose(vec![
                MeasurementOp::mask(&[8, 8], &(0..64).collect::<Vec<_>>()).unwrap(),
                MeasurementOp::downsample(8, 8, 4).unwrap(),
                MeasurementOp::mask(&[2, 2], &[1, 2]).unwrap(),
            ])
            .unwrap(),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn adjoint_property(seed in any::<u64>(), kind in 0usize..4) {
            let mut rng = RngState::new(seed);
            let op = random_op(kind, &mut rng);
            let x: Tensor<f64> = gaussian_sample(&mut rng, op.input_shape());
            let u: Tensor<f64> = gaussian_sample(&mut rng, op.output_shape());
            let lhs = dot(&op.apply(&x).unwrap().flatten(), &u.clone().flatten()).unwrap();
            let rhs = dot(&x.flatten(), &op.adjoint(&u).unwrap().flatten()).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1.0));
        }

        #[test]
        fn freeform_coverage_in_range(seed in any::<u64>()) {
            let mut rng = RngState::new(seed);
            let m = make_freeform_mask(&mut rng, 16, 16, (0.10, 0.20)).unwrap();
            let f = m.len() as f64 / 256.0;
            prop_assert!((0.10..=0.20).contains(&f), "coverage {f}");
            prop_assert!(m.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn dilation_is_tiled_superset(seed in any::<u64>()) {
            let mut rng = RngState::new(seed);
            let m = make_freeform_mask(&mut rng, 16, 16, (0.02, 0.05)).unwrap();
            let d = dilate_mask(&m, 16, 16, 4).unwrap();
            let ds: BTreeSet<usize> = d.iter().copied().collect();
            prop_assert!(m.iter().all(|i| ds.contains(i)));
            prop_assert_eq!(d.len() % 16, 0);
        }
    }

    #[test]
    fn freeform_rejects_degenerate_range() {
        let mut rng = RngState::new(0);
        assert!(make_freeform_mask(&mut rng, 16, 16, (1.0, 1.0)).is_err());
        assert!(make_freeform_mask(&mut rng, 16, 16, (0.0, 0.2)).is_err());
        assert!(make_freeform_mask(&mut rng, 16, 16, (0.3, 0.2)).is_err());
    }

    #[test]
    fn freeform_seeds_differ() {
        let a = make_freeform_mask(&mut RngState::new(1), 16, 16, (0.1, 0.2)).unwrap();
        let b = make_freeform_mask(&mut RngState::new(2), 16, 16, (0.1, 0.2)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn dilation_examples() {
        assert!(dilate_mask(&[], 16, 16, 8).unwrap().is_empty());
        let tile: Vec<usize> = (0..64).map(|k| (k / 8) * 16 + k % 8).collect();
        assert_eq!(dilate_mask(&[0], 16, 16, 8).unwrap(), tile);
        // pixels (0,7) and (0,8) straddle the two top tiles
        let both = dilate_mask(&[7, 8], 16, 16, 8).unwrap();
        assert_eq!(both, (0..128).collect::<Vec<_>>());
        assert!(dilate_mask(&[0], 16, 16, 5).is_err());
    }

    #[test]
    fn run_length_round_trip() {
        let idx = vec![0, 1, 2, 5, 7, 8];
        let runs = run_lengths(&idx);
        assert_eq!(runs, vec![(0, 3), (5, 1), (7, 2)]);
        assert_eq!(expand_runs(&runs), idx);
    }

    #[test]
    fn synthesized_noise_level() {
        let op = MeasurementOp::identity(&[100]).unwrap();
        let x = Tensor::full(&[100], 0.3);
        let clean = synthesize_measurement(&op, &x, 0.0, &mut RngState::new(0)).unwrap();
        assert_eq!(clean.y, x);
        let mut rng = RngState::new(9);
        let mut sum_sq = 0.0;
        let reps = 100;
        for _ in 0..reps {
            let m = synthesize_measurement(&op, &x, 0.05, &mut rng).unwrap();
            sum_sq += m.y.sub(&x).unwrap().as_slice().iter().map(|v| v * v).sum::<f64>();
        }
        let std = (sum_sq / (reps * 100) as f64).sqrt();
        assert!((std - 0.05).abs() <= 0.05 * 0.05, "std {std}");
        assert!(synthesize_measurement(&op, &x, -1.0, &mut rng).is_err());
    }

    #[test]
    fn residual_hand_case() {
        let m = Measurement::new(MeasurementOp::mask(&[2], &[0]).unwrap(), t(&[1], &[1.0]), 0.0).unwrap();
        assert_eq!(m.residual(&t(&[2], &[3.0, 5.0])).unwrap(), 2.0);
    }
}
