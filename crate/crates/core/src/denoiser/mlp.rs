//! Small fully-connected denoiser.
//!
//! The network sees `[x_t, √ᾱ_t, √(1 - ᾱ_t)]` and its output is added to the
//! skip term `√ᾱ_t x_t`, the posterior mean for white unit-variance data.
//! Hidden layers use `tanh` so finite differences of the map stay well
//! behaved.

use super::{check_input, Denoiser};
use crate::error::{Error, Result};
use crate::rng::{gaussian_sample, RngState};
use crate::scalar::Scalar;
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Layer<S> {
    pub(crate) inputs: usize,
    pub(crate) outputs: usize,
    /// row-major `outputs x inputs`
    pub(crate) w: Vec<S>,
    pub(crate) b: Vec<S>,
}

impl<S: Scalar> Layer<S> {
    fn random(inputs: usize, outputs: usize, gain: f64, rng: &mut RngState) -> Self {
        let std = gain / (inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            w: (0..inputs * outputs).map(|_| S::of(std * rng.normal())).collect(),
            b: vec![S::zero(); outputs],
        }
    }

    fn apply(&self, input: &[S], out: &mut Vec<S>) {
        out.clear();
        out.extend(
            self.w
                .chunks_exact(self.inputs)
                .zip(&self.b)
                .map(|(row, &b)| row.iter().zip(input).fold(b, |acc, (&w, &x)| acc + w * x)),
        );
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpDenoiser<S> {
    pub(crate) dim: usize,
    pub(crate) layers: Vec<Layer<S>>,
    pub(crate) activation: Activation,
    pub(crate) alpha_bar: Vec<S>,
}

impl<S: Scalar> MlpDenoiser<S> {
    /// Randomly initialised network (no training).
    pub fn random(dim: usize, hidden: &[usize], sched: &NoiseSchedule<S>, rng: &mut RngState) -> Self {
        let mut widths = vec![dim + 2];
        widths.extend_from_slice(hidden);
        widths.push(dim);
        let n = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer::random(w[0], w[1], if i + 1 == n { 0.5 } else { 1.0 }, rng))
            .collect();
        Self {
            dim,
            layers,
            activation: Activation::Tanh,
            alpha_bar: sched.alpha_bars().to_vec(),
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].inputs];
        w.extend(self.layers.iter().map(|l| l.outputs));
        w
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// The `ᾱ_t` table the network was trained with.
    pub fn alpha_bars(&self) -> &[S] {
        &self.alpha_bar
    }

    pub fn t_max(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    fn alpha_bar_at(&self, t: usize) -> Result<S> {
        self.alpha_bar
            .get(t)
            .copied()
            .ok_or(Error::TimestepOutOfRange { t, max: self.t_max() })
    }

    fn input_vector(&self, x: &[S], ab: S) -> Vec<S> {
        let mut z = Vec::with_capacity(self.dim + 2);
        z.extend_from_slice(x);
        z.push(ab.sqrt());
        z.push((S::one() - ab).sqrt());
        z
    }

    /// Forward pass keeping every layer's activations (input first).
    fn forward_trace(&self, x: &[S], ab: S) -> Vec<Vec<S>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(self.input_vector(x, ab));
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            layer.apply(acts.last().unwrap(), &mut out);
            if i + 1 < self.layers.len() {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
        }
        acts
    }

    /// Adds `scale * ∂|x̂₀ - x0|²/∂θ` to `grads` (layout: w0, b0, w1, b1, ...)
    /// and returns the unscaled squared error.
    fn accumulate_gradient(&self, xt: &[S], x0: &[S], ab: S, scale: S, grads: &mut [Vec<S>]) -> f64 {
        let n_layers = self.layers.len();
        let acts = self.forward_trace(xt, ab);
        let sa = ab.sqrt();
        let mut sq = 0.0;
        let mut g: Vec<S> = acts[n_layers]
            .iter()
            .zip(xt)
            .zip(x0)
            .map(|((&o, &x), &target)| {
                let r = o + sa * x - target;
                sq += r.to_f64_lossy().powi(2);
                scale * r
            })
            .collect();
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let a_in = &acts[l];
            let (gw, rest) = grads.split_at_mut(2 * l + 1);
            let gw = &mut gw[2 * l];
            let gb = &mut rest[0];
            for (o, &go) in g.iter().enumerate() {
                gb[o] = gb[o] + go;
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for (gwi, &ai) in row.iter_mut().zip(a_in) {
                    *gwi = *gwi + go * ai;
                }
            }
            if l > 0 {
                let mut prev = vec![S::zero(); layer.inputs];
                for (o, &go) in g.iter().enumerate() {
                    let row = &layer.w[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, &w) in prev.iter_mut().zip(row) {
                        *p = *p + w * go;
                    }
                }
                for (p, &a) in prev.iter_mut().zip(a_in) {
                    *p = *p * (S::one() - a * a);
                }
                g = prev;
            }
        }
        sq
    }

    fn predict(&self, x: &[S], ab: S) -> Vec<S> {
        let mut cur = self.input_vector(x, ab);
        let mut next = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if i + 1 < self.layers.len() {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            std::mem::swap(&mut cur, &mut next);
        }
        let sa = ab.sqrt();
        cur.iter_mut().zip(x).for_each(|(o, &xi)| *o = *o + sa * xi);
        cur
    }
}

impl<S: Scalar> Denoiser<S> for MlpDenoiser<S> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn denoise(&self, x_t: &Tensor<S>, t: usize) -> Result<Tensor<S>> {
        check_input(x_t, self.dim)?;
        let ab = self.alpha_bar_at(t)?;
        let out = Tensor::new(x_t.shape().to_vec(), self.predict(x_t.as_slice(), ab))?;
        if !out.is_finite() {
            return Err(Error::NonFinite(format!("MLP output at t={t}")));
        }
        Ok(out)
    }

    /// Chain rule through the layers plus the skip term `√ᾱ I`.
    fn jacobian(&self, x_t: &Tensor<S>, t: usize) -> Result<Tensor<S>> {
        check_input(x_t, self.dim)?;
        super::check_dim_cap(self.dim)?;
        let ab = self.alpha_bar_at(t)?;
        let acts = self.forward_trace(x_t.as_slice(), ab);
        let d = self.dim;
        // running product, rows = current layer width, cols = d
        let first = &self.layers[0];
        let mut prod: Vec<S> = (0..first.outputs)
            .flat_map(|o| first.w[o * first.inputs..o * first.inputs + d].to_vec())
            .collect();
        for (l, layer) in self.layers.iter().enumerate().skip(1) {
            let a = &acts[l];
            for (r, &ar) in a.iter().enumerate() {
                let g = S::one() - ar * ar;
                prod[r * d..(r + 1) * d].iter_mut().for_each(|v| *v = *v * g);
            }
            let mut next = vec![S::zero(); layer.outputs * d];
            for o in 0..layer.outputs {
                let row = &layer.w[o * layer.inputs..(o + 1) * layer.inputs];
                let out = &mut next[o * d..(o + 1) * d];
                for (k, &w) in row.iter().enumerate() {
                    for (v, &p) in out.iter_mut().zip(&prod[k * d..(k + 1) * d]) {
                        *v = *v + w * p;
                    }
                }
            }
            prod = next;
        }
        let sa = ab.sqrt();
        for i in 0..d {
            prod[i * d + i] = prod[i * d + i] + sa;
        }
        let jac = Tensor::matrix(d, d, prod)?;
        if !jac.is_finite() {
            return Err(Error::NonFinite(format!("MLP Jacobian at t={t}")));
        }
        Ok(jac)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of the dataset kept out of training (at least one sample
    /// when the dataset has two or more).
    pub held_out_fraction: f64,
    /// Noisy evaluation draws per held-out sample.
    pub held_out_draws: usize,
    /// Fail when the final held-out loss exceeds this.
    pub loss_threshold: Option<f64>,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            steps: 2000,
            batch_size: 32,
            learning_rate: 2e-3,
            held_out_fraction: 0.1,
            held_out_draws: 16,
            loss_threshold: None,
            log_every: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// `(step, minibatch loss)` every `log_every` steps.
    pub losses: Vec<(usize, f64)>,
    pub held_out_loss: f64,
    pub train_size: usize,
    pub held_out_size: usize,
}

struct Adam<S> {
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    step: i32,
}

impl<S: Scalar> Adam<S> {
    fn new(sizes: &[usize]) -> Self {
        Self {
            m: sizes.iter().map(|&n| vec![S::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![S::zero(); n]).collect(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [&mut Vec<S>], grads: &[Vec<S>], lr: f64) {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        self.step += 1;
        let c1 = S::of(1.0 - b1.powi(self.step));
        let c2 = S::of(1.0 - b2.powi(self.step));
        let (b1, b2, eps, lr) = (S::of(b1), S::of(b2), S::of(eps), S::of(lr));
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for (i, (pi, &gi)) in p.iter_mut().zip(g).enumerate() {
                let m = b1 * self.m[k][i] + (S::one() - b1) * gi;
                let v = b2 * self.v[k][i] + (S::one() - b2) * gi * gi;
                self.m[k][i] = m;
                self.v[k][i] = v;
                *pi = *pi - lr * (m / c1) / ((v / c2).sqrt() + eps);
            }
        }
    }
}

fn held_out_loss<S: Scalar>(
    model: &MlpDenoiser<S>,
    sched: &NoiseSchedule<S>,
    samples: &[&Tensor<S>],
    draws: usize,
    rng: &mut RngState,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for x0 in samples {
        for _ in 0..draws {
            let t = rng.below(1, sched.t_max() + 1);
            let xt = sched.forward_noise(x0, t, rng)?;
            let pred = model.denoise(&xt, t)?;
            total += pred
                .sub(x0)?
                .as_slice()
                .iter()
                .map(|v| v.to_f64_lossy().powi(2))
                .sum::<f64>();
            count += x0.len();
        }
    }
    Ok(total / count as f64)
}

/// Fit `x̂₀(x_t, t)` by minimising `E |x̂₀(√ᾱ x₀ + √(1-ᾱ) ε, t) - x₀|²` over
/// `t ~ U{1..T}` with Adam.
pub fn train_mlp_denoiser<S: Scalar>(
    dataset: &[Tensor<S>],
    sched: &NoiseSchedule<S>,
    cfg: &TrainConfig,
    rng: &mut RngState,
) -> Result<(MlpDenoiser<S>, TrainReport)> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?;
    if dataset.iter().any(|x| x.shape() != first.shape()) {
        return Err(Error::InvalidArgument("dataset samples differ in shape".into()));
    }
    if cfg.batch_size == 0 || cfg.hidden.is_empty() {
        return Err(Error::InvalidArgument("need batch_size >= 1 and a hidden layer".into()));
    }
    let dim = first.len();

    let n_held = if dataset.len() >= 2 {
        ((dataset.len() as f64 * cfg.held_out_fraction).round() as usize).clamp(1, dataset.len() - 1)
    } else {
        0
    };
    let (train, held): (Vec<&Tensor<S>>, Vec<&Tensor<S>>) = if n_held == 0 {
        (dataset.iter().collect(), dataset.iter().collect())
    } else {
        // deterministic shuffle before the split
        let mut idx: Vec<usize> = (0..dataset.len()).collect();
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.below(0, i + 1));
        }
        let held = idx[..n_held].iter().map(|&i| &dataset[i]).collect();
        let train = idx[n_held..].iter().map(|&i| &dataset[i]).collect();
        (train, held)
    };

    let mut model = MlpDenoiser::random(dim, &cfg.hidden, sched, rng);
    let sizes: Vec<usize> = model.layers.iter().flat_map(|l| [l.w.len(), l.b.len()]).collect();
    let mut adam = Adam::<S>::new(&sizes);
    let mut losses = Vec::new();
    let scale = S::of(2.0 / (dim * cfg.batch_size) as f64);

    for step in 0..cfg.steps {
        let mut grads: Vec<Vec<S>> = sizes.iter().map(|&n| vec![S::zero(); n]).collect();
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch_size {
            let x0 = train[rng.below(0, train.len())];
            let t = rng.below(1, sched.t_max() + 1);
            let ab = sched.alpha_bar(t)?;
            let eps = gaussian_sample::<S>(rng, x0.shape());
            let xt = sched.forward_noise_with(x0, t, &eps)?;
            batch_loss += model.accumulate_gradient(xt.as_slice(), x0.as_slice(), ab, scale, &mut grads);
        }
        batch_loss /= (dim * cfg.batch_size) as f64;
        if !batch_loss.is_finite() {
            return Err(Error::Diverged { step, loss: batch_loss });
        }
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            losses.push((step, batch_loss));
            log::debug!("train step {step}: loss {batch_loss:.6}");
        }
        // linear decay to a tenth of the base rate
        let lr = cfg.learning_rate * (1.0 - 0.9 * step as f64 / cfg.steps.max(1) as f64);
        let mut params: Vec<&mut Vec<S>> = model.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect();
        adam.update(&mut params, &grads, lr);
    }

    let mut eval_rng = rng.fork();
    let held_out = held_out_loss(&model, sched, &held, cfg.held_out_draws.max(1), &mut eval_rng)?;
    if !held_out.is_finite() {
        return Err(Error::Diverged {
            step: cfg.steps,
            loss: held_out,
        });
    }
    if let Some(th) = cfg.loss_threshold {
        if held_out > th {
            return Err(Error::Invariant(format!(
                "held-out denoising loss {held_out:.6} above threshold {th}"
            )));
        }
    }
    let report = TrainReport {
        losses,
        held_out_loss: held_out,
        train_size: train.len(),
        held_out_size: if n_held == 0 { 0 } else { held.len() },
    };
    Ok((model, report))
}
