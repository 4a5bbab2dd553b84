//! Conditional denoising diffusion over data points.
//!
//! The noise predictor `ε_θ(x_t, t, s)` is an MLP over the concatenation of the
//! noisy point, sinusoidal step features and the condition vector. Sampling is
//! DDPM ancestral with `σ_t² = β_t`; the final step `x_1 → x_0` adds no noise so
//! that, given `x_1`, the generated point is a deterministic function of the
//! condition and can be recorded on a tape.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use crate::autodiff::{Tape, Var};
use crate::embedding::EmbeddingTable;
use crate::nn::{Activation, Mlp};
use crate::optim::{Optimizer, Param, Rule};
use crate::rng::{self, stream};
use crate::world::Dataset;
use crate::{Error, Result, Tensor};

/// Number of sinusoidal step features.
pub const TIME_FEATURES: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    /// `betas[t - 1] = β_t` for `t = 1..=T`.
    betas: Vec<f64>,
    /// `alpha_bar[t] = ᾱ_t` for `t = 0..=T`, with `ᾱ_0 = 1`.
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(crate::error::invalid("noise schedule needs at least one step"));
        }
        if let Some(b) = betas.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
            return Err(crate::error::invalid(format!("beta {b} outside (0, 1)")));
        }
        let mut alpha_bar = Vec::with_capacity(betas.len() + 1);
        alpha_bar.push(1.0);
        let mut prod = 1.0;
        for b in &betas {
            prod *= 1.0 - b;
            alpha_bar.push(prod);
        }
        Ok(Self { betas, alpha_bar })
    }

    /// β linear in `t` from `beta_start` to `beta_end`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    /// The usual 1e-4..0.02 linear range rescaled by `1000 / T`, so short
    /// horizons still end near pure noise. β is capped at 0.999.
    pub fn scaled_linear(steps: usize) -> Result<Self> {
        let scale = 1000.0 / steps as f64;
        Self::linear(steps, (1e-4 * scale).min(0.999), (0.02 * scale).min(0.999))
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::OutOfRange {
                what: "diffusion step",
                value: t,
                limit: self.steps(),
            });
        }
        Ok(())
    }

    /// Coefficients of one reverse step at `t`: `x_{t-1} = (x_t − c_eps·ε̂)·c_out + σ_t·z`.
    fn reverse_coeffs(&self, t: usize) -> (f64, f64, f64) {
        let b = self.beta(t);
        let c_eps = b / libm::sqrt(1.0 - self.alpha_bar(t));
        let c_out = 1.0 / libm::sqrt(1.0 - b);
        let var = b * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t));
        (c_eps, c_out, libm::sqrt(var))
    }
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·noise`.
pub fn forward_diffuse(schedule: &NoiseSchedule, x0: &[f64], t: usize, noise: &[f64]) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    if x0.len() != noise.len() {
        return Err(Error::ShapeMismatch {
            op: "forward_diffuse",
            lhs: vec![x0.len()],
            rhs: vec![noise.len()],
        });
    }
    let ab = schedule.alpha_bar(t);
    let (a, b) = (libm::sqrt(ab), libm::sqrt(1.0 - ab));
    Ok(x0.iter().zip(noise).map(|(x, e)| a * x + b * e).collect())
}

/// Sinusoidal features of the integer step `t`.
pub fn time_features(t: usize) -> [f64; TIME_FEATURES] {
    let half = TIME_FEATURES / 2;
    let mut out = [0.0; TIME_FEATURES];
    for i in 0..half {
        let freq = libm::pow(100.0, -(i as f64) / (half - 1) as f64);
        out[2 * i] = libm::sin(t as f64 * freq);
        out[2 * i + 1] = libm::cos(t as f64 * freq);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub steps: usize,
    pub hidden: Vec<usize>,
    pub train_steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Std of the Gaussian jitter added to conditions during pre-training.
    pub jitter: f64,
    /// Fraction of the split held out for the reported denoising MSE.
    pub heldout_frac: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            hidden: vec![128, 128, 128],
            train_steps: 2500,
            batch: 256,
            lr: 2e-3,
            jitter: 0.1,
            heldout_frac: 0.1,
            seed: 0,
        }
    }
}

/// The frozen conditional generator.
#[derive(Debug)]
pub struct GeneratorModel {
    pub net: Mlp,
    pub schedule: NoiseSchedule,
    pub embeddings: EmbeddingTable,
    data_dim: usize,
    calls: AtomicUsize,
}

impl Clone for GeneratorModel {
    fn clone(&self) -> Self {
        Self {
            net: self.net.clone(),
            schedule: self.schedule.clone(),
            embeddings: self.embeddings.clone(),
            data_dim: self.data_dim,
            calls: AtomicUsize::new(0),
        }
    }
}

impl PartialEq for GeneratorModel {
    fn eq(&self, other: &Self) -> bool {
        self.net == other.net && self.schedule == other.schedule && self.embeddings == other.embeddings
    }
}

/// A sample whose final reverse step is on `tape`.
#[derive(Debug)]
pub struct TapedSample {
    pub tape: Tape,
    /// The condition leaf, shape `[1, d_s]`, differentiable.
    pub condition: Var,
    /// Generated points, shape `[k, d]`.
    pub x0: Var,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainReport {
    pub initial_heldout_mse: f64,
    pub heldout_mse: f64,
    pub final_train_loss: f64,
}

impl GeneratorModel {
    pub fn new(net: Mlp, schedule: NoiseSchedule, embeddings: EmbeddingTable) -> Result<Self> {
        let cond_dim = embeddings.dim();
        let data_dim = net.output_dim();
        if net.input_dim() != data_dim + TIME_FEATURES + cond_dim {
            return Err(Error::ShapeMismatch {
                op: "generator",
                lhs: vec![net.input_dim()],
                rhs: vec![data_dim + TIME_FEATURES + cond_dim],
            });
        }
        Ok(Self {
            net,
            schedule,
            embeddings,
            data_dim,
            calls: AtomicUsize::new(0),
        })
    }

    /// Untrained generator; the output layer starts at zero so the initial
    /// noise prediction is identically zero.
    pub fn init(data_dim: usize, embeddings: EmbeddingTable, cfg: &GeneratorConfig) -> Result<Self> {
        let mut dims = vec![data_dim + TIME_FEATURES + embeddings.dim()];
        dims.extend_from_slice(&cfg.hidden);
        dims.push(data_dim);
        let mut r = rng::rng(rng::derive(cfg.seed, stream::GEN_INIT, 0));
        let net = Mlp::new(&dims, Activation::Tanh, &mut r, true)?;
        Self::new(net, NoiseSchedule::scaled_linear(cfg.steps)?, embeddings)
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn cond_dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn steps(&self) -> usize {
        self.schedule.steps()
    }

    /// Number of sample chains run so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset_calls(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    fn net_input(&self, xt: &[f64], rows: usize, t: usize, conds: &[f64]) -> Tensor {
        let (d, ds) = (self.data_dim, self.cond_dim());
        let tf = time_features(t);
        let width = d + TIME_FEATURES + ds;
        let mut data = Vec::with_capacity(rows * width);
        for i in 0..rows {
            data.extend_from_slice(&xt[i * d..(i + 1) * d]);
            data.extend_from_slice(&tf);
            data.extend_from_slice(&conds[i * ds..(i + 1) * ds]);
        }
        Tensor::matrix(rows, width, data).expect("net input shape")
    }

    /// Predicted noise for a batch of `[n, d]` points at step `t` under `[n, d_s]` conditions.
    pub fn predict_noise(&self, xt: &Tensor, t: usize, conds: &Tensor) -> Result<Tensor> {
        let n = xt.rows();
        self.net.forward(&self.net_input(xt.data(), n, t, conds.data()))
    }

    fn check_conds(&self, conds: &Tensor, seeds: &[u64]) -> Result<()> {
        let (n, ds) = conds.dims2()?;
        if ds != self.cond_dim() || n != seeds.len() {
            return Err(Error::ShapeMismatch {
                op: "reverse_sample",
                lhs: conds.shape().to_vec(),
                rhs: vec![seeds.len(), self.cond_dim()],
            });
        }
        Ok(())
    }

    /// Ancestral sampling from `x_T` down to `x_stop` (`stop ≥ 0`). Row `i`
    /// draws all its noise from `seeds[i]`, so rows do not interact.
    fn denoise_until(&self, conds: &Tensor, seeds: &[u64], stop: usize) -> Result<Vec<f64>> {
        let (n, d) = (seeds.len(), self.data_dim);
        let mut rngs: Vec<rng::Rng> = seeds.iter().map(|&s| rng::rng(s)).collect();
        let mut x = Vec::with_capacity(n * d);
        for r in rngs.iter_mut() {
            x.extend(rng::normals(r, d));
        }
        for t in (stop + 1..=self.steps()).rev() {
            let eps = self.net.forward(&self.net_input(&x, n, t, conds.data()))?;
            let (c_eps, c_out, sigma) = self.schedule.reverse_coeffs(t);
            for (i, r) in rngs.iter_mut().enumerate() {
                for j in 0..d {
                    let k = i * d + j;
                    let mean = (x[k] - eps.data()[k] * c_eps) * c_out;
                    x[k] = if t > 1 { mean + sigma * rng::normal(r) } else { mean };
                }
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NanAtStep(t));
            }
        }
        Ok(x)
    }

    /// Independent samples, row `i` conditioned on `conds[i]` with noise from `seeds[i]`.
    pub fn sample_batch(&self, conds: &Tensor, seeds: &[u64]) -> Result<Tensor> {
        self.check_conds(conds, seeds)?;
        self.calls.fetch_add(seeds.len(), Ordering::Relaxed);
        let x = self.denoise_until(conds, seeds, 0)?;
        Tensor::matrix(seeds.len(), self.data_dim, x)
    }

    /// `k = seeds.len()` samples sharing condition `s`, with every step except
    /// the last run untaped and the last step `x_1 → x_0` recorded, so
    /// `∂x_0/∂s` is available through the returned tape.
    pub fn sample_taped(&self, s: &[f64], seeds: &[u64]) -> Result<TapedSample> {
        let k = seeds.len();
        let ds = self.cond_dim();
        if s.len() != ds || k == 0 {
            return Err(Error::ShapeMismatch {
                op: "sample_taped",
                lhs: vec![k, s.len()],
                rhs: vec![k.max(1), ds],
            });
        }
        let conds = Tensor::matrix(k, ds, s.repeat(k))?;
        self.calls.fetch_add(k, Ordering::Relaxed);
        let x1 = self.denoise_until(&conds, seeds, 1)?;

        let d = self.data_dim;
        let mut tape = Tape::new();
        let cond = tape.param(Tensor::matrix(1, ds, s.to_vec())?);
        let ones = tape.constant(Tensor::filled(&[k, 1], 1.0));
        let cond_rows = tape.matmul(ones, cond)?;
        let x1v = tape.constant(Tensor::matrix(k, d, x1)?);
        let tf: Vec<f64> = time_features(1).repeat(k);
        let tfv = tape.constant(Tensor::matrix(k, TIME_FEATURES, tf)?);
        let input = tape.concat(&[x1v, tfv, cond_rows])?;
        let params = self.net.bind(&mut tape, false);
        let eps = self.net.forward_taped(&mut tape, &params, input, None)?;
        let (c_eps, c_out, _) = self.schedule.reverse_coeffs(1);
        let scaled = tape.scale(eps, c_eps)?;
        let diff = tape.sub(x1v, scaled)?;
        let x0 = tape.scale(diff, c_out)?;
        if !tape.value(x0).all_finite() {
            return Err(Error::NanAtStep(1));
        }
        Ok(TapedSample {
            tape,
            condition: cond,
            x0,
        })
    }

    /// Generate one point conditioned on `s`. With `differentiable_last`, the
    /// final step is also returned on a tape; the point is identical either way.
    pub fn reverse_sample(&self, s: &[f64], seed: u64, differentiable_last: bool) -> Result<(Vec<f64>, Option<TapedSample>)> {
        if differentiable_last {
            let taped = self.sample_taped(s, &[seed])?;
            let x0 = taped.tape.value(taped.x0).data().to_vec();
            Ok((x0, Some(taped)))
        } else {
            let conds = Tensor::matrix(1, s.len(), s.to_vec())?;
            Ok((self.sample_batch(&conds, &[seed])?.into_data(), None))
        }
    }

    /// Full-chain differentiation: every reverse step is taped and all per-step
    /// noise is held fixed. Only practical for small `T`; used as the reference
    /// for the last-step gradient estimator.
    pub fn sample_fully_taped(&self, s: &[f64], seed: u64) -> Result<TapedSample> {
        let (d, ds) = (self.data_dim, self.cond_dim());
        let mut r = rng::rng(seed);
        let mut tape = Tape::new();
        let cond = tape.param(Tensor::matrix(1, ds, s.to_vec())?);
        let mut x = tape.constant(Tensor::matrix(1, d, rng::normals(&mut r, d))?);
        let params = self.net.bind(&mut tape, false);
        self.calls.fetch_add(1, Ordering::Relaxed);
        for t in (1..=self.steps()).rev() {
            let tfv = tape.constant(Tensor::matrix(1, TIME_FEATURES, time_features(t).to_vec())?);
            let input = tape.concat(&[x, tfv, cond])?;
            let eps = self.net.forward_taped(&mut tape, &params, input, None)?;
            let (c_eps, c_out, sigma) = self.schedule.reverse_coeffs(t);
            let scaled = tape.scale(eps, c_eps)?;
            let diff = tape.sub(x, scaled)?;
            x = tape.scale(diff, c_out)?;
            if t > 1 {
                let z: Vec<f64> = rng::normals(&mut r, d).into_iter().map(|v| v * sigma).collect();
                let zv = tape.constant(Tensor::matrix(1, d, z)?);
                x = tape.add(x, zv)?;
            }
        }
        Ok(TapedSample {
            tape,
            condition: cond,
            x0: x,
        })
    }

    /// Denoising MSE `‖ε − ε̂‖² / d` averaged over `points`, with per-point step,
    /// noise and template drawn from `seed` and no condition jitter.
    pub fn denoising_mse(&self, points: &Dataset, seed: u64) -> Result<f64> {
        if points.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let batch = self.draw_training_batch(points, &(0..points.len()).collect::<Vec<_>>(), 0.0, seed)?;
        let pred = self.net.forward(&batch.input)?;
        let se: f64 = pred
            .data()
            .iter()
            .zip(batch.noise.data())
            .map(|(p, e)| (p - e) * (p - e))
            .sum();
        Ok(se / pred.len() as f64)
    }

    fn draw_training_batch(&self, points: &Dataset, idx: &[usize], jitter: f64, seed: u64) -> Result<TrainingBatch> {
        let (d, ds) = (self.data_dim, self.cond_dim());
        let mut r = rng::rng(seed);
        let n = idx.len();
        let mut xt = Vec::with_capacity(n * d);
        let mut noise = Vec::with_capacity(n * d);
        let mut conds = Vec::with_capacity(n * ds);
        let mut steps = Vec::with_capacity(n);
        for &i in idx {
            let t = 1 + rng::below(&mut r, self.steps());
            let tau = rng::below(&mut r, self.embeddings.templates());
            let e = rng::normals(&mut r, d);
            xt.extend(forward_diffuse(&self.schedule, points.point(i), t, &e)?);
            noise.extend(e);
            let anchor = self.embeddings.anchor(points.ys[i], tau)?;
            conds.extend(anchor.iter().map(|a| a + jitter * rng::normal(&mut r)));
            steps.push(t);
        }
        let width = d + TIME_FEATURES + ds;
        let mut input = Vec::with_capacity(n * width);
        for (row, &t) in steps.iter().enumerate() {
            input.extend_from_slice(&xt[row * d..(row + 1) * d]);
            input.extend_from_slice(&time_features(t));
            input.extend_from_slice(&conds[row * ds..(row + 1) * ds]);
        }
        Ok(TrainingBatch {
            input: Tensor::matrix(n, width, input)?,
            noise: Tensor::matrix(n, d, noise)?,
        })
    }

    pub fn params(&self) -> &[Param] {
        &self.net.params
    }
}

struct TrainingBatch {
    input: Tensor,
    noise: Tensor,
}

/// Fit the noise predictor on `split` (labels select the class embedding, a
/// template is drawn uniformly per example, conditions are jittered) by Adam
/// on the noise-prediction MSE. The trailing `heldout_frac` of the split is
/// excluded from training and used for the reported MSE.
pub fn pretrain_generator(
    split: &Dataset,
    embeddings: EmbeddingTable,
    cfg: &GeneratorConfig,
) -> Result<(GeneratorModel, PretrainReport)> {
    if split.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut model = GeneratorModel::init(split.dim(), embeddings, cfg)?;
    let n_held = ((split.len() as f64) * cfg.heldout_frac) as usize;
    let n_train = split.len() - n_held;
    if n_train == 0 {
        return Err(crate::error::invalid("held-out fraction leaves no training points"));
    }
    let heldout = split.subset(&(n_train..split.len()).collect::<Vec<_>>());
    let held_seed = rng::derive(cfg.seed, stream::HELDOUT, 0);
    let initial_heldout_mse = if heldout.is_empty() {
        f64::NAN
    } else {
        model.denoising_mse(&heldout, held_seed)?
    };

    let mut opt = Optimizer::new(Rule::adam(cfg.lr));
    let mut final_train_loss = f64::NAN;
    for step in 0..cfg.train_steps {
        // cosine decay to 1% of the base rate
        let progress = step as f64 / cfg.train_steps as f64;
        let lr = cfg.lr * (0.01 + 0.99 * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress)));
        opt.set_lr(lr);
        let mut r = rng::rng(rng::derive(cfg.seed, stream::GEN_TRAIN, step as u64));
        let idx: Vec<usize> = (0..cfg.batch).map(|_| rng::below(&mut r, n_train)).collect();
        let batch = model.draw_training_batch(split, &idx, cfg.jitter, rng::derive(cfg.seed, stream::GEN_TRAIN, (step as u64) << 32 | 1))?;
        let mut tape = Tape::new();
        let params = model.net.bind(&mut tape, true);
        let x = tape.constant(batch.input);
        let target = tape.constant(batch.noise);
        let pred = model.net.forward_taped(&mut tape, &params, x, None)?;
        let diff = tape.sub(pred, target)?;
        let sq = tape.mul(diff, diff)?;
        let loss = tape.mean(sq)?;
        final_train_loss = tape.value(loss).item();
        if !final_train_loss.is_finite() {
            return Err(Error::Diverged {
                step,
                config: format!("{cfg:?}"),
            });
        }
        let grads = tape.backward(loss)?;
        let gs: Vec<Tensor> = params
            .iter()
            .zip(&model.net.params)
            .map(|(&v, p)| grads.get_or_zeros(v, p.value.shape()))
            .collect();
        opt.step(&mut model.net.params, &gs)?;
    }
    let heldout_mse = if heldout.is_empty() {
        f64::NAN
    } else {
        model.denoising_mse(&heldout, held_seed)?
    };
    model.reset_calls();
    Ok((
        model,
        PretrainReport {
            initial_heldout_mse,
            heldout_mse,
            final_train_loss,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingSpec;

    #[test]
    fn default_schedule_invariants() {
        let s = NoiseSchedule::scaled_linear(50).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!(s.alpha_bar(50) < 0.05);
        let mut prod = 1.0;
        for t in 1..=50 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            prod *= 1.0 - s.beta(t);
            assert!((s.alpha_bar(t) - prod).abs() < 1e-12);
        }
        assert!((s.beta(1) - 0.002).abs() < 1e-15);
        assert!((s.beta(50) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn bad_betas_rejected() {
        assert!(NoiseSchedule::from_betas(vec![0.1, 1.0]).is_err());
        assert!(NoiseSchedule::from_betas(vec![]).is_err());
        assert!(NoiseSchedule::scaled_linear(3).is_ok());
    }

    #[test]
    fn forward_diffuse_endpoints() {
        let s = NoiseSchedule::scaled_linear(50).unwrap();
        let x0 = [0.3, -1.2];
        let e = [0.9, 0.4];
        assert_eq!(forward_diffuse(&s, &x0, 0, &e).unwrap(), x0.to_vec());
        assert!(forward_diffuse(&s, &x0, 51, &e).is_err());
        // ᾱ → 0: x_t → noise
        let z = NoiseSchedule::from_betas(vec![0.5, 1.0 - 1e-15]).unwrap();
        let xt = forward_diffuse(&z, &x0, 2, &e).unwrap();
        for (a, b) in xt.iter().zip(&e) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    fn tiny_generator() -> GeneratorModel {
        let table = EmbeddingTable::generate(&EmbeddingSpec::new(3), 1).unwrap();
        let cfg = GeneratorConfig {
            steps: 10,
            hidden: vec![16, 16],
            ..GeneratorConfig::default()
        };
        let mut g = GeneratorModel::init(2, table, &cfg).unwrap();
        let mut r = rng::rng(5);
        g.net = Mlp::new(g.net.dims(), Activation::Tanh, &mut r, false).unwrap();
        g
    }

    #[test]
    fn sampling_is_deterministic_and_taping_is_transparent() {
        let g = tiny_generator();
        let s = g.embeddings.anchor(1, 0).unwrap();
        let (a, _) = g.reverse_sample(&s, 42, false).unwrap();
        let (b, _) = g.reverse_sample(&s, 42, false).unwrap();
        let (c, taped) = g.reverse_sample(&s, 42, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert!(taped.is_some());
        let full = g.sample_fully_taped(&s, 42).unwrap();
        assert_eq!(full.tape.value(full.x0).data(), &a[..]);
    }

    #[test]
    fn batch_rows_are_independent() {
        let g = tiny_generator();
        let s0 = g.embeddings.anchor(0, 0).unwrap();
        let s2 = g.embeddings.anchor(2, 1).unwrap();
        let conds = Tensor::matrix(2, s0.len(), [s0.clone(), s2.clone()].concat()).unwrap();
        let batch = g.sample_batch(&conds, &[7, 8]).unwrap();
        assert_eq!(batch.row(0), &g.reverse_sample(&s0, 7, false).unwrap().0[..]);
        assert_eq!(batch.row(1), &g.reverse_sample(&s2, 8, false).unwrap().0[..]);
    }

    #[test]
    fn untrained_generator_predicts_zero_noise() {
        let table = EmbeddingTable::generate(&EmbeddingSpec::new(3), 1).unwrap();
        let g = GeneratorModel::init(2, table, &GeneratorConfig::default()).unwrap();
        let xt = Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap();
        let c = Tensor::matrix(1, 8, vec![0.1; 8]).unwrap();
        assert_eq!(g.predict_noise(&xt, 3, &c).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn call_counter_counts_chains() {
        let g = tiny_generator();
        let s = g.embeddings.anchor(0, 0).unwrap();
        g.sample_taped(&s, &[1, 2, 3]).unwrap();
        assert_eq!(g.calls(), 3);
    }
}
