//! Sign-PGD optimization of generator conditions: ascend the expected
//! acquisition of generated samples while staying inside an ε-ball around the
//! anchor.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::acquisition::{score_taped, AcquisitionFn, AcquisitionKind};
use crate::classifier::ClassifierModel;
use crate::embedding::{project_to_ball, Condition};
use crate::generator::GeneratorModel;
use crate::rng::{self, stream};
use crate::tensor::sign;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub epsilon: f64,
    pub alpha: f64,
    /// Update steps `n`.
    pub steps: usize,
    /// Samples per gradient estimate.
    pub k: usize,
    pub sigma: AcquisitionFn,
    /// Multiply the last-step gradient by `T`. Has no effect on the sign update.
    pub step_factor: bool,
}

impl OptimizerConfig {
    pub const DEFAULT_ALPHA_RATIO: f64 = 0.2;

    /// `α = ε/5`, `n = 10`, `k = 6`.
    pub fn new(epsilon: f64, sigma: AcquisitionFn) -> Self {
        Self {
            epsilon,
            alpha: epsilon * Self::DEFAULT_ALPHA_RATIO,
            steps: 10,
            k: 6,
            sigma,
            step_factor: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(crate::error::invalid(format!("epsilon must be finite and ≥ 0, got {}", self.epsilon)));
        }
        if self.epsilon > 0.0 && !(self.alpha > 0.0) {
            return Err(crate::error::invalid(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.steps == 0 || self.k == 0 {
            return Err(crate::error::invalid("optimizer needs steps ≥ 1 and k ≥ 1"));
        }
        if matches!(self.sigma.kind, AcquisitionKind::KMeans | AcquisitionKind::CoreSet) {
            return Err(crate::error::invalid(format!(
                "`{}` is selection-only and cannot drive condition optimization",
                self.sigma.kind.name()
            )));
        }
        Ok(())
    }
}

/// Seed of the `i`-th sample of a gradient estimate drawn with `seed`.
pub fn sample_seed(seed: u64, i: usize) -> u64 {
    rng::derive(seed, stream::OPT, i as u64)
}

/// Mean over `k` samples of `T · ∂σ(f(x₀))/∂s`, each differentiated through
/// the final reverse step only.
pub fn estimate_grad(
    s: &[f64],
    gen: &GeneratorModel,
    clf: &ClassifierModel,
    sigma: &AcquisitionFn,
    k: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    estimate_grad_scaled(s, gen, clf, sigma, k, seed, true)
}

pub(crate) fn estimate_grad_scaled(
    s: &[f64],
    gen: &GeneratorModel,
    clf: &ClassifierModel,
    sigma: &AcquisitionFn,
    k: usize,
    seed: u64,
    step_factor: bool,
) -> Result<Vec<f64>> {
    if !sigma.kind.is_score_based() {
        return Err(crate::error::invalid(format!("`{}` has no gradient", sigma.kind.name())));
    }
    if k == 0 {
        return Err(crate::error::invalid("gradient estimate needs k ≥ 1"));
    }
    let seeds: Vec<u64> = (0..k).map(|i| sample_seed(seed, i)).collect();
    let mut sample = gen.sample_taped(s, &seeds)?;
    let total = score_taped(sigma, clf, &mut sample.tape, sample.x0)?;
    let grads = sample.tape.backward(total)?;
    let g = grads.get_or_zeros(sample.condition, &[1, s.len()]);
    let factor = if step_factor { gen.steps() as f64 } else { 1.0 };
    let out: Vec<f64> = g.data().iter().map(|v| v * factor / k as f64).collect();
    if out.iter().any(|v| v.is_nan()) {
        return Err(Error::NanGradient("condition".into()));
    }
    Ok(out)
}

/// Run `n` projected sign-gradient ascent steps from the anchor of `s_star`.
/// ε = 0 and a random σ both return the anchor without touching the generator.
pub fn text_opt(
    s_star: &Condition,
    cfg: &OptimizerConfig,
    gen: &GeneratorModel,
    clf: &ClassifierModel,
    seed: u64,
) -> Result<Condition> {
    let mut trace = text_opt_trace(s_star, cfg, gen, clf, seed)?;
    Ok(s_star.with_vector(trace.pop().expect("trace starts at the anchor")))
}

/// Linear ramp from 0 at cycle 1 to `eps_max` at cycle `n`.
pub fn epsilon_schedule(cycle: usize, n: usize, eps_max: f64) -> Result<f64> {
    if cycle == 0 || cycle > n {
        return Err(Error::OutOfRange {
            what: "cycle",
            value: cycle,
            limit: n,
        });
    }
    Ok(eps_max * (cycle - 1) as f64 / (n.max(2) - 1) as f64)
}

/// Per-step trace of a [`text_opt`] run; the distances let callers check the
/// ball invariant after every inner step.
pub fn text_opt_trace(
    s_star: &Condition,
    cfg: &OptimizerConfig,
    gen: &GeneratorModel,
    clf: &ClassifierModel,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let anchor = &s_star.anchor;
    let mut trace = vec![anchor.clone()];
    if cfg.epsilon == 0.0 || cfg.sigma.kind == AcquisitionKind::Random {
        return Ok(trace);
    }
    let mut s = anchor.clone();
    for step in 0..cfg.steps {
        let step_seed = rng::derive(seed, stream::OPT, 1_000_000 + step as u64);
        let g = estimate_grad_scaled(&s, gen, clf, &cfg.sigma, cfg.k, step_seed, cfg.step_factor)?;
        let moved: Vec<f64> = s.iter().zip(&g).map(|(v, gv)| v + cfg.alpha * sign(*gv)).collect();
        s = project_to_ball(&moved, anchor, cfg.epsilon)?;
        trace.push(s.clone());
    }
    Ok(trace)
}
