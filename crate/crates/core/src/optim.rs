use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result, Tensor};

/// A named trainable array.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rule {
    Sgd { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Rule {
    pub fn sgd(lr: f64) -> Self {
        Rule::Sgd { lr, momentum: 0.0 }
    }

    pub fn adam(lr: f64) -> Self {
        Rule::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state (momentum buffers or Adam moments) for a fixed parameter list.
#[derive(Debug, Clone)]
pub struct Optimizer {
    rule: Rule,
    steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(rule: Rule) -> Self {
        Self {
            rule,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn set_lr(&mut self, new_lr: f64) {
        match &mut self.rule {
            Rule::Sgd { lr, .. } | Rule::Adam { lr, .. } => *lr = new_lr,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [Param], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::ShapeMismatch {
                op: "optimizer_step",
                lhs: vec![params.len()],
                rhs: vec![grads.len()],
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.value.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "optimizer_step",
                    lhs: p.value.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if g.data().iter().any(|v| v.is_nan()) {
                return Err(Error::NanGradient(p.name.clone()));
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            if matches!(self.rule, Rule::Adam { .. }) {
                self.second = self.first.clone();
            }
        }
        self.steps += 1;
        match self.rule {
            Rule::Sgd { lr, momentum } => {
                for ((p, g), buf) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    for ((w, &gv), b) in p.value.data_mut().iter_mut().zip(g.data()).zip(buf.iter_mut()) {
                        if momentum == 0.0 {
                            *w -= lr * gv;
                        } else {
                            *b = momentum * *b + gv;
                            *w -= lr * *b;
                        }
                    }
                }
            }
            Rule::Adam { lr, beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - libm::pow(beta1, t as f64);
                let c2 = 1.0 - libm::pow(beta2, t as f64);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for (j, (w, &gv)) in p.value.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * gv;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * gv * gv;
                        let mh = m[j] / c1;
                        let vh = v[j] / c2;
                        *w -= lr * mh / (libm::sqrt(vh) + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// One update of `params` with fresh state; convenience for single steps.
pub fn optimizer_step(params: &mut [Param], grads: &[Tensor], rule: Rule) -> Result<()> {
    Optimizer::new(rule).step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: f64) -> Vec<Param> {
        vec![Param::new("w", Tensor::vector(vec![v]))]
    }

    #[test]
    fn sgd_zero_grad_is_noop() {
        let mut ps = p(1.5);
        optimizer_step(&mut ps, &[Tensor::vector(vec![0.0])], Rule::sgd(0.1)).unwrap();
        assert_eq!(ps[0].value.data(), &[1.5]);
    }

    #[test]
    fn sgd_plain_step() {
        let mut ps = p(1.0);
        optimizer_step(&mut ps, &[Tensor::vector(vec![2.0])], Rule::sgd(0.1)).unwrap();
        assert!((ps[0].value.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut ps = p(0.0);
        let mut opt = Optimizer::new(Rule::Sgd { lr: 1.0, momentum: 0.5 });
        let g = [Tensor::vector(vec![1.0])];
        opt.step(&mut ps, &g).unwrap();
        opt.step(&mut ps, &g).unwrap();
        // buffers: 1, then 1.5
        assert_eq!(ps[0].value.data(), &[-2.5]);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        for g in [3.7, -0.02, 1e4] {
            let mut ps = p(1.0);
            optimizer_step(&mut ps, &[Tensor::vector(vec![g])], Rule::adam(0.01)).unwrap();
            // m̂ = g, v̂ = g², step = lr·g/(|g| + eps)
            let expect = 1.0 - 0.01 * g / (g.abs() + 1e-8);
            assert!((ps[0].value.data()[0] - expect).abs() < 1e-15);
            assert!((ps[0].value.data()[0] - (1.0 - 0.01 * g.signum())).abs() < 1e-8);
        }
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut ps = p(1.0);
        let err = optimizer_step(&mut ps, &[Tensor::vector(vec![f64::NAN])], Rule::sgd(0.1)).unwrap_err();
        assert_eq!(err, Error::NanGradient("w".into()));
    }
}
