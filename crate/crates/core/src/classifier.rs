//! The task model: an MLP classifier trained from scratch by Adam on
//! cross-entropy, with deterministic, MC-dropout and feature-extraction views.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::nn::{dropout_masks, Activation, Mlp};
use crate::optim::{Optimizer, Param, Rule};
use crate::rng::{self, stream};
use crate::tensor::{softmax_rows, Tensor};
use crate::{Error, Result};

/// Parsed architecture id of the form `mlp-64x64`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub id: String,
    pub hidden: Vec<usize>,
}

impl Architecture {
    pub fn parse(id: &str) -> Result<Self> {
        let widths = id
            .strip_prefix("mlp-")
            .ok_or_else(|| crate::error::invalid(format!("unknown architecture `{id}`")))?;
        let hidden = widths
            .split('x')
            .map(|w| w.parse::<usize>().ok().filter(|&w| w > 0))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| crate::error::invalid(format!("bad layer widths in `{id}`")))?;
        Ok(Self {
            id: id.to_string(),
            hidden,
        })
    }

    pub fn last_hidden(&self) -> usize {
        *self.hidden.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierSpec {
    pub arch: Architecture,
    pub input_dim: usize,
    pub classes: usize,
    pub dropout_rate: f64,
}

impl ClassifierSpec {
    pub fn new(arch: &str, input_dim: usize, classes: usize) -> Result<Self> {
        Ok(Self {
            arch: Architecture::parse(arch)?,
            input_dim,
            classes,
            dropout_rate: 0.1,
        })
    }

    fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend_from_slice(&self.arch.hidden);
        dims.push(self.classes);
        dims
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch: 64,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub spec: ClassifierSpec,
    pub net: Mlp,
}

fn check_labels(ys: &[usize], classes: usize) -> Result<()> {
    if let Some(&y) = ys.iter().find(|&&y| y >= classes) {
        return Err(Error::OutOfRange {
            what: "label",
            value: y,
            limit: classes,
        });
    }
    Ok(())
}

fn rows_of(xs: &Tensor, idx: &[usize]) -> Tensor {
    let d = xs.shape()[1];
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(xs.row(i));
    }
    Tensor::matrix(idx.len(), d, data).expect("batch shape")
}

impl ClassifierModel {
    /// Fresh, seed-deterministic initialization.
    pub fn init(spec: &ClassifierSpec, seed: u64) -> Result<Self> {
        let mut r = rng::rng(rng::derive(seed, stream::CLF_INIT, 0));
        Ok(Self {
            spec: spec.clone(),
            net: Mlp::new(&spec.dims(), Activation::Tanh, &mut r, false)?,
        })
    }

    pub fn from_params(spec: &ClassifierSpec, params: Vec<Param>) -> Result<Self> {
        Ok(Self {
            spec: spec.clone(),
            net: Mlp::from_params(&spec.dims(), Activation::Tanh, params)?,
        })
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    pub fn architecture_id(&self) -> &str {
        &self.spec.arch.id
    }

    pub fn logits(&self, xs: &Tensor) -> Result<Tensor> {
        self.net.forward(xs)
    }

    /// Softmax outputs with dropout disabled.
    pub fn predict_proba(&self, xs: &Tensor) -> Result<Tensor> {
        softmax_rows(&self.logits(xs)?)
    }

    pub fn predict(&self, xs: &Tensor) -> Result<Vec<usize>> {
        let p = self.predict_proba(xs)?;
        Ok((0..p.rows()).map(|i| argmax(p.row(i))).collect())
    }

    pub fn accuracy(&self, xs: &Tensor, ys: &[usize]) -> Result<f64> {
        if ys.is_empty() {
            return Ok(0.0);
        }
        let pred = self.predict(xs)?;
        let hits = pred.iter().zip(ys).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / ys.len() as f64)
    }

    /// Dropout mask set for MC pass `pass` on a batch of `rows`.
    pub fn mc_masks(&self, rows: usize, seed: u64, pass: usize) -> Vec<Vec<f64>> {
        let mut r = rng::rng(rng::derive(seed, stream::DROPOUT, pass as u64));
        dropout_masks(&self.net, rows, self.spec.dropout_rate, &mut r)
    }

    /// `passes` softmax outputs with dropout active, one seeded mask set per pass.
    pub fn mc_predict(&self, xs: &Tensor, passes: usize, seed: u64) -> Result<Vec<Tensor>> {
        if !(self.spec.dropout_rate > 0.0) {
            return Err(Error::DropoutRequired);
        }
        if passes < 2 {
            return Err(crate::error::invalid("MC prediction needs at least 2 passes"));
        }
        (0..passes)
            .map(|pass| {
                let masks = self.mc_masks(xs.rows(), seed, pass);
                softmax_rows(&self.net.forward_full(xs, Some(&masks))?.1)
            })
            .collect()
    }

    /// Penultimate-layer activations (dropout disabled).
    pub fn features(&self, xs: &Tensor) -> Result<Tensor> {
        Ok(self.net.forward_full(xs, None)?.0)
    }

    /// Logits of `x` recorded on `tape` with frozen weights.
    pub fn logits_taped(&self, tape: &mut Tape, x: Var, masks: Option<&[Vec<f64>]>) -> Result<Var> {
        let params = self.net.bind(tape, false);
        self.net.forward_taped(tape, &params, x, masks)
    }

    fn mean_loss(&self, xs: &Tensor, ys: &[usize]) -> Result<f64> {
        let logits = self.logits(xs)?;
        let mut total = 0.0;
        for (i, &y) in ys.iter().enumerate() {
            let mut row = logits.row(i).to_vec();
            crate::tensor::log_softmax_in_place(&mut row);
            total -= row[y];
        }
        Ok(total / ys.len() as f64)
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn one_hot(ys: &[usize], classes: usize) -> Tensor {
    let mut data = vec![0.0; ys.len() * classes];
    for (i, &y) in ys.iter().enumerate() {
        data[i * classes + y] = 1.0;
    }
    Tensor::matrix(ys.len(), classes, data).expect("one-hot shape")
}

/// Retrain from a fresh initialization on `(xs, ys)`. Minibatches are
/// reshuffled every epoch; dropout masks are drawn per step. `(cfg.seed, xs,
/// ys)` fully determine the result.
pub fn train(spec: &ClassifierSpec, xs: &Tensor, ys: &[usize], cfg: &TrainConfig) -> Result<(ClassifierModel, TrainReport)> {
    if ys.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (n, d) = xs.dims2()?;
    if n != ys.len() || d != spec.input_dim {
        return Err(Error::ShapeMismatch {
            op: "classifier_train",
            lhs: xs.shape().to_vec(),
            rhs: vec![ys.len(), spec.input_dim],
        });
    }
    check_labels(ys, spec.classes)?;
    if cfg.batch == 0 {
        return Err(crate::error::invalid("batch size must be positive"));
    }

    let mut model = ClassifierModel::init(spec, cfg.seed)?;
    let initial_loss = model.mean_loss(xs, ys)?;
    let mut opt = Optimizer::new(Rule::adam(cfg.lr));
    let mut mask_rng = rng::rng(rng::derive(cfg.seed, stream::DROPOUT, u64::MAX));
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut shuffle = rng::rng(rng::derive(cfg.seed, stream::CLF_TRAIN, epoch as u64));
        let order = rng::permutation(&mut shuffle, n);
        for chunk in order.chunks(cfg.batch) {
            let bx = rows_of(xs, chunk);
            let by: Vec<usize> = chunk.iter().map(|&i| ys[i]).collect();
            let mut tape = Tape::new();
            let params = model.net.bind(&mut tape, true);
            let x = tape.constant(bx);
            let masks = (spec.dropout_rate > 0.0)
                .then(|| dropout_masks(&model.net, chunk.len(), spec.dropout_rate, &mut mask_rng));
            let logits = model.net.forward_taped(&mut tape, &params, x, masks.as_deref())?;
            let lp = tape.log_softmax(logits)?;
            let oh = tape.constant(one_hot(&by, spec.classes));
            let picked = tape.mul(lp, oh)?;
            let total = tape.sum(picked)?;
            let loss = tape.scale(total, -1.0 / chunk.len() as f64)?;
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Diverged {
                    step,
                    config: format!("{cfg:?} arch={}", spec.arch.id),
                });
            }
            let grads = tape.backward(loss)?;
            let gs: Vec<Tensor> = params
                .iter()
                .zip(&model.net.params)
                .map(|(&v, p)| grads.get_or_zeros(v, p.value.shape()))
                .collect();
            opt.step(&mut model.net.params, &gs)?;
            step += 1;
        }
    }
    let final_loss = model.mean_loss(xs, ys)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            step,
            config: format!("{cfg:?} arch={}", spec.arch.id),
        });
    }
    Ok((
        model,
        TrainReport {
            initial_loss,
            final_loss,
            steps: opt.steps(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n: usize, seed: u64) -> (Tensor, Vec<usize>) {
        let mut r = rng::rng(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let y = i % 2;
            let cx = if y == 0 { -1.5 } else { 1.5 };
            xs.push(cx + 0.4 * rng::normal(&mut r));
            xs.push(0.4 * rng::normal(&mut r));
            ys.push(y);
        }
        (Tensor::matrix(n, 2, xs).unwrap(), ys)
    }

    #[test]
    fn parses_architectures() {
        assert_eq!(Architecture::parse("mlp-64x64").unwrap().hidden, vec![64, 64]);
        assert_eq!(Architecture::parse("mlp-128x128x128").unwrap().last_hidden(), 128);
        assert!(Architecture::parse("resnet18").is_err());
        assert!(Architecture::parse("mlp-64x0").is_err());
    }

    #[test]
    fn empty_dataset_rejected() {
        let spec = ClassifierSpec::new("mlp-8", 2, 2).unwrap();
        let xs = Tensor::zeros(&[0, 2]);
        assert_eq!(train(&spec, &xs, &[], &TrainConfig::default()).unwrap_err(), Error::EmptyDataset);
    }

    #[test]
    fn single_class_dataset_is_fit() {
        let spec = ClassifierSpec::new("mlp-16", 2, 3).unwrap();
        let (xs, _) = blobs(20, 1);
        let ys = vec![2; 20];
        let (m, rep) = train(&spec, &xs, &ys, &TrainConfig::default()).unwrap();
        assert_eq!(m.accuracy(&xs, &ys).unwrap(), 1.0);
        assert!(rep.final_loss < rep.initial_loss);
    }

    #[test]
    fn separable_blobs_reach_high_training_accuracy() {
        let spec = ClassifierSpec::new("mlp-64x64", 2, 2).unwrap();
        let (xs, ys) = blobs(200, 2);
        let (m, rep) = train(&spec, &xs, &ys, &TrainConfig::default()).unwrap();
        assert!(m.accuracy(&xs, &ys).unwrap() >= 0.99);
        assert!(rep.final_loss < rep.initial_loss);
    }

    #[test]
    fn training_is_deterministic() {
        let spec = ClassifierSpec::new("mlp-16x16", 2, 2).unwrap();
        let (xs, ys) = blobs(50, 3);
        let cfg = TrainConfig { epochs: 5, seed: 9, ..TrainConfig::default() };
        let a = train(&spec, &xs, &ys, &cfg).unwrap().0;
        let b = train(&spec, &xs, &ys, &cfg).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn probabilities_are_distributions() {
        let spec = ClassifierSpec::new("mlp-64x64", 2, 5).unwrap();
        let m = ClassifierModel::init(&spec, 4).unwrap();
        let (xs, _) = blobs(30, 4);
        let p = m.predict_proba(&xs).unwrap();
        for i in 0..30 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.row(i).iter().all(|&v| v >= 0.0));
        }
        assert_eq!(m.predict(&xs).unwrap(), m.predict(&xs).unwrap());
    }

    #[test]
    fn symmetric_model_gives_equal_top_two() {
        // logits = [x0, -x0, -10]: at x0 = 0 the first two classes tie
        let spec = ClassifierSpec {
            dropout_rate: 0.0,
            ..ClassifierSpec::new("mlp-1", 2, 3).unwrap()
        };
        let params = vec![
            Param::new("layer0.weight", Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap()),
            Param::new("layer0.bias", Tensor::zeros(&[1])),
            Param::new("layer1.weight", Tensor::matrix(1, 3, vec![1.0, -1.0, 0.0]).unwrap()),
            Param::new("layer1.bias", Tensor::vector(vec![0.0, 0.0, -10.0])),
        ];
        let m = ClassifierModel::from_params(&spec, params).unwrap();
        let p = m.predict_proba(&Tensor::matrix(1, 2, vec![0.0, 0.7]).unwrap()).unwrap();
        assert!((p.data()[0] - p.data()[1]).abs() < 1e-15);
        assert!(p.data()[0] > 0.49);
    }

    #[test]
    fn mc_predict_contracts() {
        let spec = ClassifierSpec::new("mlp-32x32", 2, 3).unwrap();
        let m = ClassifierModel::init(&spec, 5).unwrap();
        let (xs, _) = blobs(4, 5);
        let a = m.mc_predict(&xs, 2, 11).unwrap();
        assert_eq!(a, m.mc_predict(&xs, 2, 11).unwrap());
        let var: f64 = (0..xs.len() / 2 * 3)
            .map(|i| (a[0].data()[i] - a[1].data()[i]).abs())
            .sum();
        assert!(var > 0.0);

        let none = ClassifierModel::init(&ClassifierSpec { dropout_rate: 0.0, ..spec.clone() }, 5).unwrap();
        assert_eq!(none.mc_predict(&xs, 2, 11).unwrap_err(), Error::DropoutRequired);
        assert!(m.mc_predict(&xs, 1, 11).is_err());

        // rate → 0⁺: every pass collapses onto the deterministic prediction
        let tiny = ClassifierModel { spec: ClassifierSpec { dropout_rate: 1e-12, ..spec }, net: m.net.clone() };
        let det = tiny.predict_proba(&xs).unwrap();
        for pass in tiny.mc_predict(&xs, 3, 1).unwrap() {
            for (a, b) in pass.data().iter().zip(det.data()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn features_have_last_hidden_width() {
        let spec = ClassifierSpec::new("mlp-64x48", 2, 3).unwrap();
        let m = ClassifierModel::init(&spec, 6).unwrap();
        let (xs, _) = blobs(7, 6);
        let f = m.features(&xs).unwrap();
        assert_eq!(f.shape(), &[7, 48]);
        assert_eq!(f, m.features(&xs).unwrap());
    }
}
