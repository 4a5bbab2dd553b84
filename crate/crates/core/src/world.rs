//! Synthetic ground truth: an isotropic Gaussian mixture with uniform class
//! priors, split into a generator pre-training set, the unlabeled AL pool and
//! a test set, plus the Bayes-optimal posterior-argmax oracle.
//!
//! The oracle plays two roles: it is the annotator that labels pool points
//! moved into the labeled set, and it is the judge that audits pseudo-labels
//! of generated samples.

use alloc::format;
use alloc::vec::Vec;

use crate::embedding::{EmbeddingSpec, EmbeddingTable};
use crate::rng::{self, stream};
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Means at angles `2πc/C` on a circle in the first two coordinates.
    Ring,
    /// Means on a square lattice in the first two coordinates.
    Grid,
}

impl Layout {
    pub fn name(self) -> &'static str {
        match self {
            Layout::Ring => "ring",
            Layout::Grid => "grid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ring" => Ok(Layout::Ring),
            "grid" => Ok(Layout::Grid),
            _ => Err(crate::error::invalid(format!("unknown layout `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub classes: usize,
    pub dim: usize,
    pub layout: Layout,
    /// Isotropic per-class standard deviation in raw coordinates.
    pub class_std: f64,
    /// Scale of the mean layout: ring radius, or lattice pitch.
    pub spacing: f64,
    pub pretrain_n: usize,
    pub pool_n: usize,
    pub test_n: usize,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 2,
            layout: Layout::Ring,
            class_std: 0.155,
            spacing: 1.0,
            pretrain_n: 20_000,
            pool_n: 4_000,
            test_n: 2_000,
            seed: 0,
        }
    }
}

impl WorldSpec {
    /// Many-class stock world: 100 classes on a 10×10 lattice in 8 dims.
    pub fn hard100() -> Self {
        Self {
            classes: 100,
            dim: 8,
            layout: Layout::Grid,
            class_std: 0.2,
            spacing: 1.0,
            pretrain_n: 40_000,
            pool_n: 8_000,
            test_n: 4_000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(crate::error::invalid(format!(
                "world needs at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.dim < 2 {
            return Err(crate::error::invalid("world dimension must be at least 2"));
        }
        if !(self.class_std > 0.0) || !(self.spacing > 0.0) {
            return Err(crate::error::invalid("class_std and spacing must be positive"));
        }
        if self.pretrain_n < 2 {
            return Err(crate::error::invalid("pretrain split needs at least 2 points"));
        }
        Ok(())
    }

    fn raw_means(&self) -> Vec<f64> {
        let (c, d) = (self.classes, self.dim);
        let mut means = alloc::vec![0.0; c * d];
        match self.layout {
            Layout::Ring => {
                for k in 0..c {
                    let a = 2.0 * core::f64::consts::PI * k as f64 / c as f64;
                    means[k * d] = self.spacing * libm::cos(a);
                    means[k * d + 1] = self.spacing * libm::sin(a);
                }
            }
            Layout::Grid => {
                let side = libm::ceil(libm::sqrt(c as f64)) as usize;
                for k in 0..c {
                    means[k * d] = self.spacing * (k % side) as f64;
                    means[k * d + 1] = self.spacing * (k / side) as f64;
                }
            }
        }
        means
    }
}

/// Points with their true mixture component.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub xs: Tensor,
    pub ys: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs.shape().get(1).copied().unwrap_or(0)
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.xs.row(i)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let d = self.dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(self.point(i));
        }
        Dataset {
            xs: Tensor::matrix(idx.len(), d, data).expect("subset shape"),
            ys: idx.iter().map(|&i| self.ys[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub spec: WorldSpec,
    /// Class means in normalized coordinates, `[C, d]`.
    pub means: Tensor,
    /// Per-coordinate class std in normalized coordinates (shared by all classes).
    pub stds: Vec<f64>,
    /// Raw-coordinate shift and scale used for z-scoring.
    pub norm_mean: Vec<f64>,
    pub norm_scale: Vec<f64>,
    pub pretrain: Dataset,
    pub pool: Dataset,
    pub test: Dataset,
    pub embeddings: EmbeddingTable,
}

fn draw(spec: &WorldSpec, means: &[f64], n: usize, split: u64) -> (Vec<f64>, Vec<usize>) {
    let mut r = rng::rng(rng::derive(spec.seed, stream::WORLD, split));
    let d = spec.dim;
    let mut xs = Vec::with_capacity(n * d);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng::below(&mut r, spec.classes);
        for j in 0..d {
            xs.push(means[c * d + j] + spec.class_std * rng::normal(&mut r));
        }
        ys.push(c);
    }
    (xs, ys)
}

/// Build the world for `spec`; bit-identical for equal specs.
pub fn make_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let (c, d) = (spec.classes, spec.dim);
    let raw_means = spec.raw_means();
    let (pre_x, pre_y) = draw(spec, &raw_means, spec.pretrain_n, 0);
    let (pool_x, pool_y) = draw(spec, &raw_means, spec.pool_n, 1);
    let (test_x, test_y) = draw(spec, &raw_means, spec.test_n, 2);

    let n = spec.pretrain_n as f64;
    let mut norm_mean = alloc::vec![0.0; d];
    let mut norm_scale = alloc::vec![0.0; d];
    for j in 0..d {
        let m = pre_x.iter().skip(j).step_by(d).sum::<f64>() / n;
        let var = pre_x.iter().skip(j).step_by(d).map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        norm_mean[j] = m;
        norm_scale[j] = libm::sqrt(var);
    }
    let normalize = |xs: Vec<f64>| -> Vec<f64> {
        xs.into_iter()
            .enumerate()
            .map(|(i, x)| (x - norm_mean[i % d]) / norm_scale[i % d])
            .collect()
    };
    let split = |xs: Vec<f64>, ys: Vec<usize>| -> Result<Dataset> {
        Ok(Dataset {
            xs: Tensor::matrix(ys.len(), d, normalize(xs))?,
            ys,
        })
    };
    let means = Tensor::matrix(c, d, normalize(raw_means))?;
    let stds = norm_scale.iter().map(|s| spec.class_std / s).collect();
    Ok(World {
        spec: spec.clone(),
        means,
        stds,
        pretrain: split(pre_x, pre_y)?,
        pool: split(pool_x, pool_y)?,
        test: split(test_x, test_y)?,
        norm_mean: norm_mean.clone(),
        norm_scale: norm_scale.clone(),
        embeddings: EmbeddingTable::generate(&EmbeddingSpec::new(c), spec.seed)?,
    })
}

impl World {
    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    /// Unnormalized log posterior `log p(c | x)` up to a shared constant.
    pub fn log_posterior_scores(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes())
            .map(|c| {
                -0.5 * self
                    .means
                    .row(c)
                    .iter()
                    .zip(x)
                    .zip(&self.stds)
                    .map(|((m, v), s)| {
                        let z = (v - m) / s;
                        z * z
                    })
                    .sum::<f64>()
            })
            .collect()
    }

    /// Normalized posterior over classes.
    pub fn posterior(&self, x: &[f64]) -> Vec<f64> {
        let mut p = self.log_posterior_scores(x);
        crate::tensor::softmax_in_place(&mut p);
        p
    }

    /// Bayes-optimal label; ties go to the lowest class id.
    pub fn oracle_label(&self, x: &[f64]) -> usize {
        let scores = self.log_posterior_scores(x);
        let mut best = 0;
        for (c, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = c;
            }
        }
        best
    }

    /// Fraction of `data` on which the Bayes oracle matches the true component.
    pub fn bayes_accuracy(&self, data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = (0..data.len())
            .filter(|&i| self.oracle_label(data.point(i)) == data.ys[i])
            .count();
        hits as f64 / data.len() as f64
    }

    /// The fully-supervised ceiling: Bayes accuracy on the test split.
    pub fn bayes_ceiling(&self) -> f64 {
        self.bayes_accuracy(&self.test)
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(Error::ShapeMismatch {
                op: "world dimension",
                lhs: alloc::vec![d],
                rhs: alloc::vec![self.dim()],
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldSpec {
        WorldSpec {
            pretrain_n: 2000,
            pool_n: 300,
            test_n: 300,
            ..WorldSpec::default()
        }
    }

    #[test]
    fn fewer_than_two_classes_rejected() {
        let spec = WorldSpec {
            classes: 1,
            ..small()
        };
        assert!(make_world(&spec).is_err());
    }

    #[test]
    fn deterministic() {
        assert_eq!(make_world(&small()).unwrap(), make_world(&small()).unwrap());
    }

    #[test]
    fn pretrain_split_is_z_scored() {
        let w = make_world(&small()).unwrap();
        let d = w.dim();
        let n = w.pretrain.len() as f64;
        for j in 0..d {
            let col: Vec<f64> = (0..w.pretrain.len()).map(|i| w.pretrain.point(i)[j]).collect();
            let m = col.iter().sum::<f64>() / n;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            assert!(m.abs() < 1e-9, "mean {m}");
            assert!((v - 1.0).abs() < 1e-9, "var {v}");
        }
    }

    #[test]
    fn oracle_at_mean_and_tie() {
        let w = make_world(&small()).unwrap();
        for c in 0..w.classes() {
            assert_eq!(w.oracle_label(w.means.row(c)), c);
        }
        let two = make_world(&WorldSpec {
            classes: 2,
            ..small()
        })
        .unwrap();
        let mid: Vec<f64> = two
            .means
            .row(0)
            .iter()
            .zip(two.means.row(1))
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        let s = two.log_posterior_scores(&mid);
        assert_eq!(s[0], s[1]);
        assert_eq!(two.oracle_label(&mid), 0);
    }

    #[test]
    fn separated_two_class_world_is_perfectly_classifiable() {
        let w = make_world(&WorldSpec {
            classes: 2,
            spacing: 50.0,
            ..small()
        })
        .unwrap();
        assert_eq!(w.bayes_ceiling(), 1.0);
    }

    #[test]
    fn posterior_is_a_distribution() {
        let w = make_world(&small()).unwrap();
        let p = w.posterior(w.test.point(0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
