//! Condition space of the generator: one embedding per class plus frozen
//! template offsets, and the ε-ball projection used by the optimizer.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::rng::{self, stream};
use crate::tensor::{l2_dist, l2_norm, Tensor};
use crate::{Error, Result};

/// A generator condition and the anchor it must stay near.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub vector: Vec<f64>,
    pub anchor: Vec<f64>,
    pub class_id: usize,
    pub template_id: usize,
}

impl Condition {
    pub fn distance_to_anchor(&self) -> f64 {
        l2_dist(&self.vector, &self.anchor)
    }

    pub fn with_vector(&self, vector: Vec<f64>) -> Condition {
        Condition {
            vector,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    class_embeddings: Tensor,
    template_offsets: Tensor,
}

/// Generation parameters for [`EmbeddingTable::generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpec {
    pub classes: usize,
    pub dim: usize,
    /// Norm of every class embedding.
    pub norm: f64,
    /// Template offset norms as fractions of the mean inter-class distance.
    pub template_scales: Vec<f64>,
    /// Minimum pairwise angle between class embeddings, radians.
    pub min_angle: f64,
}

impl EmbeddingSpec {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            dim: 8,
            norm: DEFAULT_NORM,
            template_scales: vec![0.0, 0.1, 0.3],
            min_angle: 40f64.to_radians(),
        }
    }
}

const DEFAULT_NORM: f64 = 3.0;

const MAX_REJECTIONS: usize = 100_000;

fn random_unit(rng: &mut rng::Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = rng::normals(rng, dim);
        let n = l2_norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

impl EmbeddingTable {
    pub fn new(class_embeddings: Tensor, template_offsets: Tensor) -> Result<Self> {
        let (c, d) = class_embeddings.dims2()?;
        let (k, d2) = template_offsets.dims2()?;
        if d != d2 || class_embeddings.rank() != 2 || template_offsets.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "embedding_table",
                lhs: class_embeddings.shape().to_vec(),
                rhs: template_offsets.shape().to_vec(),
            });
        }
        if c == 0 || k == 0 {
            return Err(crate::error::invalid("embedding table needs at least one class and template"));
        }
        let table = Self {
            class_embeddings,
            template_offsets,
        };
        if table.min_pairwise_distance() <= 0.0 {
            return Err(crate::error::invalid("class embeddings must be pairwise distinct"));
        }
        Ok(table)
    }

    /// Class embeddings of norm `spec.norm` with a minimum angular separation (by
    /// rejection) and randomly oriented template offsets; deterministic in `seed`.
    pub fn generate(spec: &EmbeddingSpec, seed: u64) -> Result<Self> {
        let mut r = rng::rng(rng::derive(seed, stream::EMBEDDING, 0));
        let cos_max = libm::cos(spec.min_angle);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
        let mut rejections = 0;
        while rows.len() < spec.classes {
            let cand = random_unit(&mut r, spec.dim);
            let ok = rows
                .iter()
                .all(|e| e.iter().zip(&cand).map(|(a, b)| a * b).sum::<f64>() < cos_max * spec.norm);
            if ok {
                rows.push(cand.into_iter().map(|v| v * spec.norm).collect());
            } else {
                rejections += 1;
                if rejections > MAX_REJECTIONS {
                    return Err(crate::error::invalid(format!(
                        "cannot place {} embeddings in {} dims with min angle {}",
                        spec.classes, spec.dim, spec.min_angle
                    )));
                }
            }
        }
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                total += l2_dist(&rows[i], &rows[j]);
                pairs += 1;
            }
        }
        let mean_dist = if pairs == 0 { 1.0 } else { total / pairs as f64 };
        let mut offsets = Vec::with_capacity(spec.template_scales.len() * spec.dim);
        for &scale in &spec.template_scales {
            let dir = random_unit(&mut r, spec.dim);
            offsets.extend(dir.into_iter().map(|x| x * scale * mean_dist));
        }
        Self::new(
            Tensor::matrix(spec.classes, spec.dim, rows.concat())?,
            Tensor::matrix(spec.template_scales.len(), spec.dim, offsets)?,
        )
    }

    pub fn classes(&self) -> usize {
        self.class_embeddings.shape()[0]
    }

    pub fn templates(&self) -> usize {
        self.template_offsets.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.class_embeddings.shape()[1]
    }

    pub fn class_embeddings(&self) -> &Tensor {
        &self.class_embeddings
    }

    pub fn template_offsets(&self) -> &Tensor {
        &self.template_offsets
    }

    pub fn class_embedding(&self, y: usize) -> &[f64] {
        self.class_embeddings.row(y)
    }

    pub fn template_offset(&self, tau: usize) -> &[f64] {
        self.template_offsets.row(tau)
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let c = self.classes();
        let mut best = f64::INFINITY;
        for i in 0..c {
            for j in i + 1..c {
                best = best.min(l2_dist(self.class_embedding(i), self.class_embedding(j)));
            }
        }
        best
    }

    /// Anchor `e_y + t_τ`.
    pub fn anchor(&self, y: usize, tau: usize) -> Result<Vec<f64>> {
        if y >= self.classes() {
            return Err(Error::OutOfRange {
                what: "class id",
                value: y,
                limit: self.classes(),
            });
        }
        if tau >= self.templates() {
            return Err(Error::OutOfRange {
                what: "template id",
                value: tau,
                limit: self.templates(),
            });
        }
        Ok(self
            .class_embedding(y)
            .iter()
            .zip(self.template_offset(tau))
            .map(|(e, t)| e + t)
            .collect())
    }
}

/// The predefined condition for class `y` under template `tau`: vector and
/// anchor both equal `e_y + t_τ`.
pub fn predefined_condition(table: &EmbeddingTable, y: usize, tau: usize) -> Result<Condition> {
    let anchor = table.anchor(y, tau)?;
    Ok(Condition {
        vector: anchor.clone(),
        anchor,
        class_id: y,
        template_id: tau,
    })
}

/// Euclidean projection of `s` onto the closed ball of radius `eps` around
/// `s_star`. Points already inside are returned unchanged, and the result of a
/// projection always tests as inside, so projecting twice is a no-op.
pub fn project_to_ball(s: &[f64], s_star: &[f64], eps: f64) -> Result<Vec<f64>> {
    if s.len() != s_star.len() {
        return Err(Error::ShapeMismatch {
            op: "project_to_ball",
            lhs: vec![s.len()],
            rhs: vec![s_star.len()],
        });
    }
    if !(eps >= 0.0) {
        return Err(crate::error::invalid(format!("ball radius must be non-negative, got {eps}")));
    }
    let dist = l2_dist(s, s_star);
    if dist <= eps {
        return Ok(s.to_vec());
    }
    if eps == 0.0 {
        return Ok(s_star.to_vec());
    }
    let mut factor = eps / dist;
    loop {
        let r: Vec<f64> = s
            .iter()
            .zip(s_star)
            .map(|(x, c)| c + (x - c) * factor)
            .collect();
        if l2_dist(&r, s_star) <= eps {
            return Ok(r);
        }
        // rounding pushed the point just outside; shrink by one ulp-scale step
        factor *= 1.0 - f64::EPSILON;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> EmbeddingTable {
        EmbeddingTable::new(
            Tensor::matrix(4, 2, vec![0.0, 1.0, 1.0, 0.0, -1.0, 0.0, 1.0, 2.0]).unwrap(),
            Tensor::matrix(2, 2, vec![0.0, 0.0, 0.1, -0.1]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_template_gives_class_embedding() {
        let c = predefined_condition(&table(), 0, 0).unwrap();
        assert_eq!(c.vector, vec![0.0, 1.0]);
        assert_eq!(c.vector, c.anchor);
    }

    #[test]
    fn offset_is_added() {
        let c = predefined_condition(&table(), 3, 1).unwrap();
        assert!((c.vector[0] - 1.1).abs() < 1e-15 && (c.vector[1] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn distinct_classes_distinct_conditions() {
        let t = table();
        let a = predefined_condition(&t, 1, 0).unwrap();
        let b = predefined_condition(&t, 2, 0).unwrap();
        assert!(l2_dist(&a.vector, &b.vector) > 0.0);
    }

    #[test]
    fn out_of_range_ids_rejected() {
        let t = table();
        assert!(predefined_condition(&t, 4, 0).is_err());
        assert!(predefined_condition(&t, 0, 2).is_err());
    }

    #[test]
    fn duplicate_rows_rejected() {
        let e = Tensor::matrix(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(EmbeddingTable::new(e, Tensor::zeros(&[1, 2])).is_err());
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_to_ball(&[3.0, 4.0], &[0.0, 0.0], 2.5).unwrap(), vec![1.5, 2.0]);
        assert_eq!(project_to_ball(&[0.1, 0.2], &[0.0, 0.0], 1.0).unwrap(), vec![0.1, 0.2]);
        assert_eq!(project_to_ball(&[0.1, 0.2], &[0.5, 0.5], 0.0).unwrap(), vec![0.5, 0.5]);
        assert!(project_to_ball(&[0.1], &[0.5, 0.5], 1.0).is_err());
    }

    #[test]
    fn generated_table_is_separated_and_deterministic() {
        let spec = EmbeddingSpec::new(10);
        let a = EmbeddingTable::generate(&spec, 5).unwrap();
        let b = EmbeddingTable::generate(&spec, 5).unwrap();
        assert_eq!(a, b);
        let min_chord = 2.0 * libm::sin(spec.min_angle / 2.0);
        assert!(a.min_pairwise_distance() >= min_chord - 1e-12);
        assert_eq!(l2_norm(a.template_offset(0)), 0.0);
        assert!(l2_norm(a.template_offset(2)) > l2_norm(a.template_offset(1)));
    }

    #[test]
    fn hundred_class_table_fits() {
        let t = EmbeddingTable::generate(&EmbeddingSpec::new(100), 1).unwrap();
        assert_eq!(t.classes(), 100);
        let mut anchors: Vec<Vec<f64>> = Vec::new();
        for y in 0..100 {
            for tau in 0..3 {
                anchors.push(t.anchor(y, tau).unwrap());
            }
        }
        for i in 0..anchors.len() {
            for j in i + 1..anchors.len() {
                assert_ne!(anchors[i], anchors[j]);
            }
        }
    }
}
