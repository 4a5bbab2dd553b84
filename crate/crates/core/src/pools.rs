//! The unlabeled pool U, the labeled set L and the generated set G.

use alloc::vec;
use alloc::vec::Vec;

use crate::embedding::Condition;
use crate::world::{Dataset, World};
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Pool,
    Generated,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Pool => "pool",
            Provenance::Generated => "generated",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pool" => Ok(Provenance::Pool),
            "generated" => Ok(Provenance::Generated),
            _ => Err(crate::error::invalid(alloc::format!("unknown provenance `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub pool_index: usize,
    pub x: Vec<f64>,
    pub y: usize,
    pub cycle: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedPoint {
    pub x: Vec<f64>,
    /// Pseudo-label: the class of the generating condition.
    pub label: usize,
    pub cycle: usize,
    pub condition: Vec<f64>,
    pub template_id: usize,
    pub epsilon: f64,
}

#[derive(Debug, Clone)]
pub struct Pools {
    pool: Tensor,
    /// Remaining pool indices, ascending.
    unlabeled: Vec<usize>,
    in_u: Vec<bool>,
    labeled: Vec<LabeledPoint>,
    generated: Vec<GeneratedPoint>,
    annotations: usize,
}

impl Pools {
    pub fn new(pool: Tensor) -> Result<Self> {
        let n = pool.dims2()?.0;
        Ok(Self {
            pool,
            unlabeled: (0..n).collect(),
            in_u: vec![true; n],
            labeled: Vec::new(),
            generated: Vec::new(),
            annotations: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.pool.dims2().map(|d| d.1).unwrap_or(0)
    }

    /// Remaining pool indices in ascending order.
    pub fn unlabeled(&self) -> &[usize] {
        &self.unlabeled
    }

    /// Rows of U in the order of [`Pools::unlabeled`].
    pub fn unlabeled_xs(&self) -> Tensor {
        let d = self.dim();
        let mut data = Vec::with_capacity(self.unlabeled.len() * d);
        for &i in &self.unlabeled {
            data.extend_from_slice(self.pool.row(i));
        }
        Tensor::matrix(self.unlabeled.len(), d, data).expect("pool rows")
    }

    pub fn labeled(&self) -> &[LabeledPoint] {
        &self.labeled
    }

    pub fn generated(&self) -> &[GeneratedPoint] {
        &self.generated
    }

    /// Oracle labels consumed so far.
    pub fn annotations(&self) -> usize {
        self.annotations
    }

    /// Annotate the pool points `indices` with the world oracle and move them
    /// from U to L.
    pub fn move_selected(&mut self, world: &World, indices: &[usize], cycle: usize) -> Result<()> {
        let mut seen = vec![false; self.in_u.len()];
        for &i in indices {
            if i >= self.in_u.len() {
                return Err(Error::OutOfRange {
                    what: "pool index",
                    value: i,
                    limit: self.in_u.len(),
                });
            }
            if !self.in_u[i] || seen[i] {
                return Err(crate::error::invalid(alloc::format!(
                    "pool index {i} is not in the unlabeled pool (duplicate or already labeled)"
                )));
            }
            seen[i] = true;
        }
        world.check_dim(self.dim())?;
        for &i in indices {
            let x = self.pool.row(i).to_vec();
            let y = world.oracle_label(&x);
            self.in_u[i] = false;
            self.labeled.push(LabeledPoint {
                pool_index: i,
                x,
                y,
                cycle,
            });
        }
        self.unlabeled.retain(|&i| !seen[i]);
        self.annotations += indices.len();
        Ok(())
    }

    /// Add a generated point pseudo-labeled with its condition's class.
    pub fn append_generated(&mut self, x: Vec<f64>, condition: &Condition, cycle: usize, epsilon: f64) {
        self.generated.push(GeneratedPoint {
            x,
            label: condition.class_id,
            cycle,
            condition: condition.vector.clone(),
            template_id: condition.template_id,
            epsilon,
        });
    }

    /// Drop L without returning its points to U.
    pub fn clear_labeled(&mut self) {
        self.labeled.clear();
    }

    pub fn clear_generated(&mut self) {
        self.generated.clear();
    }

    pub fn labeled_dataset(&self) -> Dataset {
        to_dataset(self.dim(), self.labeled.iter().map(|p| (&p.x[..], p.y)))
    }

    pub fn generated_dataset(&self) -> Dataset {
        to_dataset(self.dim(), self.generated.iter().map(|p| (&p.x[..], p.label)))
    }

    /// L followed by G.
    pub fn union_dataset(&self) -> Dataset {
        to_dataset(
            self.dim(),
            self.labeled
                .iter()
                .map(|p| (&p.x[..], p.y))
                .chain(self.generated.iter().map(|p| (&p.x[..], p.label))),
        )
    }
}

fn to_dataset<'a>(d: usize, rows: impl Iterator<Item = (&'a [f64], usize)>) -> Dataset {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (x, y) in rows {
        xs.extend_from_slice(x);
        ys.push(y);
    }
    Dataset {
        xs: Tensor::matrix(ys.len(), d, xs).expect("dataset rows"),
        ys,
    }
}
