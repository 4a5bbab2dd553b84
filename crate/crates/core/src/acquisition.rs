//! Acquisition functions σ. Every score is oriented so that higher means more
//! informative; margin and confidence are negated accordingly.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::classifier::ClassifierModel;
use crate::rng::{self, stream};
use crate::tensor::{sq_dist, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AcquisitionKind {
    Random,
    Entropy,
    Margin,
    LeastConfidence,
    VarRatio,
    MeanStd,
    Bald,
    KMeans,
    CoreSet,
}

impl AcquisitionKind {
    pub const ALL: [AcquisitionKind; 9] = [
        AcquisitionKind::Random,
        AcquisitionKind::Entropy,
        AcquisitionKind::Margin,
        AcquisitionKind::LeastConfidence,
        AcquisitionKind::VarRatio,
        AcquisitionKind::MeanStd,
        AcquisitionKind::Bald,
        AcquisitionKind::KMeans,
        AcquisitionKind::CoreSet,
    ];

    /// Config-file name.
    pub fn name(self) -> &'static str {
        match self {
            AcquisitionKind::Random => "random",
            AcquisitionKind::Entropy => "entropy",
            AcquisitionKind::Margin => "margin",
            AcquisitionKind::LeastConfidence => "least_confidence",
            AcquisitionKind::VarRatio => "var_ratio",
            AcquisitionKind::MeanStd => "mean_std",
            AcquisitionKind::Bald => "bald",
            AcquisitionKind::KMeans => "kmeans",
            AcquisitionKind::CoreSet => "coreset",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| crate::error::invalid(format!("unknown acquisition function `{s}`")))
    }

    /// Needs a stack of MC-dropout predictions.
    pub fn is_mc(self) -> bool {
        matches!(self, AcquisitionKind::VarRatio | AcquisitionKind::MeanStd | AcquisitionKind::Bald)
    }

    /// A pure function of predictive distributions.
    pub fn is_score_based(self) -> bool {
        !matches!(self, AcquisitionKind::Random | AcquisitionKind::KMeans | AcquisitionKind::CoreSet)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcquisitionFn {
    pub kind: AcquisitionKind,
    pub mc_passes: usize,
    pub seed: u64,
}

impl AcquisitionFn {
    pub fn new(kind: AcquisitionKind) -> Self {
        Self {
            kind,
            mc_passes: 10,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Predictive input to [`score`].
#[derive(Debug, Clone, Copy)]
pub enum Predictive<'a> {
    Single(&'a [f64]),
    /// One distribution per MC pass.
    Mc(&'a [&'a [f64]]),
}

fn entropy_of(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * libm::log(v)).sum::<f64>()
}

/// Largest and second-largest entries.
fn top_two(p: &[f64]) -> (f64, f64) {
    let mut first = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &v in p {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    (first, if second.is_finite() { second } else { first })
}

fn mc_mean(passes: &[&[f64]]) -> Vec<f64> {
    let c = passes[0].len();
    let mut m = vec![0.0; c];
    for p in passes {
        for (a, b) in m.iter_mut().zip(p.iter()) {
            *a += b;
        }
    }
    let n = passes.len() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

pub fn entropy(p: &[f64]) -> f64 {
    entropy_of(p)
}

/// `−(p₍₁₎ − p₍₂₎)`.
pub fn margin_score(p: &[f64]) -> f64 {
    let (a, b) = top_two(p);
    -(a - b)
}

pub fn least_confidence(p: &[f64]) -> f64 {
    1.0 - top_two(p).0
}

/// Score one predictive input under `kind`.
pub fn score(kind: AcquisitionKind, input: Predictive<'_>) -> Result<f64> {
    match (kind, input) {
        (AcquisitionKind::Entropy, Predictive::Single(p)) => Ok(entropy_of(p)),
        (AcquisitionKind::Margin, Predictive::Single(p)) => Ok(margin_score(p)),
        (AcquisitionKind::LeastConfidence, Predictive::Single(p)) => Ok(least_confidence(p)),
        (k, Predictive::Single(_)) if k.is_mc() => Err(crate::error::invalid(format!(
            "`{}` needs MC-dropout predictions, got a single distribution",
            k.name()
        ))),
        (k, Predictive::Mc(passes)) if k.is_mc() => {
            if passes.len() < 2 {
                return Err(crate::error::invalid("MC acquisition needs at least 2 passes"));
            }
            let mean = mc_mean(passes);
            Ok(match k {
                AcquisitionKind::VarRatio => 1.0 - top_two(&mean).0,
                AcquisitionKind::MeanStd => {
                    let n = passes.len() as f64;
                    let c = mean.len();
                    (0..c)
                        .map(|j| {
                            let var = passes.iter().map(|p| (p[j] - mean[j]) * (p[j] - mean[j])).sum::<f64>() / n;
                            libm::sqrt(var)
                        })
                        .sum::<f64>()
                        / c as f64
                }
                AcquisitionKind::Bald => {
                    let expected = passes.iter().map(|p| entropy_of(p)).sum::<f64>() / passes.len() as f64;
                    entropy_of(&mean) - expected
                }
                _ => unreachable!(),
            })
        }
        (k, _) => Err(crate::error::invalid(format!("`{}` is not a score-based acquisition for this input", k.name()))),
    }
}

/// Scores of every row of `xs` under `func` and `model`.
pub fn score_points(func: &AcquisitionFn, model: &ClassifierModel, xs: &Tensor) -> Result<Vec<f64>> {
    if !func.kind.is_score_based() {
        return Err(crate::error::invalid(format!("`{}` has no per-point score", func.kind.name())));
    }
    if func.kind.is_mc() {
        let passes = model.mc_predict(xs, func.mc_passes, func.seed)?;
        (0..xs.rows())
            .map(|i| {
                let rows: Vec<&[f64]> = passes.iter().map(|p| p.row(i)).collect();
                score(func.kind, Predictive::Mc(&rows))
            })
            .collect()
    } else {
        let p = model.predict_proba(xs)?;
        (0..xs.rows()).map(|i| score(func.kind, Predictive::Single(p.row(i)))).collect()
    }
}

fn top_mask(probs: &Tensor, rank: usize) -> Tensor {
    let (r, c) = probs.dims2().expect("probability rows");
    let mut mask = vec![0.0; r * c];
    for i in 0..r {
        let row = probs.row(i);
        let mut order: Vec<usize> = (0..c).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        mask[i * c + order[rank.min(c - 1)]] = 1.0;
    }
    Tensor::matrix(r, c, mask).expect("mask shape")
}

/// Record `Σ_rows σ(f(x))` on `tape` for points `x` (`[k, d]`). The top-k
/// masks used by margin and confidence scores are read off the forward values,
/// which is the usual subgradient at ties.
pub fn score_taped(func: &AcquisitionFn, model: &ClassifierModel, tape: &mut Tape, x: Var) -> Result<Var> {
    let kind = func.kind;
    if !kind.is_score_based() {
        return Err(crate::error::invalid(format!("`{}` cannot be differentiated", kind.name())));
    }
    let rows = tape.value(x).rows();
    if !kind.is_mc() {
        let z = model.logits_taped(tape, x, None)?;
        let p = tape.softmax(z)?;
        return match kind {
            AcquisitionKind::Entropy => {
                let lp = tape.log_softmax(z)?;
                let plp = tape.mul(p, lp)?;
                let s = tape.sum(plp)?;
                tape.scale(s, -1.0)
            }
            AcquisitionKind::Margin => {
                let m1 = tape.constant(top_mask(tape.value(p), 0));
                let m2 = tape.constant(top_mask(tape.value(p), 1));
                let diff_mask = tape.sub(m2, m1)?;
                let gap = tape.mul(p, diff_mask)?;
                tape.sum(gap)
            }
            AcquisitionKind::LeastConfidence => {
                let m1 = tape.constant(top_mask(tape.value(p), 0));
                let top = tape.mul(p, m1)?;
                let s = tape.sum(top)?;
                let neg = tape.scale(s, -1.0)?;
                tape.add_scalar(neg, rows as f64)
            }
            _ => unreachable!(),
        };
    }

    let n = func.mc_passes;
    if n < 2 {
        return Err(crate::error::invalid("MC acquisition needs at least 2 passes"));
    }
    if !(model.spec.dropout_rate > 0.0) {
        return Err(Error::DropoutRequired);
    }
    let mut probs = Vec::with_capacity(n);
    for pass in 0..n {
        let masks = model.mc_masks(rows, func.seed, pass);
        let z = model.logits_taped(tape, x, Some(&masks))?;
        probs.push(tape.softmax(z)?);
    }
    let mut total = probs[0];
    for &p in &probs[1..] {
        total = tape.add(total, p)?;
    }
    let mean = tape.scale(total, 1.0 / n as f64)?;
    match kind {
        AcquisitionKind::VarRatio => {
            let m1 = tape.constant(top_mask(tape.value(mean), 0));
            let top = tape.mul(mean, m1)?;
            let s = tape.sum(top)?;
            let neg = tape.scale(s, -1.0)?;
            tape.add_scalar(neg, rows as f64)
        }
        AcquisitionKind::MeanStd => {
            let mut sq_total = None;
            for &p in &probs {
                let d = tape.sub(p, mean)?;
                let sq = tape.mul(d, d)?;
                sq_total = Some(match sq_total {
                    None => sq,
                    Some(acc) => tape.add(acc, sq)?,
                });
            }
            let var = tape.scale(sq_total.unwrap(), 1.0 / n as f64)?;
            // keeps d√v finite where every pass agrees (there dv = 0 anyway)
            let var = tape.add_scalar(var, 1e-30)?;
            let std = tape.sqrt(var)?;
            let classes = model.classes() as f64;
            let s = tape.sum(std)?;
            tape.scale(s, 1.0 / classes)
        }
        AcquisitionKind::Bald => {
            let shifted = tape.add_scalar(mean, 1e-300)?;
            let lm = tape.log(shifted)?;
            let h = tape.mul(mean, lm)?;
            let hs = tape.sum(h)?;
            let mut expected = None;
            for &p in &probs {
                let lp = tape.log(p)?;
                let plp = tape.mul(p, lp)?;
                let s = tape.sum(plp)?;
                expected = Some(match expected {
                    None => s,
                    Some(acc) => tape.add(acc, s)?,
                });
            }
            let expected = tape.scale(expected.unwrap(), 1.0 / n as f64)?;
            // H(p̄) − E H(p) = −Σ p̄ log p̄ + E Σ p log p
            tape.sub(expected, hs)
        }
        _ => unreachable!(),
    }
}

/// Indices of the `b` highest scores; ties go to the lower index.
pub fn select_top_scores(scores: &[f64], b: usize) -> Result<Vec<usize>> {
    if b > scores.len() {
        return Err(Error::OutOfRange {
            what: "selection budget",
            value: b,
            limit: scores.len(),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    order.truncate(b);
    Ok(order)
}

fn nearest(points: &Tensor, center: &[f64]) -> Vec<(f64, usize)> {
    let mut d: Vec<(f64, usize)> = (0..points.rows()).map(|i| (sq_dist(points.row(i), center), i)).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d
}

/// Seeded k-means++ initialization followed by Lloyd iterations.
pub fn kmeans(points: &Tensor, k: usize, seed: u64, max_iter: usize) -> Result<Tensor> {
    let (n, d) = points.dims2()?;
    if k == 0 || k > n {
        return Err(Error::OutOfRange {
            what: "k-means clusters",
            value: k,
            limit: n,
        });
    }
    let mut r = rng::rng(seed);
    let mut centers: Vec<Vec<f64>> = vec![points.row(rng::below(&mut r, n)).to_vec()];
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let target = rng::uniform(&mut r) * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng::below(&mut r, n)
        };
        centers.push(points.row(next).to_vec());
        let c = centers.last().unwrap();
        for (i, dv) in dist.iter_mut().enumerate() {
            *dv = dv.min(sq_dist(points.row(i), c));
        }
    }
    let mut assign = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for i in 0..n {
            let mut best = 0;
            let mut bd = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let dv = sq_dist(points.row(i), center);
                if dv < bd {
                    bd = dv;
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i]].iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    Tensor::matrix(k, d, centers.concat())
}

/// Greedy k-center: repeatedly add the point farthest from the current centers
/// (initialized with `centers`), ties to the lower index. With no initial
/// centers the first pick is seeded uniform.
pub fn k_center_greedy(points: &Tensor, centers: Option<&Tensor>, b: usize, seed: u64) -> Result<Vec<usize>> {
    let n = points.rows();
    if b > n {
        return Err(Error::OutOfRange {
            what: "selection budget",
            value: b,
            limit: n,
        });
    }
    let mut min_d = vec![f64::INFINITY; n];
    if let Some(cs) = centers {
        for c in 0..cs.rows() {
            for (i, m) in min_d.iter_mut().enumerate() {
                *m = m.min(sq_dist(points.row(i), cs.row(c)));
            }
        }
    }
    let mut picked = Vec::with_capacity(b);
    let mut taken = vec![false; n];
    let mut r = rng::rng(seed);
    while picked.len() < b {
        let next = if min_d.iter().all(|d| d.is_infinite()) {
            rng::below(&mut r, n)
        } else {
            let mut best = usize::MAX;
            for i in 0..n {
                if !taken[i] && (best == usize::MAX || min_d[i] > min_d[best]) {
                    best = i;
                }
            }
            best
        };
        taken[next] = true;
        picked.push(next);
        let p = points.row(next).to_vec();
        for (i, m) in min_d.iter_mut().enumerate() {
            *m = m.min(sq_dist(points.row(i), &p));
        }
    }
    Ok(picked)
}

/// Choose `b` pool rows to annotate. `labeled` (the current labeled inputs)
/// seeds the core-set centers.
pub fn select_top(
    func: &AcquisitionFn,
    pool: &Tensor,
    model: &ClassifierModel,
    b: usize,
    seed: u64,
    labeled: Option<&Tensor>,
) -> Result<Vec<usize>> {
    let n = pool.rows();
    if b > n {
        return Err(Error::OutOfRange {
            what: "selection budget",
            value: b,
            limit: n,
        });
    }
    let sel_seed = rng::derive(seed, stream::SELECT, 0);
    match func.kind {
        AcquisitionKind::Random => {
            let mut r = rng::rng(sel_seed);
            Ok(rand::seq::index::sample(&mut r, n, b).into_vec())
        }
        AcquisitionKind::KMeans => {
            if b == 0 {
                return Ok(Vec::new());
            }
            let feats = model.features(pool)?;
            let centers = kmeans(&feats, b, sel_seed, 100)?;
            let mut taken = vec![false; n];
            let mut out = Vec::with_capacity(b);
            for c in 0..b {
                let pick = nearest(&feats, centers.row(c))
                    .into_iter()
                    .map(|(_, i)| i)
                    .find(|&i| !taken[i])
                    .expect("b ≤ n guarantees a free point");
                taken[pick] = true;
                out.push(pick);
            }
            Ok(out)
        }
        AcquisitionKind::CoreSet => {
            let feats = model.features(pool)?;
            let centers = match labeled {
                Some(l) if l.rows() > 0 => Some(model.features(l)?),
                _ => None,
            };
            k_center_greedy(&feats, centers.as_ref(), b, sel_seed)
        }
        _ => select_top_scores(&score_points(func, model, pool)?, b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ClassifierSpec;

    #[test]
    fn analytic_values() {
        assert!((entropy(&[0.25; 4]) - libm::log(4.0)).abs() < 1e-15);
        let onehot = [0.0, 1.0, 0.0];
        assert_eq!(entropy(&onehot), 0.0);
        assert_eq!(margin_score(&onehot), -1.0);
        assert_eq!(least_confidence(&onehot), 0.0);
        assert!((margin_score(&[0.5, 0.3, 0.2]) + 0.2).abs() < 1e-15);
    }

    #[test]
    fn bald_of_identical_passes_is_zero() {
        let p = [0.2, 0.5, 0.3];
        let passes: [&[f64]; 3] = [&p, &p, &p];
        assert!(score(AcquisitionKind::Bald, Predictive::Mc(&passes)).unwrap().abs() < 1e-15);
        assert!(score(AcquisitionKind::MeanStd, Predictive::Mc(&passes)).unwrap() < 1e-15);
    }

    #[test]
    fn mc_kinds_reject_single_distribution() {
        for k in [AcquisitionKind::Bald, AcquisitionKind::VarRatio, AcquisitionKind::MeanStd] {
            assert!(score(k, Predictive::Single(&[0.5, 0.5])).is_err());
        }
    }

    #[test]
    fn names_round_trip() {
        for k in AcquisitionKind::ALL {
            assert_eq!(AcquisitionKind::parse(k.name()).unwrap(), k);
        }
        assert!(AcquisitionKind::parse("badge").is_err());
    }

    #[test]
    fn top_two_with_index_tie_break() {
        let s = [0.1, 0.9, 0.5, 0.9, 0.2];
        assert_eq!(select_top_scores(&s, 2).unwrap(), vec![1, 3]);
        assert!(select_top_scores(&s, 6).is_err());
        let shifted: Vec<f64> = s.iter().map(|v| v + 3.0).collect();
        assert_eq!(select_top_scores(&shifted, 3).unwrap(), select_top_scores(&s, 3).unwrap());
    }

    #[test]
    fn coreset_picks_farthest_first() {
        // labeled center at 0, pool at 1, 2, 5 on a line: k-center greedy takes 5, then 2
        let pool = Tensor::matrix(3, 1, vec![1.0, 2.0, 5.0]).unwrap();
        let centers = Tensor::matrix(1, 1, vec![0.0]).unwrap();
        assert_eq!(k_center_greedy(&pool, Some(&centers), 1, 0).unwrap(), vec![2]);
        // after 5: distances 1→1, 2→2 (to 0 and 5: min(4,9)=4 vs 1) so 2 next
        assert_eq!(k_center_greedy(&pool, Some(&centers), 2, 0).unwrap(), vec![2, 1]);
    }

    #[test]
    fn full_budget_returns_everything() {
        let spec = ClassifierSpec::new("mlp-8x8", 2, 3).unwrap();
        let model = ClassifierModel::init(&spec, 1).unwrap();
        let pool = Tensor::matrix(6, 2, (0..12).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        let labeled = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        for kind in AcquisitionKind::ALL {
            let f = AcquisitionFn::new(kind);
            let mut got = select_top(&f, &pool, &model, 6, 3, Some(&labeled)).unwrap();
            got.sort_unstable();
            assert_eq!(got, (0..6).collect::<Vec<_>>(), "{}", kind.name());
            assert!(select_top(&f, &pool, &model, 7, 3, None).is_err());
        }
    }

    #[test]
    fn kmeans_selection_is_distinct_and_deterministic() {
        let spec = ClassifierSpec::new("mlp-8x8", 2, 3).unwrap();
        let model = ClassifierModel::init(&spec, 1).unwrap();
        let pool = Tensor::matrix(40, 2, (0..80).map(|i| libm::sin(i as f64 * 1.7)).collect()).unwrap();
        let f = AcquisitionFn::new(AcquisitionKind::KMeans);
        let a = select_top(&f, &pool, &model, 10, 5, None).unwrap();
        assert_eq!(a, select_top(&f, &pool, &model, 10, 5, None).unwrap());
        let mut s = a.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 10);
    }

    #[test]
    fn taped_scores_match_numeric_scores() {
        let spec = ClassifierSpec::new("mlp-16x16", 2, 4).unwrap();
        let model = ClassifierModel::init(&spec, 2).unwrap();
        let xs = Tensor::matrix(3, 2, vec![0.3, -0.2, 1.5, 0.7, -0.9, 0.1]).unwrap();
        for kind in [
            AcquisitionKind::Entropy,
            AcquisitionKind::Margin,
            AcquisitionKind::LeastConfidence,
            AcquisitionKind::VarRatio,
            AcquisitionKind::MeanStd,
            AcquisitionKind::Bald,
        ] {
            let f = AcquisitionFn::new(kind).with_seed(4);
            let expect: f64 = score_points(&f, &model, &xs).unwrap().iter().sum();
            let mut tape = Tape::new();
            let x = tape.constant(xs.clone());
            let s = score_taped(&f, &model, &mut tape, x).unwrap();
            let got = tape.value(s).item();
            assert!((got - expect).abs() < 1e-12, "{}: {got} vs {expect}", kind.name());
        }
    }
}
