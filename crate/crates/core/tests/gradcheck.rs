use galforge_core::autodiff::{Tape, Var};
use galforge_core::classifier::{ClassifierModel, ClassifierSpec};
use galforge_core::rng::{self, Rng};
use galforge_core::Tensor;

const H: f64 = 1e-5;
const CASES: u64 = 100;

/// Relative error with a floor on the denominator so that round-off on
/// near-zero entries is not amplified.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-2)
}

fn random(r: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| lo + (hi - lo) * rng::uniform(r)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Compare tape gradients of `f` at `inputs` with central differences.
/// `f` maps the input leaves to a tensor that is contracted with fixed random
/// weights to a scalar.
fn check<F>(name: &str, inputs: &[Tensor], weights_seed: u64, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor], taped: bool| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = vals.iter().map(|v| tape.param(v.clone())).collect();
        let out = f(&mut tape, &leaves);
        let shape = tape.value(out).shape().to_vec();
        let w = random(&mut rng::rng(weights_seed), &shape, -1.0, 1.0);
        let wv = tape.constant(w);
        let prod = tape.mul(out, wv).unwrap();
        let root = tape.sum(prod).unwrap();
        let value = tape.value(root).item();
        if !taped {
            return (value, Vec::new());
        }
        let g = tape.backward(root).unwrap();
        (value, leaves.iter().zip(vals).map(|(&l, v)| g.get_or_zeros(l, v.shape())).collect())
    };
    let (_, grads) = eval(inputs, true);
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            let numeric = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * H);
            worst = worst.max(rel_err(grads[i].data()[j], numeric));
        }
    }
    assert!(worst < 1e-4, "{name}: max relative error {worst:e}");
    worst
}

fn shape(r: &mut Rng) -> (usize, usize) {
    (1 + rng::below(r, 4), 1 + rng::below(r, 5))
}

fn each_case(name: &str, mut f: impl FnMut(&mut Rng, u64)) {
    for case in 0..CASES {
        let mut r = rng::rng(rng::derive(0xFD, name.len() as u64, case));
        f(&mut r, case);
    }
}

#[test]
fn matmul() {
    each_case("matmul", |r, c| {
        let (m, k) = shape(r);
        let n = 1 + rng::below(r, 4);
        let a = random(r, &[m, k], -2.0, 2.0);
        let b = random(r, &[k, n], -2.0, 2.0);
        check("matmul", &[a, b], c, |t, v| t.matmul(v[0], v[1]).unwrap());
    });
}

#[test]
fn elementwise_binary() {
    each_case("binary", |r, c| {
        let (m, n) = shape(r);
        let a = random(r, &[m, n], -2.0, 2.0);
        let b = random(r, &[m, n], -2.0, 2.0);
        check("add", &[a.clone(), b.clone()], c, |t, v| t.add(v[0], v[1]).unwrap());
        check("sub", &[a.clone(), b.clone()], c, |t, v| t.sub(v[0], v[1]).unwrap());
        check("mul", &[a, b], c, |t, v| t.mul(v[0], v[1]).unwrap());
    });
}

#[test]
fn add_bias() {
    each_case("add_bias", |r, c| {
        let (m, n) = shape(r);
        let a = random(r, &[m, n], -2.0, 2.0);
        let b = random(r, &[n], -2.0, 2.0);
        check("add_bias", &[a, b], c, |t, v| t.add_bias(v[0], v[1]).unwrap());
    });
}

#[test]
fn elementwise_unary() {
    each_case("unary", |r, c| {
        let (m, n) = shape(r);
        let a = random(r, &[m, n], -2.0, 2.0);
        let s = rng::uniform(r) * 4.0 - 2.0;
        check("scale", std::slice::from_ref(&a), c, |t, v| t.scale(v[0], s).unwrap());
        check("add_scalar", std::slice::from_ref(&a), c, |t, v| t.add_scalar(v[0], s).unwrap());
        check("tanh", std::slice::from_ref(&a), c, |t, v| t.tanh(v[0]).unwrap());
        // keep relu inputs away from the kink
        let away = a.map(|x| if x.abs() < 0.01 { x + 0.05 } else { x });
        check("relu", &[away], c, |t, v| t.relu(v[0]).unwrap());
        let pos = random(r, &[m, n], 0.1, 3.0);
        check("log", std::slice::from_ref(&pos), c, |t, v| t.log(v[0]).unwrap());
        check("sqrt", &[pos], c, |t, v| t.sqrt(v[0]).unwrap());
    });
}

#[test]
fn softmax_family() {
    each_case("softmax", |r, c| {
        let (m, n) = shape(r);
        let a = random(r, &[m, n], -3.0, 3.0);
        check("softmax", std::slice::from_ref(&a), c, |t, v| t.softmax(v[0]).unwrap());
        check("log_softmax", &[a], c, |t, v| t.log_softmax(v[0]).unwrap());
    });
}

#[test]
fn reductions() {
    each_case("reduce", |r, c| {
        let (m, n) = shape(r);
        let a = random(r, &[m, n], -2.0, 2.0);
        check("sum", std::slice::from_ref(&a), c, |t, v| t.sum(v[0]).unwrap());
        check("mean", &[a], c, |t, v| t.mean(v[0]).unwrap());
    });
}

#[test]
fn concat_slice_dropout() {
    each_case("structural", |r, c| {
        let (m, n) = shape(r);
        let n2 = 1 + rng::below(r, 3);
        let a = random(r, &[m, n], -2.0, 2.0);
        let b = random(r, &[m, n2], -2.0, 2.0);
        check("concat", &[a.clone(), b], c, |t, v| t.concat(&[v[0], v[1]]).unwrap());
        let lo = rng::below(r, n);
        let hi = lo + 1 + rng::below(r, n - lo);
        check("slice", std::slice::from_ref(&a), c, |t, v| t.slice(v[0], lo..hi).unwrap());
        let mask: Vec<f64> = (0..m * n).map(|_| if rng::uniform(r) < 0.3 { 0.0 } else { 1.0 / 0.7 }).collect();
        check("dropout_mask_apply", &[a], c, |t, v| t.dropout_mask_apply(v[0], mask.clone()).unwrap());
    });
}

fn mlp_check(arch: &str, classes: usize, seeds: u64) {
    let spec = ClassifierSpec::new(arch, 2, classes).unwrap();
    for seed in 0..seeds {
        let model = ClassifierModel::init(&spec, seed).unwrap();
        let mut r = rng::rng(seed + 100);
        let x = random(&mut r, &[5, 2], -2.0, 2.0);
        let ys: Vec<usize> = (0..5).map(|_| rng::below(&mut r, classes)).collect();
        let mut onehot = vec![0.0; 5 * classes];
        for (i, &y) in ys.iter().enumerate() {
            onehot[i * classes + y] = 1.0;
        }
        let onehot = Tensor::matrix(5, classes, onehot).unwrap();
        let params: Vec<Tensor> = model.net.params.iter().map(|p| p.value.clone()).collect();
        let net = model.net.clone();
        check(arch, &params, seed, |t, v| {
            let xv = t.constant(x.clone());
            let z = net.forward_taped(t, v, xv, None).unwrap();
            let lp = t.log_softmax(z).unwrap();
            let oh = t.constant(onehot.clone());
            let picked = t.mul(lp, oh).unwrap();
            let s = t.sum(picked).unwrap();
            t.scale(s, -0.2).unwrap()
        });
    }
}

#[test]
fn classifier_2_16_3() {
    mlp_check("mlp-16", 3, 5);
}

#[test]
fn classifier_2_16_16_10() {
    mlp_check("mlp-16x16", 10, 3);
}
