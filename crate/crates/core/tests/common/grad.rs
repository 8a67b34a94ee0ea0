//! Finite-difference checks. Each returns the worst relative error seen and
//! how many coordinates were compared.

use cam_forge::cam::Cam;
use cam_forge::model::layers::{
    conv2d_backward, conv2d_forward, maxpool2_backward, maxpool2_forward, relu_backward, relu_forward, sigmoid_backward,
    sigmoid_forward, upsample_bilinear_backward, upsample_bilinear_forward, Tensor,
};
use cam_forge::model::{backward, forward, init_params, loss_ls_bce, FcnArchitecture, FcnParams};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{central_diff, rel_err};

pub const STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, Default)]
pub struct Check {
    pub worst: f64,
    pub compared: usize,
}

impl Check {
    fn push(&mut self, analytic: f64, numeric: f64) {
        self.worst = self.worst.max(rel_err(analytic, numeric));
        self.compared += 1;
    }

    fn merge(self, other: Check) -> Check {
        Check {
            worst: self.worst.max(other.worst),
            compared: self.compared + other.compared,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Values bounded away from zero so a small step never crosses the kink.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

/// Conv layer: weight, bias and input gradients of `<r, conv(x)>`.
pub fn conv(rng: &mut ChaCha8Rng, kernel: usize) -> Check {
    let (c, oc, h, w) = (3, 4, 5, 6);
    let x = uniform(rng, c * h * w, -1.0, 1.0);
    let wt = uniform(rng, oc * c * kernel * kernel, -1.0, 1.0);
    let b = uniform(rng, oc, -1.0, 1.0);
    let r = uniform(rng, oc * h * w, -1.0, 1.0);
    let input = Tensor::from_vec(c, h, w, x.clone());
    let (_, cols) = conv2d_forward(&input, &wt, &b, oc, kernel);
    let g = conv2d_backward(&cols, (c, h, w), &wt, &Tensor::from_vec(oc, h, w, r.clone()), kernel, true);
    let mut check = Check::default();

    let mut f_w = |p: &[f64]| dot(&r, &conv2d_forward(&input, p, &b, oc, kernel).0.data);
    for i in 0..wt.len() {
        check.push(g.weight[i], central_diff(&mut f_w, &wt, i, STEP));
    }
    let mut f_b = |p: &[f64]| dot(&r, &conv2d_forward(&input, &wt, p, oc, kernel).0.data);
    for i in 0..b.len() {
        check.push(g.bias[i], central_diff(&mut f_b, &b, i, STEP));
    }
    let d_in = g.input.expect("input gradient requested");
    let mut f_x = |p: &[f64]| dot(&r, &conv2d_forward(&Tensor::from_vec(c, h, w, p.to_vec()), &wt, &b, oc, kernel).0.data);
    for i in 0..x.len() {
        check.push(d_in.data[i], central_diff(&mut f_x, &x, i, STEP));
    }
    check
}

pub fn relu(rng: &mut ChaCha8Rng) -> Check {
    let (c, h, w) = (2, 4, 5);
    let x = away_from_zero(rng, c * h * w);
    let r = uniform(rng, c * h * w, -1.0, 1.0);
    let out = relu_forward(&Tensor::from_vec(c, h, w, x.clone()));
    let g = relu_backward(&out, &Tensor::from_vec(c, h, w, r.clone()));
    let mut f = |p: &[f64]| dot(&r, &relu_forward(&Tensor::from_vec(c, h, w, p.to_vec())).data);
    let mut check = Check::default();
    for i in 0..x.len() {
        check.push(g.data[i], central_diff(&mut f, &x, i, STEP));
    }
    check
}

pub fn maxpool(rng: &mut ChaCha8Rng) -> Check {
    let (c, h, w) = (2, 6, 8);
    // A shuffled grid of well-separated values: no ties, and no step can
    // change which element wins a window.
    let mut x: Vec<f64> = (0..c * h * w).map(|i| i as f64 * 0.01).collect();
    rand::seq::SliceRandom::shuffle(x.as_mut_slice(), rng);
    let r = uniform(rng, c * (h / 2) * (w / 2), -1.0, 1.0);
    let (_, argmax) = maxpool2_forward(&Tensor::from_vec(c, h, w, x.clone()));
    let g = maxpool2_backward(&argmax, (c, h, w), &Tensor::from_vec(c, h / 2, w / 2, r.clone()));
    let mut f = |p: &[f64]| dot(&r, &maxpool2_forward(&Tensor::from_vec(c, h, w, p.to_vec())).0.data);
    let mut check = Check::default();
    for i in 0..x.len() {
        check.push(g.data[i], central_diff(&mut f, &x, i, STEP));
    }
    check
}

pub fn upsample(rng: &mut ChaCha8Rng, factor: usize) -> Check {
    let (c, h, w) = (2, 3, 4);
    let x = uniform(rng, c * h * w, -1.0, 1.0);
    let r = uniform(rng, c * h * w * factor * factor, -1.0, 1.0);
    let g = upsample_bilinear_backward((c, h, w), factor, &Tensor::from_vec(c, h * factor, w * factor, r.clone()));
    let mut f = |p: &[f64]| dot(&r, &upsample_bilinear_forward(&Tensor::from_vec(c, h, w, p.to_vec()), factor).data);
    let mut check = Check::default();
    for i in 0..x.len() {
        check.push(g.data[i], central_diff(&mut f, &x, i, STEP));
    }
    check
}

pub fn sigmoid(rng: &mut ChaCha8Rng) -> Check {
    let (c, h, w) = (1, 5, 5);
    let x = uniform(rng, c * h * w, -6.0, 6.0);
    let r = uniform(rng, c * h * w, -1.0, 1.0);
    let out = sigmoid_forward(&Tensor::from_vec(c, h, w, x.clone()));
    let g = sigmoid_backward(&out, &Tensor::from_vec(c, h, w, r.clone()));
    let mut f = |p: &[f64]| dot(&r, &sigmoid_forward(&Tensor::from_vec(c, h, w, p.to_vec())).data);
    let mut check = Check::default();
    for i in 0..x.len() {
        check.push(g.data[i], central_diff(&mut f, &x, i, STEP));
    }
    check
}

/// Loss gradient with respect to the prediction, on soft and hard targets.
pub fn loss(rng: &mut ChaCha8Rng) -> Check {
    let (h, w) = (6, 7);
    let p = uniform(rng, h * w, 0.05, 0.95);
    let mut t = uniform(rng, h * w, 0.0, 1.0);
    for v in t.iter_mut().step_by(3) {
        *v = if *v > 0.5 { 1.0 } else { 0.0 };
    }
    let target = Cam::new(h, w, t).unwrap();
    let (_, grad) = loss_ls_bce(&Cam::new(h, w, p.clone()).unwrap(), &target, 0.1).unwrap();
    let mut f = |q: &[f64]| loss_ls_bce(&Cam::new(h, w, q.to_vec()).unwrap(), &target, 0.1).unwrap().0;
    let mut check = Check::default();
    for (i, &g) in grad.iter().enumerate() {
        check.push(g, central_diff(&mut f, &p, i, 1e-6));
    }
    check
}

fn flat(params: &FcnParams) -> Vec<f64> {
    params
        .convs
        .iter()
        .flat_map(|t| t.weight.iter().chain(&t.bias).copied())
        .collect()
}

fn unflat(template: &FcnParams, v: &[f64]) -> FcnParams {
    let mut out = template.clone();
    let mut it = v.iter().copied();
    for t in &mut out.convs {
        for x in t.weight.iter_mut().chain(t.bias.iter_mut()) {
            *x = it.next().unwrap();
        }
    }
    out
}

/// The default network under the training loss, on `coords` random
/// parameter coordinates.
pub fn network(rng: &mut ChaCha8Rng, coords: usize) -> Check {
    let (h, w) = (16, 16);
    let params = init_params(&FcnArchitecture::desk(), rng.gen()).unwrap();
    let input = Cam::new(h, w, uniform(rng, h * w, 0.0, 1.0)).unwrap();
    let target = Cam::new(h, w, uniform(rng, h * w, 0.0, 1.0)).unwrap();
    let objective = |p: &FcnParams| {
        let (pred, _) = forward(p, &input).unwrap();
        loss_ls_bce(&pred, &target, 0.1).unwrap().0
    };
    let (pred, cache) = forward(&params, &input).unwrap();
    let (_, d_pred) = loss_ls_bce(&pred, &target, 0.1).unwrap();
    let analytic: Vec<f64> = backward(&params, &cache, &d_pred).unwrap().iter().collect();
    let x = flat(&params);
    assert_eq!(analytic.len(), x.len());
    let mut f = |v: &[f64]| objective(&unflat(&params, v));
    let mut check = Check::default();
    for i in sample(rng, x.len(), coords.min(x.len())) {
        check.push(analytic[i], central_diff(&mut f, &x, i, STEP));
    }
    check
}

/// Every layer type, merged.
pub fn all_layers(rng: &mut ChaCha8Rng) -> Check {
    conv(rng, 3)
        .merge(conv(rng, 1))
        .merge(relu(rng))
        .merge(maxpool(rng))
        .merge(upsample(rng, 2))
        .merge(upsample(rng, 4))
        .merge(sigmoid(rng))
}
