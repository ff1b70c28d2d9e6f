//! Flat-parameter building blocks shared by the ranking scorers and the
//! span classifier.

use rand::Rng;

use crate::seed::Rng as SeedRng;

/// `W1 [hidden x input] | b1 [hidden] | w2 [hidden] | b2`.
pub(crate) fn mlp_len(input: usize, hidden: usize) -> usize {
    hidden * input + 2 * hidden + 1
}

/// Xavier-uniform weights, zero biases.
pub(crate) fn mlp_init(input: usize, hidden: usize, rng: &mut SeedRng, out: &mut [f64]) {
    let a1 = (6.0 / (input + hidden) as f64).sqrt();
    let a2 = (6.0 / (hidden + 1) as f64).sqrt();
    let (w1, rest) = out.split_at_mut(hidden * input);
    let (b1, rest) = rest.split_at_mut(hidden);
    let (w2, b2) = rest.split_at_mut(hidden);
    w1.iter_mut().for_each(|w| *w = rng.random_range(-a1..a1));
    b1.iter_mut().for_each(|b| *b = 0.0);
    w2.iter_mut().for_each(|w| *w = rng.random_range(-a2..a2));
    b2[0] = 0.0;
}

/// Scalar output; fills `hidden_out` with the tanh activations.
pub(crate) fn mlp_forward(params: &[f64], input: usize, hidden: usize, x: &[f64], hidden_out: &mut Vec<f64>) -> f64 {
    let (w1, rest) = params.split_at(hidden * input);
    let (b1, rest) = rest.split_at(hidden);
    let (w2, b2) = rest.split_at(hidden);
    hidden_out.clear();
    let mut out = b2[0];
    for k in 0..hidden {
        let row = &w1[k * input..(k + 1) * input];
        let z = b1[k] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        let h = z.tanh();
        hidden_out.push(h);
        out += w2[k] * h;
    }
    out
}

/// Accumulates `dout * d out / d params` into `grad` and, when given,
/// `dout * d out / d x` into `dx`.
pub(crate) fn mlp_backward(
    params: &[f64],
    input: usize,
    hidden: usize,
    x: &[f64],
    h: &[f64],
    dout: f64,
    grad: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let w1 = &params[..hidden * input];
    let w2 = &params[hidden * input + hidden..hidden * input + 2 * hidden];
    let (gw1, rest) = grad.split_at_mut(hidden * input);
    let (gb1, rest) = rest.split_at_mut(hidden);
    let (gw2, gb2) = rest.split_at_mut(hidden);
    gb2[0] += dout;
    for k in 0..hidden {
        gw2[k] += dout * h[k];
        let delta = dout * w2[k] * (1.0 - h[k] * h[k]);
        if delta == 0.0 {
            continue;
        }
        gb1[k] += delta;
        let grow = &mut gw1[k * input..(k + 1) * input];
        for (g, v) in grow.iter_mut().zip(x) {
            *g += delta * v;
        }
        if let Some(dx) = dx.as_deref_mut() {
            let row = &w1[k * input..(k + 1) * input];
            for (d, w) in dx.iter_mut().zip(row) {
                *d += delta * w;
            }
        }
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub(crate) struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub(crate) fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub(crate) fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn softplus_stable_at_extremes() {
        assert_eq!(softplus(-1000.0), 0.0);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g = vec![2.0 * p[0], 2.0 * p[1]];
            opt.step(&mut p, &g);
        }
        assert!(p[0].abs() < 1e-2 && p[1].abs() < 1e-2, "{p:?}");
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let (input, hidden) = (3, 4);
        let mut rng = seed::rng(5);
        let mut params = vec![0.0; mlp_len(input, hidden)];
        mlp_init(input, hidden, &mut rng, &mut params);
        params[hidden * input] = 0.1; // nonzero bias
        let x = [0.3, -0.7, 1.1];
        let mut h = Vec::new();
        mlp_forward(&params, input, hidden, &x, &mut h);
        let mut grad = vec![0.0; params.len()];
        let mut dx = vec![0.0; input];
        mlp_backward(&params, input, hidden, &x, &h, 1.0, &mut grad, Some(&mut dx));
        let eps = 1e-6;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += eps;
            let up = mlp_forward(&p, input, hidden, &x, &mut h);
            p[i] -= 2.0 * eps;
            let down = mlp_forward(&p, input, hidden, &x, &mut h);
            assert!((grad[i] - (up - down) / (2.0 * eps)).abs() < 1e-7, "param {i}");
        }
        for j in 0..input {
            let mut xp = x;
            xp[j] += eps;
            let up = mlp_forward(&params, input, hidden, &xp, &mut h);
            xp[j] -= 2.0 * eps;
            let down = mlp_forward(&params, input, hidden, &xp, &mut h);
            assert!((dx[j] - (up - down) / (2.0 * eps)).abs() < 1e-7, "input {j}");
        }
    }
}
