use serde::{Deserialize, Serialize};

use crate::{NarbError, Result};

/// Softmax-normalized layer weights with a global scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarMixParams {
    pub raw_weights: Vec<f64>,
    pub gamma: f64,
}

impl ScalarMixParams {
    /// Uniform weights (`w = 0`), `gamma = 1`.
    pub fn new(n_layers: usize) -> Self {
        ScalarMixParams {
            raw_weights: vec![0.0; n_layers],
            gamma: 1.0,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.raw_weights.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.raw_weights)
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn check(layers: &[f64], params: &ScalarMixParams) -> Result<usize> {
    let l = params.n_layers();
    if l == 0 || layers.is_empty() || layers.len() % l != 0 {
        return Err(NarbError::Shape(format!(
            "{} layer values do not split into {l} layers",
            layers.len()
        )));
    }
    Ok(layers.len() / l)
}

/// `gamma * sum_l softmax(w)_l * layer_l` over layer-major `L x d` input.
pub fn scalar_mix(layers: &[f64], params: &ScalarMixParams) -> Result<Vec<f64>> {
    let d = check(layers, params)?;
    let w = params.weights();
    let mut out = vec![0.0; d];
    for (wl, row) in w.iter().zip(layers.chunks_exact(d)) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += wl * v;
        }
    }
    for o in &mut out {
        *o *= params.gamma;
    }
    Ok(out)
}

/// Gradients of a loss w.r.t. `(raw_weights, gamma)` given the gradient
/// w.r.t. the mixed vector.
pub fn scalar_mix_backward(layers: &[f64], params: &ScalarMixParams, grad_out: &[f64]) -> Result<(Vec<f64>, f64)> {
    let d = check(layers, params)?;
    if grad_out.len() != d {
        return Err(NarbError::Shape(format!("grad has {} values, expected {d}", grad_out.len())));
    }
    let w = params.weights();
    // g_l = <grad_out, layer_l>
    let g: Vec<f64> = layers
        .chunks_exact(d)
        .map(|row| row.iter().zip(grad_out).map(|(a, b)| a * b).sum())
        .collect();
    let mixed_dot: f64 = w.iter().zip(&g).map(|(a, b)| a * b).sum();
    let grad_gamma = mixed_dot;
    let grad_raw = w
        .iter()
        .zip(&g)
        .map(|(wk, gk)| params.gamma * wk * (gk - mixed_dot))
        .collect();
    Ok((grad_raw, grad_gamma))
}
