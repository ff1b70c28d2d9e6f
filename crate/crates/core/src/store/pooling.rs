use super::Pooling;
use crate::{NarbError, Result};

/// Token-level hidden states of one document (or window), layer-major:
/// `data[(l * n_tokens + t) * dim + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenStates {
    pub n_layers: usize,
    pub n_tokens: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl TokenStates {
    pub fn new(n_layers: usize, n_tokens: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n_layers * n_tokens * dim {
            return Err(NarbError::Shape(format!(
                "{} values for {n_layers} x {n_tokens} x {dim}",
                data.len()
            )));
        }
        Ok(TokenStates {
            n_layers,
            n_tokens,
            dim,
            data,
        })
    }

    pub fn row(&self, layer: usize, token: usize) -> &[f32] {
        let at = (layer * self.n_tokens + token) * self.dim;
        &self.data[at..at + self.dim]
    }
}

/// Pools the token window `start..end` of every layer into one vector per
/// layer. Returns `n_layers x dim` values, layer-major.
pub fn pool_span(states: &TokenStates, start: usize, end: usize, mode: Pooling) -> Result<Vec<f32>> {
    if start >= end {
        return Err(NarbError::InvalidArgument(format!("empty span window {start}..{end}")));
    }
    if end > states.n_tokens {
        return Err(NarbError::InvalidArgument(format!(
            "window {start}..{end} exceeds {} tokens",
            states.n_tokens
        )));
    }
    let d = states.dim;
    let mut out = Vec::with_capacity(states.n_layers * d);
    for l in 0..states.n_layers {
        match mode {
            Pooling::Mean => {
                let mut acc = vec![0.0f64; d];
                for t in start..end {
                    for (a, &v) in acc.iter_mut().zip(states.row(l, t)) {
                        *a += v as f64;
                    }
                }
                let n = (end - start) as f64;
                out.extend(acc.into_iter().map(|a| (a / n) as f32));
            }
            Pooling::Max => {
                let mut acc = states.row(l, start).to_vec();
                for t in start + 1..end {
                    for (a, &v) in acc.iter_mut().zip(states.row(l, t)) {
                        *a = a.max(v);
                    }
                }
                out.extend(acc);
            }
            Pooling::LastToken => out.extend_from_slice(states.row(l, end - 1)),
            Pooling::Tokens => {
                return Err(NarbError::InvalidArgument(
                    "`tokens` keeps per-token rows; it is not a pooling reduction".into(),
                ))
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_rows() -> TokenStates {
        TokenStates::new(1, 2, 2, vec![1.0, 3.0, 3.0, 5.0]).unwrap()
    }

    #[test]
    fn mean_max_last() {
        let s = two_rows();
        assert_eq!(pool_span(&s, 0, 2, Pooling::Mean).unwrap(), [2.0, 4.0]);
        assert_eq!(pool_span(&s, 0, 2, Pooling::Max).unwrap(), [3.0, 5.0]);
        assert_eq!(pool_span(&s, 0, 2, Pooling::LastToken).unwrap(), [3.0, 5.0]);
    }

    #[test]
    fn per_layer_independence() {
        // layer 0 rows [1,3],[3,5]; layer 1 rows [0,0],[10,-10]
        let s = TokenStates::new(2, 2, 2, vec![1.0, 3.0, 3.0, 5.0, 0.0, 0.0, 10.0, -10.0]).unwrap();
        assert_eq!(pool_span(&s, 0, 2, Pooling::Mean).unwrap(), [2.0, 4.0, 5.0, -5.0]);
        assert_eq!(pool_span(&s, 0, 2, Pooling::Max).unwrap(), [3.0, 5.0, 10.0, 0.0]);
    }

    #[test]
    fn bad_windows() {
        let s = two_rows();
        assert!(pool_span(&s, 1, 1, Pooling::Mean).is_err());
        assert!(pool_span(&s, 1, 3, Pooling::Mean).is_err());
        assert!(pool_span(&s, 0, 1, Pooling::Tokens).is_err());
    }

    proptest! {
        #[test]
        fn single_token_mean_is_identity(vals in proptest::collection::vec(-100.0f32..100.0, 12), t in 0usize..4) {
            let s = TokenStates::new(1, 4, 3, vals).unwrap();
            let pooled = pool_span(&s, t, t + 1, Pooling::Mean).unwrap();
            prop_assert_eq!(pooled.as_slice(), s.row(0, t));
        }
    }
}
