use serde::{Deserialize, Serialize};

use super::features::{check_dims, dist_features, dot_norms, pair_features};
use super::nn::{mlp_backward, mlp_forward, mlp_init, mlp_len, sigmoid, softplus};
use crate::corpus::Span;
use crate::seed;
use crate::store::{scalar_mix, scalar_mix_backward, ScalarMixParams};
use crate::{NarbError, Result};

/// Token distances are divided by this before entering a learned head.
pub const DIST_SCALE: f64 = 100.0;
pub const DEFAULT_HIDDEN: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Cosine,
    Distance,
    Linear,
    Mlp,
    Full,
}

impl ScorerKind {
    pub fn needs_embeddings(self) -> bool {
        self != ScorerKind::Distance
    }

    pub fn needs_same_document(self) -> bool {
        matches!(self, ScorerKind::Distance | ScorerKind::Full)
    }

    pub const ALL: [ScorerKind; 5] = [
        ScorerKind::Cosine,
        ScorerKind::Distance,
        ScorerKind::Linear,
        ScorerKind::Mlp,
        ScorerKind::Full,
    ];
}

impl std::fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScorerKind::Cosine => "cosine",
            ScorerKind::Distance => "distance",
            ScorerKind::Linear => "linear",
            ScorerKind::Mlp => "mlp",
            ScorerKind::Full => "full",
        })
    }
}

impl std::str::FromStr for ScorerKind {
    type Err = NarbError;
    fn from_str(s: &str) -> Result<Self> {
        ScorerKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| NarbError::InvalidArgument(format!("unknown scorer `{s}`")))
    }
}

/// Which layer representation feeds a probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSelector {
    Single(usize),
    AllLayers,
}

impl std::fmt::Display for LayerSelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LayerSelector::Single(l) => write!(f, "layer:{l}"),
            LayerSelector::AllLayers => f.write_str("all_layers"),
        }
    }
}

impl std::str::FromStr for LayerSelector {
    type Err = NarbError;
    fn from_str(s: &str) -> Result<Self> {
        if s == "all_layers" || s == "all" {
            return Ok(LayerSelector::AllLayers);
        }
        s.strip_prefix("layer:")
            .unwrap_or(s)
            .parse()
            .map(LayerSelector::Single)
            .map_err(|_| NarbError::InvalidArgument(format!("bad layer selector `{s}`")))
    }
}

/// A span plus its representation: `d` values for a single layer, `L x d`
/// for all layers, `None` for the distance scorer.
#[derive(Debug, Clone, Copy)]
pub struct SpanInput<'a> {
    pub span: &'a Span,
    pub emb: Option<&'a [f64]>,
}

/// A ranking scorer with all trainable parameters in one flat vector:
/// the head first, then (for `all_layers`) the mix weights and scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scorer {
    pub kind: ScorerKind,
    pub dim: usize,
    pub hidden: usize,
    pub n_layers: usize,
    pub selector: LayerSelector,
    pub params: Vec<f64>,
}

impl Scorer {
    pub fn new(kind: ScorerKind, dim: usize, selector: LayerSelector, n_layers: usize, hidden: usize, seed: u64) -> Result<Self> {
        if kind.needs_embeddings() && dim == 0 {
            return Err(NarbError::Shape(format!("{kind} scorer needs dim >= 1")));
        }
        if matches!(kind, ScorerKind::Mlp | ScorerKind::Full) && hidden == 0 {
            return Err(NarbError::Shape("hidden width must be >= 1".into()));
        }
        match selector {
            LayerSelector::Single(l) if kind.needs_embeddings() && l >= n_layers => {
                return Err(NarbError::InvalidArgument(format!("layer {l} out of {n_layers}")));
            }
            _ => {}
        }
        let mut s = Scorer {
            kind,
            dim,
            hidden,
            n_layers,
            selector,
            params: Vec::new(),
        };
        s.params = vec![0.0; s.head_len() + s.mix_len()];
        let mut rng = seed::rng(seed::derive(seed, "probe-init", 0));
        let input = s.head_input();
        let head_len = s.head_len();
        if matches!(kind, ScorerKind::Mlp | ScorerKind::Full) {
            mlp_init(input, hidden, &mut rng, &mut s.params[..mlp_len(input, hidden)]);
        }
        if kind == ScorerKind::Full {
            // the network branch starts silent; scores begin as the distance skip alone
            let out = mlp_len(input, hidden) - hidden - 1;
            s.params[out..out + hidden].iter_mut().for_each(|w| *w = 0.0);
        }
        if s.mix_len() > 0 {
            s.params[head_len + n_layers] = 1.0;
        }
        Ok(s)
    }

    fn head_input(&self) -> usize {
        match self.kind {
            ScorerKind::Cosine => 0,
            ScorerKind::Distance => 2,
            ScorerKind::Linear | ScorerKind::Mlp => 4 * self.dim,
            ScorerKind::Full => 4 * self.dim + 2,
        }
    }

    fn head_len(&self) -> usize {
        match self.kind {
            ScorerKind::Cosine => 0,
            ScorerKind::Distance | ScorerKind::Linear => self.head_input(),
            ScorerKind::Mlp => mlp_len(self.head_input(), self.hidden),
            // MLP plus a linear skip from the two distance features.
            ScorerKind::Full => mlp_len(self.head_input(), self.hidden) + 2,
        }
    }

    fn mix_len(&self) -> usize {
        if self.kind.needs_embeddings() && self.selector == LayerSelector::AllLayers {
            self.n_layers + 1
        } else {
            0
        }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn mix(&self) -> Option<ScalarMixParams> {
        (self.mix_len() > 0).then(|| {
            let at = self.head_len();
            ScalarMixParams {
                raw_weights: self.params[at..at + self.n_layers].to_vec(),
                gamma: self.params[at + self.n_layers],
            }
        })
    }

    /// Softmax layer weights of the mixture, when present.
    pub fn mix_weights(&self) -> Option<Vec<f64>> {
        self.mix().map(|m| m.weights())
    }

    /// Width of the representation this scorer expects per span.
    pub fn input_width(&self) -> usize {
        match (self.kind.needs_embeddings(), self.selector) {
            (false, _) => 0,
            (true, LayerSelector::Single(_)) => self.dim,
            (true, LayerSelector::AllLayers) => self.n_layers * self.dim,
        }
    }

    fn represent(&self, input: &SpanInput, mix: &Option<ScalarMixParams>) -> Result<Vec<f64>> {
        if !self.kind.needs_embeddings() {
            return Ok(Vec::new());
        }
        let emb = input
            .emb
            .ok_or_else(|| NarbError::MissingKey(input.span.key()))?;
        if emb.len() != self.input_width() {
            return Err(NarbError::Shape(format!(
                "{} has {} values, scorer expects {}",
                input.span.key(),
                emb.len(),
                self.input_width()
            )));
        }
        match mix {
            Some(m) => scalar_mix(emb, m),
            None => Ok(emb.to_vec()),
        }
    }

    fn dist(&self, a: &Span, c: &Span) -> Result<[f64; 2]> {
        let [d, ad] = dist_features(a, c)?;
        Ok([d / DIST_SCALE, ad / DIST_SCALE])
    }

    fn head_score(&self, ha: &[f64], hc: &[f64], a: &Span, c: &Span, buf: &mut Vec<f64>) -> Result<f64> {
        let head = &self.params[..self.head_len()];
        let s = match self.kind {
            ScorerKind::Cosine => {
                check_dims(ha, hc)?;
                let (dot, na, nc) = dot_norms(ha, hc);
                if na == 0.0 || nc == 0.0 {
                    0.0
                } else {
                    dot / (na * nc)
                }
            }
            ScorerKind::Distance => {
                let x = self.dist(a, c)?;
                head[0] * x[0] + head[1] * x[1]
            }
            ScorerKind::Linear => pair_features(ha, hc)?.iter().zip(head).map(|(x, w)| x * w).sum(),
            ScorerKind::Mlp => mlp_forward(head, self.head_input(), self.hidden, &pair_features(ha, hc)?, buf),
            ScorerKind::Full => {
                let x = self.full_input(ha, hc, a, c)?;
                let m = mlp_len(self.head_input(), self.hidden);
                let n = x.len();
                mlp_forward(&head[..m], self.head_input(), self.hidden, &x, buf)
                    + head[m] * x[n - 2]
                    + head[m + 1] * x[n - 1]
            }
        };
        if !s.is_finite() {
            return Err(NarbError::InvalidData(format!(
                "non-finite {} score for {} vs {}",
                self.kind,
                a.key(),
                c.key()
            )));
        }
        Ok(s)
    }

    fn full_input(&self, ha: &[f64], hc: &[f64], a: &Span, c: &Span) -> Result<Vec<f64>> {
        let mut x = pair_features(ha, hc)?;
        x.extend_from_slice(&self.dist(a, c)?);
        Ok(x)
    }

    /// Accumulates `ds * ds/dhead` into `grad` and `ds * ds/dh` into `dha`/`dhc`.
    #[allow(clippy::too_many_arguments)]
    fn head_backward(
        &self,
        ha: &[f64],
        hc: &[f64],
        a: &Span,
        c: &Span,
        ds: f64,
        grad: &mut [f64],
        dha: &mut [f64],
        dhc: &mut [f64],
        buf: &mut Vec<f64>,
    ) -> Result<()> {
        let head_len = self.head_len();
        let head = &self.params[..head_len];
        let d = self.dim;
        let mut dphi = vec![0.0; if self.kind.needs_embeddings() { 4 * d } else { 0 }];
        match self.kind {
            ScorerKind::Cosine => {
                let (dot, na, nc) = dot_norms(ha, hc);
                if na > 0.0 && nc > 0.0 {
                    let cos = dot / (na * nc);
                    for j in 0..d {
                        dha[j] += ds * (hc[j] / (na * nc) - cos * ha[j] / (na * na));
                        dhc[j] += ds * (ha[j] / (na * nc) - cos * hc[j] / (nc * nc));
                    }
                }
                return Ok(());
            }
            ScorerKind::Distance => {
                let x = self.dist(a, c)?;
                grad[0] += ds * x[0];
                grad[1] += ds * x[1];
                return Ok(());
            }
            ScorerKind::Linear => {
                let phi = pair_features(ha, hc)?;
                for (g, x) in grad[..head_len].iter_mut().zip(&phi) {
                    *g += ds * x;
                }
                for (dp, w) in dphi.iter_mut().zip(head) {
                    *dp = ds * w;
                }
            }
            ScorerKind::Mlp => {
                let phi = pair_features(ha, hc)?;
                mlp_forward(head, self.head_input(), self.hidden, &phi, buf);
                mlp_backward(head, self.head_input(), self.hidden, &phi, buf, ds, &mut grad[..head_len], Some(&mut dphi));
            }
            ScorerKind::Full => {
                let x = self.full_input(ha, hc, a, c)?;
                let mut dx = vec![0.0; x.len()];
                let m = mlp_len(self.head_input(), self.hidden);
                let n = x.len();
                mlp_forward(&head[..m], self.head_input(), self.hidden, &x, buf);
                mlp_backward(&head[..m], self.head_input(), self.hidden, &x, buf, ds, &mut grad[..m], Some(&mut dx));
                grad[m] += ds * x[n - 2];
                grad[m + 1] += ds * x[n - 1];
                dphi.copy_from_slice(&dx[..4 * d]);
            }
        }
        // Through [a; c; |a - c|; a * c].
        for j in 0..d {
            let sign = if ha[j] == hc[j] { 0.0 } else { (ha[j] - hc[j]).signum() };
            dha[j] += dphi[j] + sign * dphi[2 * d + j] + hc[j] * dphi[3 * d + j];
            dhc[j] += dphi[d + j] - sign * dphi[2 * d + j] + ha[j] * dphi[3 * d + j];
        }
        Ok(())
    }

    pub fn score(&self, anchor: &SpanInput, cand: &SpanInput) -> Result<f64> {
        Ok(self.score_candidates(anchor, std::slice::from_ref(cand))?[0])
    }

    /// Scores every candidate against one anchor.
    pub fn score_candidates(&self, anchor: &SpanInput, cands: &[SpanInput]) -> Result<Vec<f64>> {
        let mix = self.mix();
        let ha = self.represent(anchor, &mix)?;
        let mut buf = Vec::new();
        cands
            .iter()
            .map(|c| {
                let hc = self.represent(c, &mix)?;
                self.head_score(&ha, &hc, anchor.span, c.span, &mut buf)
            })
            .collect()
    }

    /// Summed pairwise loss over every (positive, negative) pair of one
    /// pool, and the number of pairs. With `grad`, accumulates the gradient
    /// of the summed loss.
    pub fn pool_loss(&self, anchor: &SpanInput, cands: &[SpanInput], labels: &[bool], grad: Option<&mut [f64]>) -> Result<(f64, usize)> {
        if cands.len() != labels.len() {
            return Err(NarbError::Shape(format!("{} candidates, {} labels", cands.len(), labels.len())));
        }
        let mix = self.mix();
        let ha = self.represent(anchor, &mix)?;
        let hcs: Vec<Vec<f64>> = cands.iter().map(|c| self.represent(c, &mix)).collect::<Result<_>>()?;
        let mut buf = Vec::new();
        let scores: Vec<f64> = hcs
            .iter()
            .zip(cands)
            .map(|(hc, c)| self.head_score(&ha, hc, anchor.span, c.span, &mut buf))
            .collect::<Result<_>>()?;
        let mut coef = vec![0.0; scores.len()];
        let mut loss = 0.0;
        let mut pairs = 0;
        for (p, _) in labels.iter().enumerate().filter(|(_, &l)| l) {
            for (n, _) in labels.iter().enumerate().filter(|(_, &l)| !l) {
                let margin = scores[p] - scores[n];
                loss += softplus(-margin);
                let g = sigmoid(-margin);
                coef[p] -= g;
                coef[n] += g;
                pairs += 1;
            }
        }
        let Some(grad) = grad else {
            return Ok((loss, pairs));
        };
        if grad.len() != self.params.len() {
            return Err(NarbError::Shape(format!("gradient of {} for {} params", grad.len(), self.params.len())));
        }
        let width = ha.len();
        let mut dha = vec![0.0; width];
        let mut dhc = vec![0.0; width];
        let head_len = self.head_len();
        let mix_grad_from = |emb: Option<&[f64]>, dh: &[f64], grad: &mut [f64]| -> Result<()> {
            if let (Some(m), Some(emb)) = (&mix, emb) {
                let (draw, dgamma) = scalar_mix_backward(emb, m, dh)?;
                for (g, v) in grad[head_len..head_len + self.n_layers].iter_mut().zip(draw) {
                    *g += v;
                }
                grad[head_len + self.n_layers] += dgamma;
            }
            Ok(())
        };
        for ((hc, c), &k) in hcs.iter().zip(cands).zip(&coef) {
            if k == 0.0 {
                continue;
            }
            dhc.iter_mut().for_each(|v| *v = 0.0);
            self.head_backward(&ha, hc, anchor.span, c.span, k, grad, &mut dha, &mut dhc, &mut buf)?;
            mix_grad_from(c.emb, &dhc, grad)?;
        }
        mix_grad_from(anchor.emb, &dha, grad)?;
        Ok((loss, pairs))
    }
}

/// `-ln sigmoid(s_pos - s_neg)`.
pub fn pairwise_loss(s_pos: f64, s_neg: f64) -> f64 {
    softplus(s_neg - s_pos)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        assert!((pairwise_loss(1.3, 1.3) - 2f64.ln()).abs() < 1e-12);
        assert!((pairwise_loss(3f64.ln(), 0.0) - 0.28768).abs() < 1e-5);
        assert!(pairwise_loss(1e6, 0.0) < 1e-300);
        assert!(pairwise_loss(0.0, 1e6).is_finite());
    }

    #[test]
    fn selector_parse_round_trip() {
        for s in [LayerSelector::Single(3), LayerSelector::AllLayers] {
            assert_eq!(s.to_string().parse::<LayerSelector>().unwrap(), s);
        }
        assert_eq!("7".parse::<LayerSelector>().unwrap(), LayerSelector::Single(7));
        assert!("x".parse::<LayerSelector>().is_err());
        for k in ScorerKind::ALL {
            assert_eq!(k.to_string().parse::<ScorerKind>().unwrap(), k);
        }
    }

    #[test]
    fn parameter_shapes() {
        let sel = LayerSelector::Single(0);
        assert_eq!(Scorer::new(ScorerKind::Cosine, 4, sel, 1, 8, 0).unwrap().n_params(), 0);
        assert_eq!(Scorer::new(ScorerKind::Distance, 0, sel, 1, 8, 0).unwrap().n_params(), 2);
        assert_eq!(Scorer::new(ScorerKind::Linear, 4, sel, 1, 8, 0).unwrap().n_params(), 16);
        assert_eq!(Scorer::new(ScorerKind::Mlp, 4, sel, 1, 8, 0).unwrap().n_params(), 8 * 16 + 17);
        assert_eq!(Scorer::new(ScorerKind::Full, 4, sel, 1, 8, 0).unwrap().n_params(), 8 * 18 + 17 + 2);
        let mixed = Scorer::new(ScorerKind::Linear, 4, LayerSelector::AllLayers, 3, 8, 0).unwrap();
        assert_eq!(mixed.n_params(), 16 + 4);
        assert_eq!(mixed.mix_weights().unwrap(), vec![1.0 / 3.0; 3]);
        assert!(Scorer::new(ScorerKind::Linear, 4, LayerSelector::Single(2), 2, 8, 0).is_err());
    }

    #[test]
    fn cosine_ranks_duplicate_above_orthogonal() {
        let s = Scorer::new(ScorerKind::Cosine, 2, LayerSelector::Single(0), 1, 1, 0).unwrap();
        let a = Span::new("d", 0, 1).unwrap();
        let c1 = Span::new("d", 1, 2).unwrap();
        let c2 = Span::new("d", 2, 3).unwrap();
        let anchor = SpanInput { span: &a, emb: Some(&[1.0, 0.0]) };
        let scores = s
            .score_candidates(
                &anchor,
                &[SpanInput { span: &c1, emb: Some(&[0.0, 1.0]) }, SpanInput { span: &c2, emb: Some(&[2.0, 0.0]) }],
            )
            .unwrap();
        assert_eq!(scores, [0.0, 1.0]);
    }

    #[test]
    fn missing_embedding_names_key() {
        let s = Scorer::new(ScorerKind::Linear, 2, LayerSelector::Single(0), 1, 1, 0).unwrap();
        let a = Span::new("doc", 4, 6).unwrap();
        let err = s.score(&SpanInput { span: &a, emb: None }, &SpanInput { span: &a, emb: Some(&[1.0, 0.0]) });
        assert!(err.unwrap_err().to_string().contains("doc:4:6"));
    }
}
