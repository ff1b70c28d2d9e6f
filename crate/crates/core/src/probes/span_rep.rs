use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{mlp_backward, mlp_forward, mlp_init, mlp_len, sigmoid, softplus, Adam};
use super::DEFAULT_HIDDEN;
use crate::corpus::Span;
use crate::metrics::{classification_metrics, ClassMetrics};
use crate::pools::AuxInstance;
use crate::seed;
use crate::store::{EmbedStore, Pooling, SpanEmbedding, StoreMeta};
use crate::{NarbError, Result};

/// Token-level rows of one layer per span (`span.len() x d`).
#[derive(Debug, Clone)]
pub struct TokenEmbeddings {
    pub layer: usize,
    pub dim: usize,
    rows: HashMap<Span, Vec<f64>>,
}

impl TokenEmbeddings {
    pub fn from_records(meta: &StoreMeta, records: impl IntoIterator<Item = SpanEmbedding>, layer: usize) -> Result<Self> {
        if meta.pooling != Pooling::Tokens {
            return Err(NarbError::InvalidArgument("span classifiers need a token-level store".into()));
        }
        if layer >= meta.n_layers {
            return Err(NarbError::InvalidArgument(format!("layer {layer} out of {}", meta.n_layers)));
        }
        let mut rows = HashMap::new();
        for rec in records {
            let n = meta.rows(&rec.span);
            let mut v = Vec::with_capacity(n * meta.dim);
            for r in 0..n {
                let row = rec.row(meta, layer, r);
                if row.iter().any(|x| !x.is_finite()) {
                    return Err(NarbError::NonFinite { layer, key: rec.span.key() });
                }
                v.extend(row.iter().map(|&x| x as f64));
            }
            rows.insert(rec.span, v);
        }
        Ok(TokenEmbeddings { layer, dim: meta.dim, rows })
    }

    pub fn from_store<'a>(store: &EmbedStore, spans: impl IntoIterator<Item = &'a Span>, layer: usize) -> Result<Self> {
        let mut wanted: Vec<&Span> = spans.into_iter().collect();
        wanted.sort();
        wanted.dedup();
        let records = wanted.into_iter().map(|s| store.get(s)).collect::<Result<Vec<_>>>()?;
        Self::from_records(store.meta(), records, layer)
    }

    pub fn get(&self, span: &Span) -> Result<&[f64]> {
        self.rows
            .get(span)
            .map(Vec::as_slice)
            .ok_or_else(|| NarbError::MissingKey(span.key()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Logreg,
    Mlp,
}

impl std::str::FromStr for HeadKind {
    type Err = NarbError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logreg" => Ok(HeadKind::Logreg),
            "mlp" => Ok(HeadKind::Mlp),
            _ => Err(NarbError::InvalidArgument(format!("unknown head `{s}`"))),
        }
    }
}

/// Linear projection, attention pooling over the span window and a binary
/// head. Parameters: `W [p x d] | b [p] | u [p] | head`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanRepModel {
    pub dim: usize,
    pub proj: usize,
    pub pair: bool,
    pub head: HeadKind,
    pub hidden: usize,
    pub params: Vec<f64>,
}

struct RepCache {
    z: Vec<f64>,
    alpha: Vec<f64>,
    h: Vec<f64>,
}

impl SpanRepModel {
    pub fn new(dim: usize, proj: usize, pair: bool, head: HeadKind, hidden: usize, seed: u64) -> Result<Self> {
        if dim == 0 || proj == 0 || (head == HeadKind::Mlp && hidden == 0) {
            return Err(NarbError::Shape(format!("dim={dim} proj={proj} hidden={hidden}")));
        }
        let mut m = SpanRepModel {
            dim,
            proj,
            pair,
            head,
            hidden,
            params: Vec::new(),
        };
        m.params = vec![0.0; m.rep_len() + m.head_len()];
        let mut rng = seed::rng(seed::derive(seed, "span-classifier-init", 0));
        let a = (6.0 / (dim + proj) as f64).sqrt();
        for w in &mut m.params[..proj * dim] {
            *w = rng.random_range(-a..a);
        }
        let u_at = proj * dim + proj;
        let au = (1.0 / proj as f64).sqrt();
        for w in &mut m.params[u_at..u_at + proj] {
            *w = rng.random_range(-au..au);
        }
        if head == HeadKind::Mlp {
            let (input, hidden, at) = (m.head_input(), m.hidden, m.rep_len());
            mlp_init(input, hidden, &mut rng, &mut m.params[at..]);
        }
        Ok(m)
    }

    fn rep_len(&self) -> usize {
        self.proj * self.dim + 2 * self.proj
    }

    fn head_input(&self) -> usize {
        if self.pair {
            2 * self.proj
        } else {
            self.proj
        }
    }

    fn head_len(&self) -> usize {
        match self.head {
            HeadKind::Logreg => self.head_input() + 1,
            HeadKind::Mlp => mlp_len(self.head_input(), self.hidden),
        }
    }

    fn rep_forward(&self, window: &[f64]) -> Result<RepCache> {
        let (d, p) = (self.dim, self.proj);
        if window.is_empty() || window.len() % d != 0 {
            return Err(NarbError::InvalidArgument(format!(
                "span window of {} values is empty or not a multiple of {d}",
                window.len()
            )));
        }
        let w = &self.params[..p * d];
        let b = &self.params[p * d..p * d + p];
        let u = &self.params[p * d + p..p * d + 2 * p];
        let n = window.len() / d;
        let mut z = Vec::with_capacity(n * p);
        let mut scores = Vec::with_capacity(n);
        for x in window.chunks_exact(d) {
            let start = z.len();
            for k in 0..p {
                z.push(b[k] + w[k * d..(k + 1) * d].iter().zip(x).map(|(a, v)| a * v).sum::<f64>());
            }
            scores.push(z[start..].iter().zip(u).map(|(a, v)| a * v).sum::<f64>());
        }
        let alpha = crate::store::softmax(&scores);
        let mut h = vec![0.0; p];
        for (zt, a) in z.chunks_exact(p).zip(&alpha) {
            for (hk, zk) in h.iter_mut().zip(zt) {
                *hk += a * zk;
            }
        }
        Ok(RepCache { z, alpha, h })
    }

    fn rep_backward(&self, window: &[f64], cache: &RepCache, g: &[f64], grad: &mut [f64]) {
        let (d, p) = (self.dim, self.proj);
        let u = &self.params[p * d + p..p * d + 2 * p];
        let q: Vec<f64> = cache.z.chunks_exact(p).map(|zt| zt.iter().zip(g).map(|(a, b)| a * b).sum()).collect();
        let qbar: f64 = q.iter().zip(&cache.alpha).map(|(a, b)| a * b).sum();
        let (gw, rest) = grad.split_at_mut(p * d);
        let (gb, rest) = rest.split_at_mut(p);
        let gu = &mut rest[..p];
        for (t, (x, zt)) in window.chunks_exact(d).zip(cache.z.chunks_exact(p)).enumerate() {
            let a = cache.alpha[t];
            let de = a * (q[t] - qbar);
            for k in 0..p {
                gu[k] += de * zt[k];
                let dz = a * g[k] + de * u[k];
                gb[k] += dz;
                for (gwk, v) in gw[k * d..(k + 1) * d].iter_mut().zip(x) {
                    *gwk += dz * v;
                }
            }
        }
    }

    /// Attention-pooled `p`-vector for the token rows of one span window.
    pub fn span_representation(&self, window: &[f64]) -> Result<Vec<f64>> {
        Ok(self.rep_forward(window)?.h)
    }

    fn head_forward(&self, x: &[f64], buf: &mut Vec<f64>) -> f64 {
        let head = &self.params[self.rep_len()..];
        match self.head {
            HeadKind::Logreg => head[self.head_input()] + head.iter().zip(x).map(|(w, v)| w * v).sum::<f64>(),
            HeadKind::Mlp => mlp_forward(head, self.head_input(), self.hidden, x, buf),
        }
    }

    fn windows<'a>(&self, inst: &AuxInstance, tokens: &'a TokenEmbeddings) -> Result<Vec<&'a [f64]>> {
        let mut w = vec![tokens.get(&inst.span_1)?];
        match (&inst.span_2, self.pair) {
            (Some(s2), true) => w.push(tokens.get(s2)?),
            (None, false) => {}
            _ => {
                return Err(NarbError::InvalidArgument(format!(
                    "instance at {} does not match a {} model",
                    inst.span_1.key(),
                    if self.pair { "pair" } else { "single-span" }
                )))
            }
        }
        Ok(w)
    }

    /// Logit of the positive class.
    pub fn logit(&self, inst: &AuxInstance, tokens: &TokenEmbeddings) -> Result<f64> {
        let mut x = Vec::with_capacity(self.head_input());
        for w in self.windows(inst, tokens)? {
            x.extend(self.rep_forward(w)?.h);
        }
        Ok(self.head_forward(&x, &mut Vec::new()))
    }

    pub fn predict(&self, inst: &AuxInstance, tokens: &TokenEmbeddings) -> Result<f64> {
        Ok(sigmoid(self.logit(inst, tokens)?))
    }

    /// Binary cross-entropy of one instance; accumulates its gradient.
    pub fn instance_loss(&self, inst: &AuxInstance, tokens: &TokenEmbeddings, grad: Option<&mut [f64]>) -> Result<f64> {
        let windows = self.windows(inst, tokens)?;
        let caches = windows.iter().map(|w| self.rep_forward(w)).collect::<Result<Vec<_>>>()?;
        let x: Vec<f64> = caches.iter().flat_map(|c| c.h.iter().copied()).collect();
        let mut buf = Vec::new();
        let logit = self.head_forward(&x, &mut buf);
        let y = if inst.label { 1.0 } else { 0.0 };
        let loss = if inst.label { softplus(-logit) } else { softplus(logit) };
        let Some(grad) = grad else { return Ok(loss) };
        let dlogit = sigmoid(logit) - y;
        let rep_len = self.rep_len();
        let (grep, ghead) = grad.split_at_mut(rep_len);
        let head = &self.params[rep_len..];
        let mut dx = vec![0.0; x.len()];
        match self.head {
            HeadKind::Logreg => {
                let n = self.head_input();
                for j in 0..n {
                    ghead[j] += dlogit * x[j];
                    dx[j] = dlogit * head[j];
                }
                ghead[n] += dlogit;
            }
            HeadKind::Mlp => mlp_backward(head, self.head_input(), self.hidden, &x, &buf, dlogit, ghead, Some(&mut dx)),
        }
        for (i, (w, c)) in windows.iter().zip(&caches).enumerate() {
            self.rep_backward(w, c, &dx[i * self.proj..(i + 1) * self.proj], grep);
        }
        Ok(loss)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanClassifierConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub proj: usize,
    pub hidden: usize,
}

impl Default for SpanClassifierConfig {
    fn default() -> Self {
        SpanClassifierConfig {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 32,
            patience: 5,
            seed: 0,
            proj: DEFAULT_HIDDEN,
            hidden: DEFAULT_HIDDEN,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedSpanClassifier {
    pub model: SpanRepModel,
    pub best_epoch: usize,
    pub best_val_f1: Option<f64>,
}

/// Binary cross-entropy training with early stopping on validation F1.
pub fn train_span_classifier(
    train: &[AuxInstance],
    val: &[AuxInstance],
    tokens: &TokenEmbeddings,
    head: HeadKind,
    config: &SpanClassifierConfig,
) -> Result<TrainedSpanClassifier> {
    let n_pos = train.iter().filter(|i| i.label).count();
    if n_pos == 0 || n_pos == train.len() {
        return Err(NarbError::InvalidData("span classifier training set has a single class".into()));
    }
    if config.batch_size == 0 || config.epochs == 0 || !(config.learning_rate > 0.0) {
        return Err(NarbError::InvalidArgument("bad span classifier config".into()));
    }
    let pair = train[0].task.is_pair();
    let mut model = SpanRepModel::new(tokens.dim, config.proj, pair, head, config.hidden, config.seed)?;
    let mut opt = Adam::new(model.params.len(), config.learning_rate);
    let mut grad = vec![0.0; model.params.len()];
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut since_best = 0;
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seed::rng(seed::derive(config.seed, "span-classifier-epoch", epoch as u64)));
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                total += model.instance_loss(&train[i], tokens, Some(&mut grad))?;
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            opt.step(&mut model.params, &grad);
        }
        let loss = total / train.len() as f64;
        if !loss.is_finite() {
            return Err(NarbError::Divergence { epoch, loss });
        }
        let f1 = if val.is_empty() {
            None
        } else {
            Some(evaluate_span_classifier(&model, val, tokens)?.f1)
        };
        let score = f1.unwrap_or(f64::NEG_INFINITY);
        match &best {
            Some((b, _, _)) if score <= *b && f1.is_some() => {
                since_best += 1;
                if since_best >= config.patience {
                    break;
                }
            }
            _ => {
                best = Some((score, epoch, model.params.clone()));
                since_best = 0;
            }
        }
    }
    let (score, best_epoch, params) = best.expect("at least one epoch");
    model.params = params;
    Ok(TrainedSpanClassifier {
        model,
        best_epoch,
        best_val_f1: score.is_finite().then_some(score),
    })
}

/// F1 / accuracy at probability 0.5, and AUROC.
pub fn evaluate_span_classifier(model: &SpanRepModel, instances: &[AuxInstance], tokens: &TokenEmbeddings) -> Result<ClassMetrics> {
    let probs = instances.iter().map(|i| model.predict(i, tokens)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<bool> = instances.iter().map(|i| i.label).collect();
    classification_metrics(&probs, &labels, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pools::AuxTask;

    fn model(d: usize, p: usize) -> SpanRepModel {
        SpanRepModel::new(d, p, false, HeadKind::Logreg, 4, 1).unwrap()
    }

    fn project(m: &SpanRepModel, x: &[f64]) -> Vec<f64> {
        let (d, p) = (m.dim, m.proj);
        (0..p)
            .map(|k| m.params[p * d + k] + (0..d).map(|j| m.params[k * d + j] * x[j]).sum::<f64>())
            .collect()
    }

    #[test]
    fn single_token_is_its_projection() {
        let m = model(3, 2);
        let x = [0.5, -1.0, 2.0];
        let h = m.span_representation(&x).unwrap();
        for (a, b) in h.iter().zip(project(&m, &x)) {
            assert!((a - b).abs() < 1e-12);
        }
        let twice = m.span_representation(&[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]).unwrap();
        for (a, b) in h.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_attention_vector_gives_mean_of_projections() {
        let mut m = model(2, 2);
        let at = 2 * 2 + 2;
        m.params[at..at + 2].iter_mut().for_each(|u| *u = 0.0);
        let (t1, t2) = ([1.0, 0.0], [0.0, 3.0]);
        let h = m.span_representation(&[1.0, 0.0, 0.0, 3.0]).unwrap();
        let (p1, p2) = (project(&m, &t1), project(&m, &t2));
        for k in 0..2 {
            assert!((h[k] - (p1[k] + p2[k]) / 2.0).abs() < 1e-12);
        }
        assert!(m.span_representation(&[]).is_err());
    }

    fn store_fixture(n: usize, d: usize, signal: bool) -> (TokenEmbeddings, Vec<AuxInstance>) {
        let mut rng = seed::rng(17);
        let meta = StoreMeta::new("synthetic", 1, d, Pooling::Tokens);
        let mut recs = Vec::new();
        let mut inst = Vec::new();
        for i in 0..n {
            let span = Span::new(format!("doc{i}"), 0, 2).unwrap();
            let label = i % 2 == 0;
            let values: Vec<f32> = (0..2 * d)
                .map(|j| {
                    let base: f32 = rng.random_range(-1.0..1.0);
                    if signal && j % d == 0 {
                        if label { 2.0 } else { -2.0 }
                    } else {
                        base
                    }
                })
                .collect();
            recs.push(SpanEmbedding { span: span.clone(), values });
            inst.push(AuxInstance {
                task: AuxTask::Event,
                span_1: span,
                span_2: None,
                label,
            });
        }
        (TokenEmbeddings::from_records(&meta, recs, 0).unwrap(), inst)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (tokens, inst) = store_fixture(2, 3, true);
        for head in [HeadKind::Logreg, HeadKind::Mlp] {
            let mut m = SpanRepModel::new(3, 4, false, head, 3, 2).unwrap();
            let mut grad = vec![0.0; m.params.len()];
            m.instance_loss(&inst[1], &tokens, Some(&mut grad)).unwrap();
            for i in 0..m.params.len() {
                let orig = m.params[i];
                m.params[i] = orig + 1e-6;
                let up = m.instance_loss(&inst[1], &tokens, None).unwrap();
                m.params[i] = orig - 1e-6;
                let down = m.instance_loss(&inst[1], &tokens, None).unwrap();
                m.params[i] = orig;
                let fd = (up - down) / 2e-6;
                assert!((grad[i] - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "{head:?} param {i}: {} vs {fd}", grad[i]);
            }
        }
    }

    #[test]
    fn separable_spans_reach_full_train_f1() {
        let (tokens, inst) = store_fixture(40, 4, true);
        let cfg = SpanClassifierConfig {
            learning_rate: 0.01,
            epochs: 40,
            batch_size: 8,
            proj: 8,
            hidden: 8,
            ..SpanClassifierConfig::default()
        };
        let out = train_span_classifier(&inst, &[], &tokens, HeadKind::Logreg, &cfg).unwrap();
        assert_eq!(evaluate_span_classifier(&out.model, &inst, &tokens).unwrap().f1, 1.0);
    }

    #[test]
    fn single_class_is_error() {
        let (tokens, mut inst) = store_fixture(4, 2, true);
        inst.iter_mut().for_each(|i| i.label = true);
        let cfg = SpanClassifierConfig::default();
        assert!(train_span_classifier(&inst, &[], &tokens, HeadKind::Logreg, &cfg).is_err());
    }
}
