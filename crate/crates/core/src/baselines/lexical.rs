use std::collections::{HashMap, HashSet};
use std::hash::Hash;

/// `|A ∩ B| / |A ∪ B|`; two empty sets are identical (1.0).
pub fn jaccard<T: Eq + Hash>(a: impl IntoIterator<Item = T>, b: impl IntoIterator<Item = T>) -> f64 {
    let a: HashSet<T> = a.into_iter().collect();
    let b: HashSet<T> = b.into_iter().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(&b).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

pub fn ngrams<T: Clone>(seq: &[T], n: usize) -> Vec<Vec<T>> {
    if seq.len() < n {
        return Vec::new();
    }
    seq.windows(n).map(<[T]>::to_vec).collect()
}

fn counts<T: Clone + Eq + Hash>(seq: &[T], n: usize) -> HashMap<Vec<T>, usize> {
    let mut m = HashMap::new();
    for g in ngrams(seq, n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

/// Sentence BLEU of `hyp` against one reference: clipped n-gram precision
/// up to 4-grams, add-one smoothing for n > 1, brevity penalty.
pub fn bleu<T: Clone + Eq + Hash>(hyp: &[T], reference: &[T]) -> f64 {
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let h = counts(hyp, n);
        let r = counts(reference, n);
        let total: usize = h.values().sum();
        let matched: usize = h.iter().map(|(g, &c)| c.min(*r.get(g).unwrap_or(&0))).sum();
        let p = if n == 1 {
            if matched == 0 {
                return 0.0;
            }
            matched as f64 / total as f64
        } else {
            (matched + 1) as f64 / (total + 1) as f64
        };
        log_sum += p.ln() / 4.0;
    }
    let (c, r) = (hyp.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * log_sum.exp()
}

/// Mean of BLEU in both directions.
pub fn symmetric_bleu<T: Clone + Eq + Hash>(a: &[T], b: &[T]) -> f64 {
    (bleu(a, b) + bleu(b, a)) / 2.0
}

/// Unit-cost Levenshtein distance.
pub fn levenshtein<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}
