use crate::corpus::Span;
use crate::{NarbError, Result};

/// `[a; c; |a - c|; a * c]`, length `4d`.
pub fn pair_features(a: &[f64], c: &[f64]) -> Result<Vec<f64>> {
    check_dims(a, c)?;
    let mut out = Vec::with_capacity(4 * a.len());
    out.extend_from_slice(a);
    out.extend_from_slice(c);
    out.extend(a.iter().zip(c).map(|(x, y)| (x - y).abs()));
    out.extend(a.iter().zip(c).map(|(x, y)| x * y));
    Ok(out)
}

/// Signed start-to-start token distance and its magnitude.
pub fn dist_features(anchor: &Span, cand: &Span) -> Result<[f64; 2]> {
    if anchor.doc_id != cand.doc_id {
        return Err(NarbError::InvalidArgument(format!(
            "distance between spans of different documents ({} vs {})",
            anchor.key(),
            cand.key()
        )));
    }
    let delta = cand.start as f64 - anchor.start as f64;
    Ok([delta, delta.abs()])
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], c: &[f64]) -> Result<f64> {
    check_dims(a, c)?;
    let (dot, na, nc) = dot_norms(a, c);
    Ok(if na == 0.0 || nc == 0.0 { 0.0 } else { dot / (na * nc) })
}

pub(crate) fn dot_norms(a: &[f64], c: &[f64]) -> (f64, f64, f64) {
    let mut dot = 0.0;
    let mut aa = 0.0;
    let mut cc = 0.0;
    for (x, y) in a.iter().zip(c) {
        dot += x * y;
        aa += x * x;
        cc += y * y;
    }
    (dot, aa.sqrt(), cc.sqrt())
}

pub(crate) fn check_dims(a: &[f64], c: &[f64]) -> Result<()> {
    if a.len() != c.len() || a.is_empty() {
        return Err(NarbError::Shape(format!("vectors of length {} and {}", a.len(), c.len())));
    }
    Ok(())
}
