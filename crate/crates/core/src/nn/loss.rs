use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit. Returns (loss, d loss / d logit).
pub fn bce_with_logits(z: f64, y: f64) -> (f64, f64) {
    let loss = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    (loss, sigmoid(z) - y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeLoss {
    pub loss: f64,
    pub d_queries: Array2<f64>,
    pub d_prototypes: Array2<f64>,
}

/// Mean cross-entropy of softmax(-squared distance) over prototypes.
pub fn prototype_loss(
    queries: ArrayView2<'_, f64>,
    labels: &[usize],
    prototypes: ArrayView2<'_, f64>,
) -> Result<PrototypeLoss> {
    let (nq, d) = queries.dim();
    let k = prototypes.nrows();
    if labels.len() != nq || prototypes.ncols() != d {
        return Err(Error::shape("prototype loss: inconsistent shapes"));
    }
    if nq == 0 || k == 0 {
        return Err(Error::invalid("prototype loss needs queries and prototypes"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::invalid(format!("label {bad} out of range for {k} prototypes")));
    }
    let mut loss = 0.0;
    let mut dq = Array2::zeros((nq, d));
    let mut dp = Array2::zeros((k, d));
    let mut logits = vec![0.0; k];
    for (qi, q) in queries.rows().into_iter().enumerate() {
        for (j, p) in prototypes.rows().into_iter().enumerate() {
            logits[j] = -q.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        let lse = m + z.ln();
        loss += lse - logits[labels[qi]];
        for (j, p) in prototypes.rows().into_iter().enumerate() {
            let soft = (logits[j] - lse).exp();
            let dl = (soft - if j == labels[qi] { 1.0 } else { 0.0 }) / nq as f64;
            for c in 0..d {
                let diff = q[c] - p[c];
                dq[[qi, c]] -= 2.0 * dl * diff;
                dp[[j, c]] += 2.0 * dl * diff;
            }
        }
    }
    Ok(PrototypeLoss {
        loss: loss / nq as f64,
        d_queries: dq,
        d_prototypes: dp,
    })
}
