//! Reference occupancy losses and codebook quantization.
//!
//! These are verification routines, not training code: binary IoU, the
//! numerically stable binary cross entropy, the Lovász hinge (the convex
//! Jaccard surrogate) with its analytic gradient, and nearest-neighbor
//! vector quantization with a commitment loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights of the combined tokenizer objective.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_c: f64,
    pub lambda_l: f64,
    pub lambda_vq: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_c: 1.0,
            lambda_l: 1.0,
            lambda_vq: 1.0,
        }
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension { expected: a, got: b });
    }
    Ok(())
}

/// Binary intersection-over-union; 1 when both grids are empty.
pub fn iou(pred: &[bool], gt: &[bool]) -> Result<f64> {
    check_len(pred.len(), gt.len())?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &g) in pred.iter().zip(gt) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Mean binary cross entropy over logits, in the log-sum-exp form that
/// never evaluates log(0): max(o, 0) - o*y + ln(1 + exp(-|o|)).
pub fn bce(logits: &[f64], gt: &[bool]) -> Result<f64> {
    check_len(logits.len(), gt.len())?;
    if logits.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = logits
        .iter()
        .zip(gt)
        .map(|(&o, &y)| o.max(0.0) - o * (y as u8 as f64) + (-o.abs()).exp().ln_1p())
        .sum();
    Ok(sum / logits.len() as f64)
}

/// Lovász hinge on signed labels (2y - 1) with its analytic gradient.
///
/// Hinge errors e_i = 1 - o_i * s_i are sorted descending (ties by index);
/// the coefficients are the discrete derivative of the Jaccard loss along
/// that order, and the loss is sum(max(0, e) * g). The gradient treats the
/// sort permutation as locally constant and is zero at non-positive
/// errors. A grid with no positive label yields loss 0 by convention.
pub fn lovasz_hinge(logits: &[f64], gt: &[bool]) -> Result<(f64, Vec<f64>)> {
    check_len(logits.len(), gt.len())?;
    let n = logits.len();
    let positives = gt.iter().filter(|&&y| y).count();
    if positives == 0 {
        return Ok((0.0, vec![0.0; n]));
    }

    let signs: Vec<f64> = gt.iter().map(|&y| if y { 1.0 } else { -1.0 }).collect();
    let errors: Vec<f64> = logits
        .iter()
        .zip(&signs)
        .map(|(&o, &s)| 1.0 - o * s)
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort: equal errors keep ascending original index.
    order.sort_by(|&a, &b| errors[b].total_cmp(&errors[a]));

    let mut intersection = positives as f64;
    let mut union = positives as f64;
    let mut prev_jaccard = 0.0;
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for &idx in &order {
        if gt[idx] {
            intersection -= 1.0;
        } else {
            union += 1.0;
        }
        let jaccard = 1.0 - intersection / union;
        let coeff = jaccard - prev_jaccard;
        prev_jaccard = jaccard;

        let e = errors[idx];
        if e > 0.0 {
            loss += e * coeff;
            grad[idx] = -signs[idx] * coeff;
        }
    }
    Ok((loss, grad))
}

/// lambda_c * L_c + lambda_l * L_l + lambda_vq * L_vq.
pub fn tokenizer_loss(bce_val: f64, lovasz_val: f64, vq_val: f64, w: &LossWeights) -> f64 {
    w.lambda_c * bce_val + w.lambda_l * lovasz_val + w.lambda_vq * vq_val
}

/// Codebook of equal-dimension entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Codebook {
    entries: Vec<Vec<f64>>,
}

impl Codebook {
    pub fn new(entries: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = entries.first() else {
            return Err(Error::Domain("codebook must be non-empty".into()));
        };
        let dim = first.len();
        if entries.iter().any(|e| e.len() != dim) {
            return Err(Error::Domain("codebook entries differ in dimension".into()));
        }
        Ok(Self { entries })
    }

    pub fn dim(&self) -> usize {
        self.entries[0].len()
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Maps each vector to its nearest codebook entry (Euclidean, ties to the
/// lower index) and returns indices, quantized vectors, and the mean
/// squared distance as the commitment loss.
pub fn vq_quantize(
    vectors: &[Vec<f64>],
    codebook: &Codebook,
) -> Result<(Vec<usize>, Vec<Vec<f64>>, f64)> {
    let dim = codebook.dim();
    let mut indices = Vec::with_capacity(vectors.len());
    let mut quantized = Vec::with_capacity(vectors.len());
    let mut total = 0.0;
    for v in vectors {
        check_len(dim, v.len())?;
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, e) in codebook.entries.iter().enumerate() {
            let d = sq_dist(v, e);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        total += best_d;
        indices.push(best);
        quantized.push(codebook.entries[best].clone());
    }
    let commitment = if vectors.is_empty() {
        0.0
    } else {
        total / vectors.len() as f64
    };
    Ok((indices, quantized, commitment))
}
