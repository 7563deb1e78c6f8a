//! Supervised contrastive loss over driver identities.
//!
//! For anchor `i` with positives `P(i)` (same label, excluding `i`):
//!
//! ```text
//! ℓ_i = −1/|P(i)| · Σ_{p∈P(i)} log( exp(z_ip) / Σ_{a≠i} exp(z_ia) ),   z_ia = φ_i·φ_a / τ
//! ```
//!
//! Anchors without positives are skipped. The log-sum-exp is evaluated with
//! per-anchor max subtraction.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Average over anchors that have at least one positive.
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupConConfig {
    pub temperature: f64,
    pub reduction: Reduction,
}

impl Default for SupConConfig {
    fn default() -> Self {
        Self {
            temperature: 0.07,
            reduction: Reduction::Mean,
        }
    }
}

impl SupConConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Unit-norm embeddings with one label each.
#[derive(Debug, Clone)]
pub struct LabeledBatch<L> {
    embeddings: Array2<f64>,
    labels: Vec<L>,
}

impl<L: PartialEq> LabeledBatch<L> {
    pub fn new(embeddings: Array2<f64>, labels: Vec<L>) -> Result<Self> {
        let b = embeddings.nrows();
        if b < 2 {
            return Err(Error::Data(format!("batch of {b} is too small")));
        }
        if labels.len() != b {
            return Err(Error::Shape(format!(
                "{} labels for {b} embeddings",
                labels.len()
            )));
        }
        for (i, row) in embeddings.outer_iter().enumerate() {
            let n = row.dot(&row).sqrt();
            if (n - 1.0).abs() > 1e-5 {
                return Err(Error::Data(format!("embedding {i} has norm {n}")));
            }
        }
        if !has_positive_pair(&labels) {
            return Err(Error::Data("no positive pairs".into()));
        }
        Ok(Self { embeddings, labels })
    }

    pub fn embeddings(&self) -> ArrayView2<'_, f64> {
        self.embeddings.view()
    }

    pub fn labels(&self) -> &[L] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn has_positive_pair<L: PartialEq>(labels: &[L]) -> bool {
    labels
        .iter()
        .enumerate()
        .any(|(i, a)| labels[i + 1..].iter().any(|b| a == b))
}

#[derive(Debug, Clone)]
pub struct SupConOutput {
    pub loss: f64,
    /// `∂loss/∂embeddings`, same shape as the input.
    pub grad: Array2<f64>,
    /// Anchors that had at least one positive.
    pub anchors: usize,
}

/// Loss value for a validated batch.
pub fn supcon_loss<L: PartialEq>(batch: &LabeledBatch<L>, cfg: &SupConConfig) -> Result<f64> {
    Ok(supcon_with_grad(batch.embeddings(), batch.labels(), cfg)?.loss)
}

/// Loss and analytic gradient for arbitrary (not necessarily normalised)
/// embeddings.
pub fn supcon_with_grad<L: PartialEq>(
    embeddings: ArrayView2<'_, f64>,
    labels: &[L],
    cfg: &SupConConfig,
) -> Result<SupConOutput> {
    cfg.validate()?;
    let b = embeddings.nrows();
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for {b} embeddings", labels.len())));
    }
    let tau = cfg.temperature;
    let logits = embeddings.dot(&embeddings.t()) / tau;
    let mut coeff = Array2::<f64>::zeros((b, b));
    let mut total = 0.0;
    let mut anchors = 0usize;
    for i in 0..b {
        let positives: Vec<usize> = (0..b).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        anchors += 1;
        let row = logits.row(i);
        let max = (0..b)
            .filter(|&a| a != i)
            .map(|a| row[a])
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..b).filter(|&a| a != i).map(|a| (row[a] - max).exp()).sum();
        let lse = max + sum.ln();
        let inv_p = 1.0 / positives.len() as f64;
        let mean_pos: f64 = positives.iter().map(|&p| row[p]).sum::<f64>() * inv_p;
        total += lse - mean_pos;
        for a in 0..b {
            if a != i {
                coeff[[i, a]] = (row[a] - lse).exp();
            }
        }
        for &p in &positives {
            coeff[[i, p]] -= inv_p;
        }
    }
    if anchors == 0 {
        return Err(Error::Data("no positive pairs".into()));
    }
    let scale = match cfg.reduction {
        Reduction::Mean => 1.0 / anchors as f64,
        Reduction::Sum => 1.0,
    };
    // z_ia = φ_i·φ_a/τ, so ∂/∂φ = (C + Cᵀ) Φ / τ
    let sym = &coeff + &coeff.t();
    let grad = sym.dot(&embeddings) * (scale / tau);
    Ok(SupConOutput {
        loss: total * scale,
        grad,
        anchors,
    })
}

/// Largest deviation between the analytic gradient and central finite
/// differences (step 1e-5), relative to the largest gradient magnitude.
/// When every gradient entry is below 1e-8 the absolute deviation is
/// returned instead.
pub fn supcon_grad_check<L: PartialEq>(
    batch: &LabeledBatch<L>,
    cfg: &SupConConfig,
) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let emb = batch.embeddings().to_owned();
    let analytic = supcon_with_grad(emb.view(), batch.labels(), cfg)?.grad;
    let mut numeric = Array2::<f64>::zeros(emb.raw_dim());
    let mut probe = emb.clone();
    for idx in ndarray::indices(emb.raw_dim()) {
        let orig = probe[idx];
        probe[idx] = orig + STEP;
        let up = supcon_with_grad(probe.view(), batch.labels(), cfg)?.loss;
        probe[idx] = orig - STEP;
        let down = supcon_with_grad(probe.view(), batch.labels(), cfg)?.loss;
        probe[idx] = orig;
        numeric[idx] = (up - down) / (2.0 * STEP);
    }
    let max_dev = analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric.iter())
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    Ok(if scale < 1e-8 { max_dev } else { max_dev / scale })
}
