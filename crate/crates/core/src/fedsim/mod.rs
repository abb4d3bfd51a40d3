//! Federated matrix factorization: clients, sparse uploads, LDP and
//! server-side aggregation.

mod mapper;
mod simulator;

pub use mapper::{train_baseline_mapper, MAPPER_HIDDEN};
pub use simulator::{RoundReport, Simulator};

use std::collections::BTreeMap;

use crate::data::sample_negatives_from;
use crate::error::{Error, Result};
use crate::numerics::{dot, sigmoid, Matrix, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct FedConfig {
    pub rounds: usize,
    pub local_lr: f64,
    pub negatives: usize,
    /// Rows per server-side denoiser update.
    pub batch_size: usize,
    pub client_sample_ratio: f64,
    /// Denoiser passes over the warm rows per training event.
    pub server_epochs: usize,
    /// Laplace scale δ added to uploads; 0 disables LDP.
    pub ldp_scale: f64,
    /// Train the denoiser on odd rounds only.
    pub light_mode: bool,
    pub dim: usize,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            rounds: 100,
            local_lr: 0.1,
            negatives: 5,
            batch_size: 256,
            client_sample_ratio: 1.0,
            server_epochs: 1,
            ldp_scale: 0.0,
            light_mode: false,
            dim: 64,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if !(self.client_sample_ratio > 0.0 && self.client_sample_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "client_sample_ratio must be in (0, 1], got {}",
                self.client_sample_ratio
            )));
        }
        if !(self.ldp_scale >= 0.0) || !self.ldp_scale.is_finite() {
            return Err(Error::Config(format!("ldp scale must be a finite value >= 0, got {}", self.ldp_scale)));
        }
        if self.dim == 0 || self.batch_size == 0 {
            return Err(Error::Config("dim and batch_size must be positive".into()));
        }
        if !(self.local_lr > 0.0) {
            return Err(Error::Config("local_lr must be positive".into()));
        }
        Ok(())
    }

    /// Whether the denoiser is trained in `round` (1-based).
    pub fn trains_diffusion(&self, round: usize) -> bool {
        !self.light_mode || round % 2 == 1
    }
}

/// A client's private state. Its working copy of `E` is materialized per
/// round, and only for the rows it touches.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientState {
    pub user_id: usize,
    pub user_embedding: Vec<f64>,
}

/// What a client sends to the server: updated item rows, nothing else.
#[derive(Clone, Debug, PartialEq)]
pub struct Upload {
    sender: usize,
    rows: BTreeMap<usize, Vec<f64>>,
}

impl Upload {
    pub fn new(sender: usize, rows: BTreeMap<usize, Vec<f64>>) -> Self {
        Upload { sender, rows }
    }

    pub fn sender(&self) -> usize {
        self.sender
    }

    pub fn rows(&self) -> &BTreeMap<usize, Vec<f64>> {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalItemTable {
    pub embeddings: Matrix,
    pub round: usize,
}

/// `σ(e_u · e_i)`
pub fn predict_score(user: &[f64], item: &[f64]) -> f64 {
    sigmoid(dot(user, item))
}

const PROB_CLAMP: f64 = 1e-12;

/// Binary cross-entropy with the prediction clamped away from 0 and 1.
pub fn bce(y: f64, y_hat: f64) -> f64 {
    let p = y_hat.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Loss and gradients `(∂/∂e_u, ∂/∂e_i)` of one labelled pair.
pub fn pair_loss_and_grad(user: &[f64], item: &[f64], y: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let y_hat = predict_score(user, item);
    let g = y_hat - y;
    (
        bce(y, y_hat),
        item.iter().map(|v| g * v).collect(),
        user.iter().map(|v| g * v).collect(),
    )
}

/// One local epoch: positives in shuffled order, each with `config.negatives`
/// fresh negatives from `negative_pool`, and one SGD step on the summed loss
/// of that group. Returns the upload and the mean per-pair loss seen.
pub fn client_local_train(
    state: &mut ClientState,
    positives: &[usize],
    negative_pool: &[usize],
    global: &Matrix,
    config: &FedConfig,
    rng: &mut Rng,
) -> Result<(Upload, Option<f64>)> {
    let mut sorted_pos = positives.to_vec();
    sorted_pos.sort_unstable();
    let k = config.negatives.min(negative_pool.len().saturating_sub(sorted_pos.len()));
    let mut local: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut order = positives.to_vec();
    rng.shuffle(&mut order);
    let mut total = 0.0;
    let mut pairs = 0usize;
    for &p in &order {
        let negs = sample_negatives_from(negative_pool, &sorted_pos, k, rng)?;
        let group: Vec<(usize, f64)> = std::iter::once((p, 1.0)).chain(negs.into_iter().map(|n| (n, 0.0))).collect();
        let mut grad_user = vec![0.0; state.user_embedding.len()];
        let mut item_grads = Vec::with_capacity(group.len());
        for &(item, y) in &group {
            let row = local.entry(item).or_insert_with(|| global.row(item).to_vec());
            let (loss, gu, gi) = pair_loss_and_grad(&state.user_embedding, row, y);
            for (a, b) in grad_user.iter_mut().zip(&gu) {
                *a += b;
            }
            item_grads.push(gi);
            total += loss;
            pairs += 1;
        }
        for ((item, _), gi) in group.iter().zip(item_grads) {
            let row = local.get_mut(item).expect("row materialized above");
            for (w, g) in row.iter_mut().zip(&gi) {
                *w -= config.local_lr * g;
            }
        }
        for (w, g) in state.user_embedding.iter_mut().zip(&grad_user) {
            *w -= config.local_lr * g;
        }
    }
    if state.user_embedding.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("user {} embedding diverged", state.user_id)));
    }
    let mean = (pairs > 0).then(|| total / pairs as f64);
    Ok((Upload::new(state.user_id, local), mean))
}

/// Adds Laplace(0, δ) noise to every uploaded entry; δ = 0 is the identity.
pub fn apply_ldp(upload: &mut Upload, scale: f64, rng: &mut Rng) -> Result<()> {
    if scale < 0.0 || !scale.is_finite() {
        return Err(Error::Config(format!("ldp scale must be >= 0, got {scale}")));
    }
    if scale == 0.0 {
        return Ok(());
    }
    for row in upload.rows.values_mut() {
        for v in row.iter_mut() {
            *v += rng.laplace(scale);
        }
    }
    Ok(())
}

/// Replaces every uploaded row by the mean over its uploaders; rows nobody
/// uploaded are left untouched.
///
/// The mean is accumulated incrementally in ascending sender order, which
/// fixes the rounding regardless of upload order and makes the mean of
/// identical rows exact.
pub fn aggregate(table: &mut GlobalItemTable, uploads: &[Upload]) {
    let mut order: Vec<&Upload> = uploads.iter().collect();
    order.sort_by_key(|u| u.sender);
    let d = table.embeddings.cols();
    let mut means: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for up in order {
        for (&item, row) in &up.rows {
            let entry = means.entry(item).or_insert_with(|| (vec![0.0; d], 0));
            entry.1 += 1;
            let k = entry.1 as f64;
            for (m, v) in entry.0.iter_mut().zip(row) {
                *m += (v - *m) / k;
            }
        }
    }
    for (item, (mean, _)) in means {
        table.embeddings.row_mut(item).copy_from_slice(&mean);
    }
    table.round += 1;
}
