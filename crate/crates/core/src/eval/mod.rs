//! Cold-item ranking metrics and embedding-distribution diagnostics.

use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::fedsim::predict_score;
use crate::numerics::stats::covariance;
use crate::numerics::Matrix;

pub const DEFAULT_KS: [usize; 3] = [20, 50, 100];

/// Candidate ids sorted by score descending, ties by ascending id.
pub fn rank_cold(user: &[f64], items: &[usize], embeddings: &Matrix) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = items
        .iter()
        .map(|&i| (predict_score(user, embeddings.row(i)), i))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, i)| i).collect()
}

fn hits_in_top(ranking: &[usize], relevant: &[usize], k: usize) -> usize {
    ranking.iter().take(k).filter(|i| relevant.contains(i)).count()
}

/// `(hits / |relevant|, hits / K)`. `relevant` must be non-empty.
pub fn recall_precision_at_k(ranking: &[usize], relevant: &[usize], k: usize) -> (f64, f64) {
    assert!(k >= 1, "K must be at least 1");
    let hits = hits_in_top(ranking, relevant, k) as f64;
    (hits / relevant.len() as f64, hits / k as f64)
}

/// Binary-relevance NDCG with a `1/log₂(rank + 1)` discount.
pub fn ndcg_at_k(ranking: &[usize], relevant: &[usize], k: usize) -> f64 {
    assert!(k >= 1, "K must be at least 1");
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(pos, _)| 1.0 / ((pos + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..relevant.len().min(k)).map(|pos| 1.0 / ((pos + 2) as f64).log2()).sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMetrics {
    pub k: usize,
    pub recall: f64,
    pub precision: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub per_k: Vec<KMetrics>,
    pub n_users: usize,
}

impl MetricsReport {
    pub fn at(&self, k: usize) -> Option<&KMetrics> {
        self.per_k.iter().find(|m| m.k == k)
    }

    pub fn recall_at(&self, k: usize) -> f64 {
        self.at(k).map_or(f64::NAN, |m| m.recall)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("K,recall,precision,ndcg,n_users\n");
        for m in &self.per_k {
            s.push_str(&format!("{},{},{},{},{}\n", m.k, m.recall, m.precision, m.ndcg, self.n_users));
        }
        s
    }
}

/// Macro-averaged metrics over users with at least one relevant item,
/// ranking all `candidates` for each user.
pub fn evaluate_ranking(
    users: &Matrix,
    relevant_of: impl Fn(usize) -> Vec<usize>,
    candidates: &[usize],
    embeddings: &Matrix,
    ks: &[usize],
) -> Result<MetricsReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("K list must be non-empty and positive".into()));
    }
    let mut sums = vec![(0.0, 0.0, 0.0); ks.len()];
    let mut n = 0usize;
    for u in 0..users.rows() {
        let relevant = relevant_of(u);
        if relevant.is_empty() {
            continue;
        }
        let ranking = rank_cold(users.row(u), candidates, embeddings);
        for (acc, &k) in sums.iter_mut().zip(ks) {
            let (r, p) = recall_precision_at_k(&ranking, &relevant, k);
            acc.0 += r;
            acc.1 += p;
            acc.2 += ndcg_at_k(&ranking, &relevant, k);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Insufficient("no user has a held-out interaction to evaluate".into()));
    }
    Ok(MetricsReport {
        per_k: ks
            .iter()
            .zip(sums)
            .map(|(&k, (r, p, g))| KMetrics {
                k,
                recall: r / n as f64,
                precision: p / n as f64,
                ndcg: g / n as f64,
            })
            .collect(),
        n_users: n,
    })
}

/// Metrics on the cold test items; `embeddings` must hold generated rows at
/// the cold positions.
pub fn evaluate_cold(split: &SplitDataset, users: &Matrix, embeddings: &Matrix, ks: &[usize]) -> Result<MetricsReport> {
    evaluate_ranking(users, |u| split.test_items_of(u).to_vec(), &split.cold_items, embeddings, ks)
}

/// Same protocol on the validation items, for model selection.
pub fn evaluate_val(split: &SplitDataset, users: &Matrix, embeddings: &Matrix, ks: &[usize]) -> Result<MetricsReport> {
    evaluate_ranking(users, |u| split.val_items_of(u).to_vec(), &split.val_items, embeddings, ks)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistributionDiagnostics {
    pub centroid_distance: f64,
    pub covariance_distance: f64,
}

/// Distance between the means and Frobenius distance between the
/// covariances of two embedding sets.
pub fn distribution_diagnostics(warm: &Matrix, cold: &Matrix) -> Result<DistributionDiagnostics> {
    if warm.rows() < 2 || cold.rows() < 2 || warm.cols() != cold.cols() {
        return Err(Error::Dimension(format!(
            "diagnostics need >= 2 rows of equal width, got {:?} and {:?}",
            warm.shape(),
            cold.shape()
        )));
    }
    let centroid_distance = warm
        .column_means()
        .iter()
        .zip(cold.column_means())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let covariance_distance = covariance(warm).sub(&covariance(cold)).frobenius_norm();
    Ok(DistributionDiagnostics {
        centroid_distance,
        covariance_distance,
    })
}
