use super::{Dataset, Interaction};
use crate::error::{Error, Result};
use crate::modality::FeatureTable;
use crate::numerics::rng::subsystem;
use crate::numerics::{Matrix, SeedStream};

/// Planted-cluster benchmark parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// The 200-user, 130-item, 4-cluster benchmark.
    pub fn benchmark(seed: u64) -> Self {
        SyntheticSpec {
            n_users: 200,
            n_items: 130,
            n_clusters: 4,
            p_in: 0.3,
            p_out: 0.01,
            feature_dim: 64,
            feature_noise: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_clusters == 0 || self.n_clusters > self.n_users.min(self.n_items) {
            return bad(format!(
                "n_clusters = {} must be in 1..=min(n_users, n_items)",
                self.n_clusters
            ));
        }
        if !(0.0..=1.0).contains(&self.p_in) || !(0.0..=1.0).contains(&self.p_out) {
            return bad("interaction probabilities must lie in [0, 1]".into());
        }
        if self.p_in <= self.p_out {
            return bad(format!("p_in = {} must exceed p_out = {}", self.p_in, self.p_out));
        }
        if self.feature_dim < self.n_clusters {
            return bad(format!(
                "feature_dim = {} cannot hold {} orthogonal centroids",
                self.feature_dim, self.n_clusters
            ));
        }
        if !(self.feature_noise >= 0.0) {
            return bad("feature_noise must be non-negative".into());
        }
        Ok(())
    }

    pub fn user_cluster(&self, user: usize) -> usize {
        user % self.n_clusters
    }

    pub fn item_cluster(&self, item: usize) -> usize {
        item % self.n_clusters
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub spec: SyntheticSpec,
    pub dataset: Dataset,
    pub features: FeatureTable,
    pub item_clusters: Vec<usize>,
    pub user_clusters: Vec<usize>,
}

const MAX_RETRIES: usize = 10;

/// Round-robin cluster assignment; in-cluster pairs interact with `p_in`,
/// others with `p_out`. Item features are the cluster's unit centroid plus
/// Gaussian noise.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let root = SeedStream::root(spec.seed).child(subsystem::DATA);
    let mut rng = root.child(1).rng();
    let mut interactions = Vec::new();
    for u in 0..spec.n_users {
        let cu = spec.user_cluster(u);
        let mut items = Vec::new();
        for _ in 0..=MAX_RETRIES {
            items.clear();
            for i in 0..spec.n_items {
                let p = if spec.item_cluster(i) == cu { spec.p_in } else { spec.p_out };
                if rng.uniform() < p {
                    items.push(i);
                }
            }
            if !items.is_empty() {
                break;
            }
        }
        if items.is_empty() {
            let in_cluster: Vec<usize> =
                (0..spec.n_items).filter(|&i| spec.item_cluster(i) == cu).collect();
            items.push(in_cluster[rng.below(in_cluster.len())]);
        }
        interactions.extend(items.into_iter().map(|item| Interaction {
            user: u,
            item,
            timestamp: None,
        }));
    }
    let dataset = Dataset::new(spec.n_users, spec.n_items, interactions)?;

    let mut frng = root.child(2).rng();
    let features = Matrix::from_fn(spec.n_items, spec.feature_dim, |i, j| {
        let centroid = if j == spec.item_cluster(i) { 1.0 } else { 0.0 };
        centroid + spec.feature_noise * frng.gaussian()
    });
    Ok(SyntheticData {
        spec: spec.clone(),
        dataset,
        features: FeatureTable::new(features)?,
        item_clusters: (0..spec.n_items).map(|i| spec.item_cluster(i)).collect(),
        user_clusters: (0..spec.n_users).map(|u| spec.user_cluster(u)).collect(),
    })
}
