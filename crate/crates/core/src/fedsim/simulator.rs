use std::time::Instant;

use rayon::prelude::*;

use super::{aggregate, apply_ldp, client_local_train, ClientState, FedConfig, GlobalItemTable, Upload};
use crate::data::SplitDataset;
use crate::diffusion::{DiffusionConfig, DiffusionModel, InferenceMode};
use crate::error::{Error, Result};
use crate::modality::{FeatureTable, Guidance};
use crate::numerics::rng::subsystem;
use crate::numerics::{Matrix, SeedStream};

const INIT_STD: f64 = 0.01;
const CLIENT_SAMPLING: u64 = u64::MAX;
const LDP_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    pub mean_client_loss: f64,
    /// `None` when the denoiser was not trained this round.
    pub diffusion_loss: Option<f64>,
    pub seconds: f64,
    pub clients: usize,
}

/// The whole federation in one process: server table, denoiser, clients.
///
/// Each round trains the denoiser on the warm rows of `E` (skipped on even
/// rounds in light mode), hands `E` to the sampled clients, lets them train
/// locally and averages their uploads back into `E`. Aggregating at the end
/// of round `r` is the same sequence as aggregating at the start of `r + 1`.
#[derive(Clone, Debug)]
pub struct Simulator {
    split: SplitDataset,
    conditions: FeatureTable,
    guidance: Guidance,
    config: FedConfig,
    global: GlobalItemTable,
    clients: Vec<ClientState>,
    diffusion: DiffusionModel,
    root: SeedStream,
}

impl Simulator {
    pub fn new(
        split: SplitDataset,
        features: &FeatureTable,
        guidance: Guidance,
        config: FedConfig,
        diffusion: DiffusionConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if features.len() != split.n_items() {
            return Err(Error::Dimension(format!(
                "feature table has {} rows for {} items",
                features.len(),
                split.n_items()
            )));
        }
        if split.warm_items.is_empty() {
            return Err(Error::Insufficient("no warm items to train on".into()));
        }
        let root = SeedStream::root(seed);
        let init = root.child(subsystem::INIT);
        let d = config.dim;
        let clients = (0..split.n_users())
            .map(|u| {
                let mut rng = init.child(1).child(u as u64).rng();
                ClientState {
                    user_id: u,
                    user_embedding: (0..d).map(|_| INIT_STD * rng.gaussian()).collect(),
                }
            })
            .collect();
        let mut item_rng = init.child(2).rng();
        let embeddings = Matrix::from_fn(split.n_items(), d, |_, _| INIT_STD * item_rng.gaussian());
        let conditions = guidance.substitute(features, seed);
        let model = DiffusionModel::new(
            diffusion,
            d,
            conditions.dim(),
            guidance.uses_condition(),
            &mut init.child(3).rng(),
            root.child(subsystem::DIFFUSION).rng(),
        )?;
        Ok(Simulator {
            split,
            conditions,
            guidance,
            config,
            global: GlobalItemTable { embeddings, round: 0 },
            clients,
            diffusion: model,
            root,
        })
    }

    pub fn round(&self) -> usize {
        self.global.round
    }

    pub fn split(&self) -> &SplitDataset {
        &self.split
    }

    pub fn config(&self) -> &FedConfig {
        &self.config
    }

    pub fn guidance(&self) -> Guidance {
        self.guidance
    }

    pub fn conditions(&self) -> &FeatureTable {
        &self.conditions
    }

    pub fn global(&self) -> &GlobalItemTable {
        &self.global
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn diffusion(&self) -> &DiffusionModel {
        &self.diffusion
    }

    pub fn diffusion_trainings(&self) -> usize {
        self.diffusion.trainings()
    }

    pub fn user_embeddings(&self) -> Matrix {
        let d = self.config.dim;
        Matrix::from_fn(self.clients.len(), d, |u, j| self.clients[u].user_embedding[j])
    }

    pub fn warm_embeddings(&self) -> Matrix {
        self.global.embeddings.select_rows(&self.split.warm_items)
    }

    /// Users taking part in `round`, ascending.
    fn sample_clients(&self, round: usize) -> Vec<usize> {
        let n = self.clients.len();
        if self.config.client_sample_ratio >= 1.0 {
            return (0..n).collect();
        }
        let k = ((self.config.client_sample_ratio * n as f64).ceil() as usize).clamp(1, n);
        let mut rng = self
            .root
            .child(subsystem::CLIENTS)
            .child(round as u64)
            .child(CLIENT_SAMPLING)
            .rng();
        let pool: Vec<usize> = (0..n).collect();
        let mut chosen = rng.choose_distinct(&pool, k);
        chosen.sort_unstable();
        chosen
    }

    pub fn run_round(&mut self) -> Result<RoundReport> {
        let start = Instant::now();
        let round = self.global.round + 1;

        let diffusion_loss = if self.config.trains_diffusion(round) {
            let e0 = self.warm_embeddings();
            let conds = self.conditions.select(&self.split.warm_items);
            Some(self.diffusion.train(&e0, &conds, self.config.server_epochs, self.config.batch_size)?)
        } else {
            None
        };

        let participants = self.sample_clients(round);
        if participants.is_empty() {
            return Err(Error::Insufficient(format!("no clients sampled in round {round}")));
        }
        let stream = self.root.child(subsystem::CLIENTS).child(round as u64);
        let split = &self.split;
        let global = &self.global.embeddings;
        let config = &self.config;
        let warm = &split.warm_items;
        let mut selected: Vec<&mut ClientState> = {
            let mut mask = vec![false; self.clients.len()];
            participants.iter().for_each(|&u| mask[u] = true);
            self.clients.iter_mut().filter(|c| mask[c.user_id]).collect()
        };
        let results: Vec<Result<(Upload, Option<f64>)>> = selected
            .par_iter_mut()
            .map(|state| {
                let user = state.user_id as u64;
                let mut rng = stream.child(user).rng();
                let (mut upload, loss) =
                    client_local_train(state, split.train_items_of(state.user_id), warm, global, config, &mut rng)?;
                let mut noise = stream.child(user).child(LDP_STREAM).rng();
                apply_ldp(&mut upload, config.ldp_scale, &mut noise)?;
                Ok((upload, loss))
            })
            .collect();
        let mut uploads = Vec::with_capacity(results.len());
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for r in results {
            let (up, loss) = r?;
            if let Some(l) = loss {
                loss_sum += l;
                loss_count += 1;
            }
            uploads.push(up);
        }
        aggregate(&mut self.global, &uploads);
        if !self.global.embeddings.is_finite() {
            return Err(Error::NonFinite(format!("item table diverged in round {round}")));
        }
        Ok(RoundReport {
            round,
            mean_client_loss: if loss_count > 0 { loss_sum / loss_count as f64 } else { 0.0 },
            diffusion_loss,
            seconds: start.elapsed().as_secs_f64(),
            clients: participants.len(),
        })
    }

    /// Runs all remaining configured rounds.
    pub fn run(&mut self) -> Result<Vec<RoundReport>> {
        let mut out = Vec::new();
        while self.global.round < self.config.rounds {
            out.push(self.run_round()?);
        }
        Ok(out)
    }

    /// Reverse-samples embeddings for `items` from their conditions. The
    /// stream is fixed per item, so successive rounds start from the same
    /// initial noise.
    pub fn generate(&self, items: &[usize], mode: InferenceMode) -> Result<Matrix> {
        self.diffusion
            .generate(items, &self.conditions, self.root.child(subsystem::GENERATION), mode)
    }

    /// `E` with the given items' rows replaced by generated embeddings.
    pub fn table_with_generated(&self, items: &[usize], mode: InferenceMode) -> Result<Matrix> {
        let generated = self.generate(items, mode)?;
        let mut e = self.global.embeddings.clone();
        for (r, &i) in items.iter().enumerate() {
            e.row_mut(i).copy_from_slice(generated.row(r));
        }
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split_items, SyntheticSpec, DEFAULT_SPLIT};

    fn small(seed: u64) -> (SplitDataset, FeatureTable) {
        let spec = SyntheticSpec {
            n_users: 24,
            n_items: 20,
            n_clusters: 2,
            p_in: 0.5,
            p_out: 0.05,
            feature_dim: 4,
            feature_noise: 0.1,
            seed,
        };
        let data = generate_synthetic(&spec).unwrap();
        (split_items(data.dataset, DEFAULT_SPLIT, seed).unwrap(), data.features)
    }

    fn sim(light: bool, rounds: usize) -> Simulator {
        let (split, features) = small(3);
        let fed = FedConfig {
            rounds,
            light_mode: light,
            dim: 8,
            ..Default::default()
        };
        let diff = DiffusionConfig {
            steps: 5,
            heads: 2,
            ..Default::default()
        };
        Simulator::new(split, &features, Guidance::Full, fed, diff, 11).unwrap()
    }

    #[test]
    fn light_mode_halves_training() {
        let mut s = sim(true, 2);
        let reports = s.run().unwrap();
        assert_eq!(s.diffusion_trainings(), 1);
        assert!(reports[0].diffusion_loss.is_some() && reports[1].diffusion_loss.is_none());
        let mut s = sim(true, 5);
        s.run().unwrap();
        assert_eq!(s.diffusion_trainings(), 3);
        let mut s = sim(false, 3);
        s.run().unwrap();
        assert_eq!(s.diffusion_trainings(), 3);
    }

    #[test]
    fn full_sampling_uses_every_client() {
        let mut s = sim(false, 1);
        let r = s.run_round().unwrap();
        assert_eq!(r.clients, 24);
    }

    #[test]
    fn partial_sampling_is_sorted_and_sized() {
        let mut s = sim(false, 1);
        s.config.client_sample_ratio = 0.25;
        let chosen = s.sample_clients(1);
        assert_eq!(chosen.len(), 6);
        assert!(chosen.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(chosen, s.sample_clients(1));
    }

    #[test]
    fn simulation_is_deterministic() {
        let mut a = sim(false, 3);
        let mut b = sim(false, 3);
        let ra = a.run().unwrap();
        let rb = b.run().unwrap();
        assert_eq!(a.global().embeddings, b.global().embeddings);
        assert_eq!(a.user_embeddings(), b.user_embeddings());
        for (x, y) in ra.iter().zip(&rb) {
            assert_eq!(x.mean_client_loss, y.mean_client_loss);
            assert_eq!(x.diffusion_loss, y.diffusion_loss);
        }
    }

    #[test]
    fn cold_rows_are_never_written() {
        let mut s = sim(false, 2);
        let cold = s.split().cold_items.clone();
        let before = s.global().embeddings.select_rows(&cold);
        s.run().unwrap();
        assert_eq!(s.global().embeddings.select_rows(&cold), before);
        let val = s.split().val_items.clone();
        assert!(!val.is_empty());
    }

    #[test]
    fn generated_table_replaces_only_requested_rows() {
        let mut s = sim(false, 1);
        s.run().unwrap();
        let cold = s.split().cold_items.clone();
        let e = s.table_with_generated(&cold, InferenceMode::DeterministicMean).unwrap();
        let warm = s.split().warm_items.clone();
        assert_eq!(e.select_rows(&warm), s.global().embeddings.select_rows(&warm));
        assert_eq!(e.select_rows(&cold), s.generate(&cold, InferenceMode::DeterministicMean).unwrap());
    }
}
