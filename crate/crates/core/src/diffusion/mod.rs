//! Conditional diffusion over item embeddings: schedule, denoiser, ELBO
//! training and the reverse sampler.

pub mod denoiser;
pub mod sampler;
pub mod schedule;

pub use denoiser::{timestep_encoding, DenoiserParams};
pub use sampler::{generate_cold_embeddings, reverse_chain, reverse_sample, InferenceMode};
pub use schedule::NoiseSchedule;

use crate::error::{Error, Result};
use crate::modality::FeatureTable;
use crate::numerics::{Adam, Matrix, ParamSet, Rng, SeedStream};

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub noise_scale: f64,
    pub noise_min: f64,
    pub noise_max: f64,
    pub heads: usize,
    pub lr: f64,
    pub inference_mode: InferenceMode,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            steps: 40,
            noise_scale: 0.1,
            noise_min: 0.001,
            noise_max: 0.01,
            heads: 4,
            lr: 1e-3,
            inference_mode: InferenceMode::DeterministicMean,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::Config(format!("diffusion_steps must be at least 2, got {}", self.steps)));
        }
        if !(self.lr > 0.0) || self.heads == 0 {
            return Err(Error::Config("server_lr and heads must be positive".into()));
        }
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.noise_scale, self.noise_min, self.noise_max)
    }
}

/// One Monte-Carlo ELBO estimate: per row a uniform `t ∈ 1..=T` and fresh
/// `ε`, then the mean squared error between `ê_0` and `e_0`.
pub fn elbo_loss(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    e0: &Matrix,
    conds: &Matrix,
    rng: &mut Rng,
) -> Result<(f64, DenoiserParams)> {
    let n = e0.rows();
    let ts: Vec<usize> = (0..n).map(|_| 1 + rng.below(schedule.steps())).collect();
    elbo_loss_at(params, schedule, e0, conds, &ts, rng)
}

/// ELBO loss with caller-chosen timesteps.
pub fn elbo_loss_at(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    e0: &Matrix,
    conds: &Matrix,
    ts: &[usize],
    rng: &mut Rng,
) -> Result<(f64, DenoiserParams)> {
    let mut e_t = Matrix::zeros(e0.rows(), e0.cols());
    for (r, &t) in ts.iter().enumerate() {
        let eps: Vec<f64> = (0..e0.cols()).map(|_| rng.gaussian()).collect();
        e_t.row_mut(r).copy_from_slice(&schedule.q_sample(e0.row(r), t, &eps));
    }
    params.mse_loss_and_grad(&e_t, ts, conds, e0)
}

/// Denoiser plus its optimizer state and training stream.
#[derive(Clone, Debug)]
pub struct DiffusionModel {
    pub config: DiffusionConfig,
    pub schedule: NoiseSchedule,
    pub params: DenoiserParams,
    optimizer: Adam,
    rng: Rng,
    trainings: usize,
}

impl DiffusionModel {
    pub fn new(
        config: DiffusionConfig,
        dim: usize,
        cond_dim: usize,
        use_condition: bool,
        init_rng: &mut Rng,
        train_rng: Rng,
    ) -> Result<Self> {
        config.validate()?;
        let params = DenoiserParams::new(init_rng, dim, cond_dim, config.heads, use_condition)?;
        Ok(DiffusionModel {
            schedule: config.schedule()?,
            optimizer: Adam::new(config.lr),
            config,
            params,
            rng: train_rng,
            trainings: 0,
        })
    }

    /// Rebuilds a model around loaded parameters with fresh optimizer state.
    pub fn from_params(config: DiffusionConfig, params: DenoiserParams, train_rng: Rng) -> Result<Self> {
        config.validate()?;
        if params.dim() % config.heads != 0 || params.heads() != config.heads {
            return Err(Error::Config(format!(
                "loaded denoiser has {} heads, config says {}",
                params.heads(),
                config.heads
            )));
        }
        Ok(DiffusionModel {
            schedule: config.schedule()?,
            optimizer: Adam::new(config.lr),
            config,
            params,
            rng: train_rng,
            trainings: 0,
        })
    }

    /// Number of completed `train` calls.
    pub fn trainings(&self) -> usize {
        self.trainings
    }

    /// `epochs` shuffled passes over the rows of `e0` in batches of
    /// `batch_size`; returns the mean batch loss of the last pass.
    pub fn train(&mut self, e0: &Matrix, conds: &Matrix, epochs: usize, batch_size: usize) -> Result<f64> {
        if e0.rows() == 0 {
            return Err(Error::Insufficient("diffusion training needs at least one warm row".into()));
        }
        let mut order: Vec<usize> = (0..e0.rows()).collect();
        let mut last = 0.0;
        for _ in 0..epochs {
            self.rng.shuffle(&mut order);
            let mut total = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(batch_size.max(1)) {
                let x = e0.select_rows(chunk);
                let c = if self.params.uses_condition() {
                    conds.select_rows(chunk)
                } else {
                    Matrix::zeros(chunk.len(), 0)
                };
                let (loss, grad) = elbo_loss(&self.params, &self.schedule, &x, &c, &mut self.rng)?;
                self.optimizer.step(&mut self.params, &grad);
                total += loss;
                batches += 1;
            }
            last = total / batches as f64;
        }
        if !self.params.all_finite() {
            return Err(Error::NonFinite("denoiser parameters diverged".into()));
        }
        self.trainings += 1;
        Ok(last)
    }

    pub fn generate(&self, items: &[usize], features: &FeatureTable, stream: SeedStream, mode: InferenceMode) -> Result<Matrix> {
        generate_cold_embeddings(items, features, &self.params, &self.schedule, stream, mode)
    }
}
