use super::denoiser::DenoiserParams;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::modality::FeatureTable;
use crate::numerics::{Matrix, Rng, SeedStream};

/// How the reverse chain is run at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InferenceMode {
    /// `ê_{t−1} = μ_θ(ê_t, t)` only.
    #[default]
    DeterministicMean,
    /// Adds `σ(t)·z` for every `t > 1`.
    Stochastic,
}

impl std::str::FromStr for InferenceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" | "deterministic_mean" => Ok(InferenceMode::DeterministicMean),
            "stochastic" => Ok(InferenceMode::Stochastic),
            other => Err(Error::Config(format!("unknown inference mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InferenceMode::DeterministicMean => "deterministic",
            InferenceMode::Stochastic => "stochastic",
        })
    }
}

/// Runs the reverse chain for a batch of rows at once.
///
/// `initial` is `ê_T` (one row per item), `conds` the matching conditions and
/// `noise_rngs` one generator per row, consumed only in stochastic mode.
pub fn reverse_chain(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    initial: Matrix,
    conds: &Matrix,
    noise_rngs: &mut [Rng],
    mode: InferenceMode,
) -> Result<Matrix> {
    let n = initial.rows();
    if noise_rngs.len() != n {
        return Err(Error::Dimension(format!("{} noise streams for {n} rows", noise_rngs.len())));
    }
    let mut e = initial;
    for t in (1..=schedule.steps()).rev() {
        let ts = vec![t; n];
        let e0_hat = params.predict(&e, &ts, conds)?;
        let sigma = schedule.posterior_variance(t).sqrt();
        let mut next = Matrix::zeros(n, e.cols());
        for r in 0..n {
            let mu = schedule.mu_theta(e.row(r), t, e0_hat.row(r));
            let out = next.row_mut(r);
            out.copy_from_slice(&mu);
            if mode == InferenceMode::Stochastic && t > 1 {
                for x in out.iter_mut() {
                    *x += sigma * noise_rngs[r].gaussian();
                }
            }
        }
        e = next;
    }
    e.ensure_finite("generated embeddings")?;
    Ok(e)
}

/// Single-item reverse sampling: `ê_T ~ N(0, I)` drawn from `rng`, which
/// also supplies the per-step noise.
pub fn reverse_sample(
    m: &[f64],
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    rng: &mut Rng,
    mode: InferenceMode,
) -> Result<Vec<f64>> {
    let d = params.dim();
    let init = Matrix::from_fn(1, d, |_, _| rng.gaussian());
    let cond = Matrix::row_vector(m);
    let mut rngs = [rng.clone()];
    let out = reverse_chain(params, schedule, init, &cond, &mut rngs, mode)?;
    *rng = rngs[0].clone();
    Ok(out.row(0).to_vec())
}

/// One reverse sample per item, each item drawing from its own stream
/// `stream.child(item_id)`, so results do not depend on which other items
/// are generated alongside it.
pub fn generate_cold_embeddings(
    items: &[usize],
    features: &FeatureTable,
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    stream: SeedStream,
    mode: InferenceMode,
) -> Result<Matrix> {
    let missing: Vec<String> = items
        .iter()
        .filter(|&&i| i >= features.len())
        .map(|i| i.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingFeatures(missing));
    }
    let d = params.dim();
    if items.is_empty() {
        return Ok(Matrix::zeros(0, d));
    }
    let mut rngs: Vec<Rng> = items.iter().map(|&i| stream.child(i as u64).rng()).collect();
    let mut init = Matrix::zeros(items.len(), d);
    for (r, rng) in rngs.iter_mut().enumerate() {
        for x in init.row_mut(r) {
            *x = rng.gaussian();
        }
    }
    let conds = features.select(items);
    reverse_chain(params, schedule, init, &conds, &mut rngs, mode)
}
