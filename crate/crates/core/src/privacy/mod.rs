//! Inversion-attack harness and the information-theoretic calculators used
//! to compare generated and mapped embeddings.

use std::f64::consts::{LN_2, PI};

use crate::diffusion::{DiffusionModel, InferenceMode};
use crate::error::{Error, Result};
use crate::modality::FeatureTable;
use crate::numerics::stats::{covariance, log_det_spd, principal_components};
use crate::numerics::{dot, norm, Matrix, Mlp, Rng, SeedStream};

pub const ATTACK_HIDDEN: usize = 128;
const ATTACK_BATCH: usize = 32;
pub const MI_RIDGE: f64 = 1e-6;

/// Shadow model `embedding → feature`, fit by SGD on squared error.
pub fn train_inversion_attack(
    embeddings: &Matrix,
    features: &Matrix,
    epochs: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<Mlp> {
    if embeddings.rows() == 0 {
        return Err(Error::Insufficient("the leak set is empty".into()));
    }
    if embeddings.rows() != features.rows() {
        return Err(Error::Dimension(format!(
            "{} leaked embeddings but {} leaked features",
            embeddings.rows(),
            features.rows()
        )));
    }
    let mut mlp = Mlp::new(rng, embeddings.cols(), ATTACK_HIDDEN, features.cols());
    mlp.train_sgd(embeddings, features, epochs, lr, ATTACK_BATCH, rng);
    if !crate::numerics::ParamSet::all_finite(&mlp) {
        return Err(Error::NonFinite("attack model diverged".into()));
    }
    Ok(mlp)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackReport {
    pub method: String,
    pub mse: f64,
    pub mae: f64,
    pub cosine: f64,
    pub pearson: f64,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Pearson correlation of two coordinate vectors; 0 when either is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
    }
}

/// Per-item reconstruction metrics averaged over items.
pub fn score_reconstruction(method: &str, reconstructed: &Matrix, truth: &Matrix) -> Result<AttackReport> {
    if reconstructed.shape() != truth.shape() || truth.rows() == 0 {
        return Err(Error::Dimension(format!(
            "reconstruction {:?} does not match truth {:?}",
            reconstructed.shape(),
            truth.shape()
        )));
    }
    let n = truth.rows() as f64;
    let d = truth.cols() as f64;
    let (mut mse, mut mae, mut cos, mut pr) = (0.0, 0.0, 0.0, 0.0);
    for (x_hat, x) in reconstructed.iter_rows().zip(truth.iter_rows()) {
        mse += x_hat.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / d;
        mae += x_hat.iter().zip(x).map(|(a, b)| (a - b).abs()).sum::<f64>() / d;
        cos += cosine(x_hat, x);
        pr += pearson(x_hat, x);
    }
    Ok(AttackReport {
        method: method.to_string(),
        mse: mse / n,
        mae: mae / n,
        cosine: cos / n,
        pearson: pr / n,
    })
}

pub fn attack_and_score(method: &str, attacker: &Mlp, targets: &Matrix, truth: &Matrix) -> Result<AttackReport> {
    score_reconstruction(method, &attacker.forward(targets), truth)
}

fn cosine_matrix(x: &Matrix) -> Matrix {
    let n = x.rows();
    Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { cosine(x.row(i), x.row(j)) })
}

/// `S_true − S_recon` over `sample_n` randomly chosen rows, where `S` is the
/// pairwise cosine-similarity matrix.
pub fn structural_similarity_difference(
    truth: &Matrix,
    reconstructed: &Matrix,
    sample_n: usize,
    rng: &mut Rng,
) -> Result<Matrix> {
    if truth.rows() < sample_n || truth.shape() != reconstructed.shape() {
        return Err(Error::Insufficient(format!(
            "need {sample_n} matching rows, have {:?} and {:?}",
            truth.shape(),
            reconstructed.shape()
        )));
    }
    let pool: Vec<usize> = (0..truth.rows()).collect();
    let mut pick = rng.choose_distinct(&pool, sample_n);
    pick.sort_unstable();
    Ok(cosine_matrix(&truth.select_rows(&pick)).sub(&cosine_matrix(&reconstructed.select_rows(&pick))))
}

pub fn mean_abs(m: &Matrix) -> f64 {
    let n = m.as_slice().len().max(1) as f64;
    m.as_slice().iter().map(|v| v.abs()).sum::<f64>() / n
}

/// `max(0, 1 − (I + ln 2)/ln M)` with `I` in nats.
pub fn fano_bound(mutual_information: f64, categories: usize) -> Result<f64> {
    if categories < 2 {
        return Err(Error::Config(format!("Fano bound needs M >= 2, got {categories}")));
    }
    if !(mutual_information >= 0.0) {
        return Err(Error::Config(format!("mutual information must be >= 0, got {mutual_information}")));
    }
    Ok((1.0 - (mutual_information + LN_2) / (categories as f64).ln()).max(0.0))
}

/// Entropy of an isotropic Gaussian, `(p/2)·ln(2πe·σ²)` nats.
pub fn gaussian_noise_floor(p: usize, sigma_min: f64) -> Result<f64> {
    if p == 0 || !(sigma_min > 0.0) {
        return Err(Error::Config(format!("noise floor needs p >= 1 and σ > 0, got p = {p}, σ = {sigma_min}")));
    }
    Ok(p as f64 / 2.0 * (2.0 * PI * std::f64::consts::E * sigma_min * sigma_min).ln())
}

fn ridged(mut c: Matrix) -> Matrix {
    for i in 0..c.rows() {
        let v = c.get(i, i) + MI_RIDGE;
        c.set(i, i, v);
    }
    c
}

/// MI under a joint-Gaussian model, `½·ln(det Σ_X · det Σ_Y / det Σ_XY)`.
pub fn mi_gaussian_estimate(x: &Matrix, y: &Matrix) -> Result<f64> {
    if x.rows() != y.rows() {
        return Err(Error::Dimension(format!("{} rows vs {} rows", x.rows(), y.rows())));
    }
    if x.rows() < x.cols() + y.cols() + 2 {
        return Err(Error::Insufficient(format!(
            "{} rows cannot support a {}-dimensional joint covariance",
            x.rows(),
            x.cols() + y.cols()
        )));
    }
    let lx = log_det_spd(&ridged(covariance(x)))?;
    let ly = log_det_spd(&ridged(covariance(y)))?;
    let lxy = log_det_spd(&ridged(covariance(&x.hconcat(y))))
        .map_err(|_| Error::Numerical("joint covariance is singular after ridge".into()))?;
    Ok(0.5 * (lx + ly - lxy))
}

/// Differential entropy of a Gaussian fit, `½·ln det(2πe·Σ)`.
pub fn gaussian_entropy(x: &Matrix) -> Result<f64> {
    let p = x.cols() as f64;
    Ok(0.5 * (p * (2.0 * PI * std::f64::consts::E).ln() + log_det_spd(&ridged(covariance(x)))?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrivacyConfig {
    pub leak_fraction: f64,
    pub attack_epochs: usize,
    pub attack_lr: f64,
    pub ssd_items: usize,
    /// Principal components kept on each side before the MI estimate.
    pub mi_components: usize,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        PrivacyConfig {
            leak_fraction: 0.2,
            attack_epochs: 300,
            attack_lr: 0.05,
            ssd_items: 20,
            mi_components: 4,
        }
    }
}

impl PrivacyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.leak_fraction > 0.0 && self.leak_fraction < 1.0) {
            return Err(Error::Config(format!(
                "leak fraction must lie in (0, 1), got {}",
                self.leak_fraction
            )));
        }
        if self.mi_components == 0 || !(self.attack_lr > 0.0) {
            return Err(Error::Config("mi_components and attack_lr must be positive".into()));
        }
        Ok(())
    }
}

/// One pipeline's attack outcome plus its information estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineResult {
    pub report: AttackReport,
    pub mi_nats: f64,
    /// Fano lower bound on cluster-label error, when labels are known.
    pub fano_lower_bound: Option<f64>,
    pub entropy_nats: f64,
    pub ssd: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineComparison {
    pub diffusion: PipelineResult,
    pub mapper: PipelineResult,
    pub leaked: Vec<usize>,
    pub targets: Vec<usize>,
}

impl PipelineComparison {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,mse,mae,cosine,pearson,mi_nats,fano_lower_bound\n");
        for p in [&self.diffusion, &self.mapper] {
            let r = &p.report;
            let fano = p.fano_lower_bound.map_or(String::new(), |f| f.to_string());
            s.push_str(&format!("{},{},{},{},{},{},{}\n", r.method, r.mse, r.mae, r.cosine, r.pearson, p.mi_nats, fano));
        }
        s
    }
}

/// One-hot labels without the last column, so the covariance is full rank.
fn label_matrix(labels: &[usize], categories: usize) -> Matrix {
    Matrix::from_fn(labels.len(), categories - 1, |i, j| (labels[i] == j) as u8 as f64)
}

/// Runs the inversion attack against both release mechanisms on the same
/// items: `items` are the released (cold) items, a `leak_fraction` share of
/// which the attacker knows in full. The diffusion side always samples in
/// stochastic mode. `labels` (item → category, with the category count)
/// enables the Fano bound.
#[allow(clippy::too_many_arguments)]
pub fn compare_pipelines(
    items: &[usize],
    features: &FeatureTable,
    diffusion: &DiffusionModel,
    conditions: &FeatureTable,
    mapper: &Mlp,
    labels: Option<(&[usize], usize)>,
    config: &PrivacyConfig,
    stream: SeedStream,
) -> Result<PipelineComparison> {
    config.validate()?;
    let n_leak = ((items.len() as f64 * config.leak_fraction).floor() as usize).max(1);
    if n_leak >= items.len() {
        return Err(Error::Insufficient(format!(
            "{} items leave no attack targets after leaking {n_leak}",
            items.len()
        )));
    }
    let mut order = items.to_vec();
    stream.child(1).rng().shuffle(&mut order);
    let mut leaked = order[..n_leak].to_vec();
    let mut targets = order[n_leak..].to_vec();
    leaked.sort_unstable();
    targets.sort_unstable();

    let released_diff = diffusion.generate(items, conditions, stream.child(2), InferenceMode::Stochastic)?;
    let released_map = mapper.forward(&features.select(items));
    let pos = |i: usize| items.iter().position(|&x| x == i).expect("item present");
    let leak_rows: Vec<usize> = leaked.iter().map(|&i| pos(i)).collect();
    let target_rows: Vec<usize> = targets.iter().map(|&i| pos(i)).collect();
    let x_all = features.select(items);
    let x_leak = features.select(&leaked);
    let x_target = features.select(&targets);

    let x_pca = principal_components(&x_all, config.mi_components);
    let item_labels: Option<Vec<usize>> = labels.map(|(l, _)| items.iter().map(|&i| l[i]).collect());

    let run = |method: &str, released: &Matrix, salt: u64| -> Result<PipelineResult> {
        let mut rng = stream.child(3).child(salt).rng();
        let attacker = train_inversion_attack(
            &released.select_rows(&leak_rows),
            &x_leak,
            config.attack_epochs,
            config.attack_lr,
            &mut rng,
        )?;
        let recon = attacker.forward(&released.select_rows(&target_rows));
        let report = score_reconstruction(method, &recon, &x_target)?;
        let y_pca = principal_components(released, config.mi_components);
        let mi_nats = mi_gaussian_estimate(&x_pca, &y_pca)?.max(0.0);
        let fano_lower_bound = match (&item_labels, labels) {
            (Some(l), Some((_, m))) if m >= 2 => {
                let info = mi_gaussian_estimate(&label_matrix(l, m), &y_pca)?.max(0.0);
                Some(fano_bound(info, m)?)
            }
            _ => None,
        };
        let ssd_n = config.ssd_items.min(targets.len());
        let ssd = structural_similarity_difference(&x_target, &recon, ssd_n, &mut stream.child(4).rng())?;
        Ok(PipelineResult {
            report,
            mi_nats,
            fano_lower_bound,
            entropy_nats: gaussian_entropy(&y_pca)?,
            ssd,
        })
    };
    Ok(PipelineComparison {
        diffusion: run("diffusion", &released_diff, 1)?,
        mapper: run("mapper", &released_map, 2)?,
        leaked,
        targets,
    })
}
