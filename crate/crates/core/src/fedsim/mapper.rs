use crate::error::{Error, Result};
use crate::numerics::{Matrix, Mlp, Rng};

pub const MAPPER_HIDDEN: usize = 128;
const MAPPER_BATCH: usize = 32;

/// The deterministic feature → embedding baseline: an MLP
/// `feature_dim → 128 → d` fit by SGD to the warm rows of `E`.
pub fn train_baseline_mapper(
    features: &Matrix,
    embeddings: &Matrix,
    epochs: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<Mlp> {
    if features.rows() != embeddings.rows() || features.rows() == 0 {
        return Err(Error::Dimension(format!(
            "mapper needs matching non-empty rows, got {} features and {} embeddings",
            features.rows(),
            embeddings.rows()
        )));
    }
    let mut mlp = Mlp::new(rng, features.cols(), MAPPER_HIDDEN, embeddings.cols());
    mlp.train_sgd(features, embeddings, epochs, lr, MAPPER_BATCH, rng);
    if !crate::numerics::ParamSet::all_finite(&mlp) {
        return Err(Error::NonFinite("mapper parameters diverged".into()));
    }
    Ok(mlp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad_check, sample_gaussian, ParamSet};

    #[test]
    fn learns_identity_map() {
        let mut rng = Rng::new(1, 0);
        let x = sample_gaussian(&mut rng, 64, 4).scale(0.5);
        let m = train_baseline_mapper(&x, &x, 1500, 0.05, &mut rng).unwrap();
        assert!(m.mse(&x, &x) < 1e-3, "{}", m.mse(&x, &x));
    }

    #[test]
    fn zero_epochs_is_initialization() {
        let x = Matrix::from_fn(5, 3, |i, j| (i + 2 * j) as f64 * 0.1);
        let y = Matrix::from_fn(5, 2, |i, j| (i * j) as f64 * 0.1);
        let trained = train_baseline_mapper(&x, &y, 0, 0.1, &mut Rng::new(9, 9)).unwrap();
        let fresh = Mlp::new(&mut Rng::new(9, 9), 3, MAPPER_HIDDEN, 2);
        assert_eq!(trained, fresh);
    }

    #[test]
    fn mapper_gradient_check() {
        let mut rng = Rng::new(2, 2);
        let mlp = Mlp::new(&mut rng, 5, MAPPER_HIDDEN, 3);
        let x = sample_gaussian(&mut rng, 4, 5);
        let y = sample_gaussian(&mut rng, 4, 3);
        let report = finite_diff_grad_check(
            |p| {
                let mut m = mlp.clone();
                m.assign_flat(p);
                let (l, g) = m.mse_loss_and_grad(&x, &y);
                (l, g.flatten())
            },
            &mlp.flatten(),
            1e-5,
            1e-4,
            400,
            &mut Rng::new(0, 0),
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
