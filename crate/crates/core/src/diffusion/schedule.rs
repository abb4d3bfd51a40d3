use crate::error::{Error, Result};

/// Per-step coefficients of a schedule that is linear in `1 − ᾱ_t`.
///
/// All vectors are indexed by `t` in `0..=T`; index 0 holds the boundary
/// values (`ᾱ_0 = 1`) and is otherwise unused.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    pub noise_scale: f64,
    pub noise_min: f64,
    pub noise_max: f64,
    alpha_bar: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    posterior_variance: Vec<f64>,
}

impl NoiseSchedule {
    /// `1 − ᾱ_t = s·[min + (t−1)/(T−1)·(max − min)]`. With a single step the
    /// interpolation term is taken as zero.
    pub fn linear(steps: usize, noise_scale: f64, noise_min: f64, noise_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("diffusion needs at least one step".into()));
        }
        if !(noise_min > 0.0 && noise_min < noise_max) {
            return Err(Error::Config(format!(
                "noise bounds must satisfy 0 < min < max, got {noise_min}, {noise_max}"
            )));
        }
        if !(noise_scale > 0.0 && noise_scale * noise_max < 1.0) {
            return Err(Error::Config(format!(
                "noise scale {noise_scale} times max {noise_max} must lie in (0, 1)"
            )));
        }
        let mut alpha_bar = vec![1.0; steps + 1];
        for t in 1..=steps {
            let frac = if steps == 1 {
                0.0
            } else {
                (t - 1) as f64 / (steps - 1) as f64
            };
            alpha_bar[t] = 1.0 - noise_scale * (noise_min + frac * (noise_max - noise_min));
        }
        let mut alpha = vec![1.0; steps + 1];
        let mut beta = vec![0.0; steps + 1];
        let mut posterior_variance = vec![0.0; steps + 1];
        for t in 1..=steps {
            if !(alpha_bar[t] < alpha_bar[t - 1]) {
                return Err(Error::Numerical(format!("ᾱ not strictly decreasing at t = {t}")));
            }
            alpha[t] = alpha_bar[t] / alpha_bar[t - 1];
            beta[t] = 1.0 - alpha[t];
            posterior_variance[t] = beta[t] * (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]);
        }
        Ok(NoiseSchedule {
            steps,
            noise_scale,
            noise_min,
            noise_max,
            alpha_bar,
            alpha,
            beta,
            posterior_variance,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    /// σ²(t) of the forward posterior; zero at t = 1.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.posterior_variance[t]
    }

    /// Coefficients `(c_t, c_0)` of `μ̃ = c_t·e_t + c_0·e_0`. Also used by
    /// `mu_theta`, so both means share bitwise-identical arithmetic.
    pub fn posterior_coefficients(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar[t];
        let ab_prev = self.alpha_bar[t - 1];
        let c_t = self.alpha[t].sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let c_0 = ab_prev.sqrt() * self.beta[t] / (1.0 - ab);
        (c_t, c_0)
    }

    fn check_step(&self, t: usize) {
        assert!((1..=self.steps).contains(&t), "timestep {t} outside 1..={}", self.steps);
    }

    /// `e_t = √ᾱ_t·e_0 + √(1−ᾱ_t)·ε`
    pub fn q_sample(&self, e0: &[f64], t: usize, eps: &[f64]) -> Vec<f64> {
        self.check_step(t);
        assert_eq!(e0.len(), eps.len());
        let a = self.alpha_bar[t].sqrt();
        let b = (1.0 - self.alpha_bar[t]).sqrt();
        e0.iter().zip(eps).map(|(x, n)| a * x + b * n).collect()
    }

    /// Mean and variance of `q(e_{t−1} | e_t, e_0)`.
    pub fn posterior_stats(&self, e0: &[f64], et: &[f64], t: usize) -> (Vec<f64>, f64) {
        self.check_step(t);
        let (c_t, c_0) = self.posterior_coefficients(t);
        let mean = et.iter().zip(e0).map(|(x, y)| c_t * x + c_0 * y).collect();
        (mean, self.posterior_variance[t])
    }

    /// Reverse-step mean with the predicted clean embedding plugged in.
    pub fn mu_theta(&self, et: &[f64], t: usize, e0_hat: &[f64]) -> Vec<f64> {
        self.check_step(t);
        let (c_t, c_0) = self.posterior_coefficients(t);
        et.iter().zip(e0_hat).map(|(x, y)| c_t * x + c_0 * y).collect()
    }
}
