//! The conditional denoiser: attention fusion of the time encoding and the
//! modality condition, followed by a tanh trunk that predicts `ê_0`.
//!
//! Keys and values are the same stacked rows `[P_t(TE(t)); P_m(m)]`. Each head
//! reads its own column slice of the queries, keys and values, so `W_q`
//! is stored as one `d × d` matrix whose column blocks are the per-head maps.

use crate::error::{Error, Result};
use crate::numerics::nn::glorot;
use crate::numerics::{Linear, Matrix, ParamSet, Rng};

/// Sinusoidal encoding of a timestep, `[sin(t·ω_i)…, cos(t·ω_i)…]` with
/// geometric frequencies `ω_i = 10000^(−i/(d/2))`.
pub fn timestep_encoding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

/// All learnable parameters of the denoiser.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserParams {
    pub time_proj: Linear,
    pub cond_proj: Linear,
    pub query: Matrix,
    pub output_proj: Matrix,
    pub trunk_hidden: Linear,
    pub trunk_out: Linear,
    heads: usize,
    use_condition: bool,
}

impl DenoiserParams {
    pub fn new(rng: &mut Rng, dim: usize, cond_dim: usize, heads: usize, use_condition: bool) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "model width {dim} must be divisible by the head count {heads}"
            )));
        }
        if cond_dim == 0 {
            return Err(Error::Config("condition width must be positive".into()));
        }
        Ok(DenoiserParams {
            time_proj: Linear::new(rng, dim, dim),
            cond_proj: Linear::new(rng, cond_dim, dim),
            query: glorot(rng, dim, dim),
            output_proj: glorot(rng, dim, dim),
            trunk_hidden: Linear::new(rng, 2 * dim, 2 * dim),
            trunk_out: Linear::new(rng, 2 * dim, dim),
            heads,
            use_condition,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let z = |l: &Linear| Linear::zeros(l.fan_in(), l.fan_out());
        DenoiserParams {
            time_proj: z(&self.time_proj),
            cond_proj: z(&self.cond_proj),
            query: Matrix::zeros(self.query.rows(), self.query.cols()),
            output_proj: Matrix::zeros(self.output_proj.rows(), self.output_proj.cols()),
            trunk_hidden: z(&self.trunk_hidden),
            trunk_out: z(&self.trunk_out),
            heads: self.heads,
            use_condition: self.use_condition,
        }
    }

    pub fn dim(&self) -> usize {
        self.query.rows()
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_proj.fan_in()
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn uses_condition(&self) -> bool {
        self.use_condition
    }

    /// Turns the condition row on or off, e.g. to evaluate a guidance ablation
    /// on a trained model. The condition projection is kept either way.
    pub fn set_uses_condition(&mut self, on: bool) {
        self.use_condition = on;
    }

    fn kv_rows(&self) -> usize {
        if self.use_condition {
            2
        } else {
            1
        }
    }

    /// Fused condition for each row of `e_t`.
    pub fn fuse_conditions(&self, e_t: &Matrix, t: &[usize], cond: &Matrix) -> Result<Matrix> {
        self.check_shapes(e_t, t, cond)?;
        Ok(self.fusion_forward(e_t, t, cond).fused)
    }

    /// Predicted clean embeddings `ê_0`, one per row of `e_t`.
    pub fn predict(&self, e_t: &Matrix, t: &[usize], cond: &Matrix) -> Result<Matrix> {
        self.check_shapes(e_t, t, cond)?;
        Ok(self.forward(e_t, t, cond).out)
    }

    fn check_shapes(&self, e_t: &Matrix, t: &[usize], cond: &Matrix) -> Result<()> {
        let d = self.dim();
        if e_t.cols() != d {
            return Err(Error::Dimension(format!("e_t has width {}, model width is {d}", e_t.cols())));
        }
        if t.len() != e_t.rows() {
            return Err(Error::Dimension(format!("{} timesteps for {} rows", t.len(), e_t.rows())));
        }
        if self.use_condition && (cond.rows() != e_t.rows() || cond.cols() != self.cond_dim()) {
            return Err(Error::Dimension(format!(
                "conditions are {:?}, expected ({}, {})",
                cond.shape(),
                e_t.rows(),
                self.cond_dim()
            )));
        }
        Ok(())
    }

    fn fusion_forward(&self, e_t: &Matrix, t: &[usize], cond: &Matrix) -> FusionCache {
        let d = self.dim();
        let b = e_t.rows();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let rows = self.kv_rows();

        let te = Matrix::from_rows(&t.iter().map(|&s| timestep_encoding(s, d)).collect::<Vec<_>>())
            .unwrap_or_else(|_| Matrix::zeros(0, d));
        let kt = self.time_proj.forward(&te);
        let km = self.use_condition.then(|| self.cond_proj.forward(cond));
        let q = e_t.matmul(&self.query);

        let mut attn = vec![0.0; b * self.heads * rows];
        let mut o = Matrix::zeros(b, d);
        for r in 0..b {
            let kv: [&[f64]; 2] = [kt.row(r), km.as_ref().map_or(kt.row(r), |m| m.row(r))];
            let qr = q.row(r);
            for h in 0..self.heads {
                let cols = h * dh..(h + 1) * dh;
                let w = &mut attn[(r * self.heads + h) * rows..(r * self.heads + h + 1) * rows];
                for (j, wj) in w.iter_mut().enumerate() {
                    *wj = scale
                        * qr[cols.clone()]
                            .iter()
                            .zip(&kv[j][cols.clone()])
                            .map(|(a, c)| a * c)
                            .sum::<f64>();
                }
                crate::numerics::matrix::softmax_in_place(w);
                let orow = &mut o.row_mut(r)[cols.clone()];
                for (j, &wj) in w.iter().enumerate() {
                    for (ov, vv) in orow.iter_mut().zip(&kv[j][cols.clone()]) {
                        *ov += wj * vv;
                    }
                }
            }
        }
        let fused = o.matmul(&self.output_proj);
        FusionCache {
            te,
            kt,
            km,
            q,
            attn,
            o,
            fused,
        }
    }

    fn forward(&self, e_t: &Matrix, t: &[usize], cond: &Matrix) -> ForwardCache {
        let fusion = self.fusion_forward(e_t, t, cond);
        let z = e_t.hconcat(&fusion.fused);
        let hidden = self.trunk_hidden.forward(&z).map(f64::tanh);
        let out = self.trunk_out.forward(&hidden);
        ForwardCache {
            fusion,
            z,
            hidden,
            out,
        }
    }

    /// Attention weights `[row][head][kv_row]` for inspection.
    pub fn attention_weights(&self, e_t: &Matrix, t: &[usize], cond: &Matrix) -> Result<Vec<Vec<Vec<f64>>>> {
        self.check_shapes(e_t, t, cond)?;
        let cache = self.fusion_forward(e_t, t, cond);
        let rows = self.kv_rows();
        Ok((0..e_t.rows())
            .map(|r| {
                (0..self.heads)
                    .map(|h| cache.attn[(r * self.heads + h) * rows..(r * self.heads + h + 1) * rows].to_vec())
                    .collect()
            })
            .collect())
    }

    /// Gradient of a loss with `∂L/∂ê_0 = grad_out` with respect to every
    /// parameter, plus the cached prediction.
    fn backward(&self, e_t: &Matrix, cond: &Matrix, cache: &ForwardCache, grad_out: &Matrix) -> DenoiserParams {
        let d = self.dim();
        let b = e_t.rows();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let rows = self.kv_rows();
        let f = &cache.fusion;
        let mut g = self.zeros_like();

        let d_hidden = self.trunk_out.backward(&cache.hidden, grad_out, &mut g.trunk_out);
        let mut d_pre = d_hidden;
        for (x, a) in d_pre.as_mut_slice().iter_mut().zip(cache.hidden.as_slice()) {
            *x *= 1.0 - a * a;
        }
        let d_z = self.trunk_hidden.backward(&cache.z, &d_pre, &mut g.trunk_hidden);
        let d_fused = d_z.columns(d, 2 * d);

        g.output_proj = f.o.t_matmul(&d_fused);
        let d_o = d_fused.matmul_t(&self.output_proj);

        let mut d_q = Matrix::zeros(b, d);
        let mut d_kt = Matrix::zeros(b, d);
        let mut d_km = Matrix::zeros(b, d);
        for r in 0..b {
            let kv: [&[f64]; 2] = [f.kt.row(r), f.km.as_ref().map_or(f.kt.row(r), |m| m.row(r))];
            let qr = f.q.row(r);
            let dor = d_o.row(r);
            for h in 0..self.heads {
                let cols = h * dh..(h + 1) * dh;
                let w = &f.attn[(r * self.heads + h) * rows..(r * self.heads + h + 1) * rows];
                // o = Σ_j w_j v_j, so ∂L/∂w_j = do·v_j and ∂L/∂v_j = w_j·do
                let mut dw = [0.0; 2];
                for j in 0..rows {
                    dw[j] = dor[cols.clone()].iter().zip(&kv[j][cols.clone()]).map(|(a, c)| a * c).sum();
                }
                let mean: f64 = (0..rows).map(|j| w[j] * dw[j]).sum();
                for j in 0..rows {
                    let ds = w[j] * (dw[j] - mean) * scale;
                    let target = if j == 0 { &mut d_kt } else { &mut d_km };
                    let trow = target.row_mut(r);
                    for c in cols.clone() {
                        // key use and value use of the same row
                        trow[c] += ds * qr[c] + w[j] * dor[c];
                    }
                    let qrow = d_q.row_mut(r);
                    for c in cols.clone() {
                        qrow[c] += ds * kv[j][c];
                    }
                }
            }
        }
        g.query = e_t.t_matmul(&d_q);
        self.time_proj.backward(&f.te, &d_kt, &mut g.time_proj);
        if self.use_condition {
            self.cond_proj.backward(cond, &d_km, &mut g.cond_proj);
        }
        g
    }

    /// Mean squared error between `ê_0` and `target` with its gradient.
    pub fn mse_loss_and_grad(
        &self,
        e_t: &Matrix,
        t: &[usize],
        cond: &Matrix,
        target: &Matrix,
    ) -> Result<(f64, DenoiserParams)> {
        self.check_shapes(e_t, t, cond)?;
        let cache = self.forward(e_t, t, cond);
        let n = (target.rows() * target.cols()).max(1) as f64;
        let diff = cache.out.sub(target);
        let loss = diff.as_slice().iter().map(|x| x * x).sum::<f64>() / n;
        let grad = self.backward(e_t, cond, &cache, &diff.scale(2.0 / n));
        Ok((loss, grad))
    }
}

struct FusionCache {
    te: Matrix,
    kt: Matrix,
    km: Option<Matrix>,
    q: Matrix,
    attn: Vec<f64>,
    o: Matrix,
    fused: Matrix,
}

struct ForwardCache {
    fusion: FusionCache,
    z: Matrix,
    hidden: Matrix,
    out: Matrix,
}

impl ParamSet for DenoiserParams {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut v = Vec::new();
        self.time_proj.push_tensors("time_proj", &mut v);
        self.cond_proj.push_tensors("cond_proj", &mut v);
        v.push(("query".to_string(), &self.query));
        v.push(("output_proj".to_string(), &self.output_proj));
        self.trunk_hidden.push_tensors("trunk_hidden", &mut v);
        self.trunk_out.push_tensors("trunk_out", &mut v);
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut v = Vec::new();
        self.time_proj.push_tensors_mut("time_proj", &mut v);
        self.cond_proj.push_tensors_mut("cond_proj", &mut v);
        v.push(("query".to_string(), &mut self.query));
        v.push(("output_proj".to_string(), &mut self.output_proj));
        self.trunk_hidden.push_tensors_mut("trunk_hidden", &mut v);
        self.trunk_out.push_tensors_mut("trunk_out", &mut v);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad_check, sample_gaussian};

    fn toy(use_condition: bool) -> (DenoiserParams, Matrix, Vec<usize>, Matrix, Matrix) {
        let mut rng = Rng::new(21, 0);
        let p = DenoiserParams::new(&mut rng, 4, 3, 2, use_condition).unwrap();
        let e_t = sample_gaussian(&mut rng, 3, 4);
        let cond = sample_gaussian(&mut rng, 3, 3);
        let target = sample_gaussian(&mut rng, 3, 4);
        (p, e_t, vec![1, 4, 9], cond, target)
    }

    fn grad_check(use_condition: bool, prefixes: &[&str]) {
        let (p, e_t, t, cond, target) = toy(use_condition);
        let base = p.flatten();
        let (_, analytic) = p.mse_loss_and_grad(&e_t, &t, &cond, &target).unwrap();
        let report = finite_diff_grad_check(
            |x| {
                let mut q = p.clone();
                q.assign_flat(x);
                let (l, g) = q.mse_loss_and_grad(&e_t, &t, &cond, &target).unwrap();
                (l, g.flatten())
            },
            &base,
            1e-5,
            1e-4,
            usize::MAX,
            &mut Rng::new(0, 0),
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        for (name, g) in analytic.tensors() {
            if prefixes.iter().any(|pre| name.starts_with(pre)) {
                assert!(g.max_abs() > 0.0, "gradient of {name} is identically zero");
            }
        }
    }

    #[test]
    fn gradients_pass_finite_differences() {
        grad_check(true, &["time_proj", "cond_proj", "query", "output_proj", "trunk"]);
    }

    #[test]
    fn gradients_without_condition_row() {
        grad_check(false, &["time_proj", "output_proj", "trunk"]);
    }

    #[test]
    fn identical_rows_make_attention_irrelevant() {
        let mut rng = Rng::new(3, 3);
        let mut p = DenoiserParams::new(&mut rng, 4, 4, 2, true).unwrap();
        // make P_m(m) equal P_t(TE(t)) for the chosen inputs
        let t = vec![5usize];
        let te = Matrix::row_vector(&timestep_encoding(5, 4));
        p.cond_proj = p.time_proj.clone();
        let e_a = sample_gaussian(&mut rng, 1, 4);
        let e_b = sample_gaussian(&mut rng, 1, 4);
        let fa = p.fuse_conditions(&e_a, &t, &te).unwrap();
        let fb = p.fuse_conditions(&e_b, &t, &te).unwrap();
        let expected = p.time_proj.forward(&te).matmul(&p.output_proj);
        assert!(fa.sub(&expected).max_abs() < 1e-12);
        assert!(fb.sub(&expected).max_abs() < 1e-12);
    }

    #[test]
    fn attention_weights_sum_to_one() {
        let (p, e_t, t, cond, _) = toy(true);
        for row in p.attention_weights(&e_t, &t, &cond).unwrap() {
            for head in row {
                assert_eq!(head.len(), 2);
                assert!((head.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_output_layer_returns_bias() {
        let (mut p, e_t, t, cond, _) = toy(true);
        p.trunk_out.weight.fill(0.0);
        p.trunk_out.bias = Matrix::row_vector(&[0.5, -1.0, 2.0, 0.0]);
        let out = p.predict(&e_t, &t, &cond).unwrap();
        for r in 0..out.rows() {
            assert_eq!(out.row(r), &[0.5, -1.0, 2.0, 0.0]);
        }
        assert_eq!(p.predict(&e_t, &t, &cond).unwrap(), out);
    }

    #[test]
    fn head_count_must_divide_width() {
        assert!(DenoiserParams::new(&mut Rng::new(0, 0), 6, 3, 4, true).is_err());
    }

    #[test]
    fn timestep_encoding_shape() {
        let e = timestep_encoding(0, 6);
        assert_eq!(e, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_ne!(timestep_encoding(3, 8), timestep_encoding(4, 8));
    }
}
