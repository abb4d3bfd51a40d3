//! Hand-differentiated layers and optimizers.

use super::matrix::Matrix;
use super::rng::Rng;
use crate::error::{Error, Result};

/// A set of named parameter tensors.
///
/// Gradients are represented by a second instance of the same type, so every
/// optimizer and checkpoint routine works off `tensors()` order.
pub trait ParamSet {
    fn tensors(&self) -> Vec<(String, &Matrix)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.as_slice().len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, m) in self.tensors() {
            out.extend_from_slice(m.as_slice());
        }
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for (_, m) in self.tensors_mut() {
            let n = m.as_slice().len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    /// Replaces tensors by name; shapes must match exactly.
    fn load_named(&mut self, named: &[(String, Matrix)]) -> Result<()> {
        for (name, slot) in self.tensors_mut() {
            let src = named
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, m)| m)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if src.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    src.shape(),
                    slot.shape()
                )));
            }
            *slot = src.clone();
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }
}

/// Glorot-normal weight matrix.
pub fn glorot(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| std * rng.gaussian())
}

/// Fully connected layer `y = x·W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    /// 1 × out
    pub bias: Matrix,
}

impl Linear {
    pub fn new(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: glorot(rng, fan_in, fan_out),
            bias: Matrix::zeros(1, fan_out),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Matrix::zeros(fan_in, fan_out),
            bias: Matrix::zeros(1, fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut out = x.matmul(&self.weight);
        out.add_row_broadcast(self.bias.as_slice());
        out
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    pub fn backward(&self, x: &Matrix, grad_out: &Matrix, grad: &mut Linear) -> Matrix {
        grad.weight.add_assign(&x.t_matmul(grad_out));
        for (g, s) in grad.bias.as_mut_slice().iter_mut().zip(grad_out.column_sums()) {
            *g += s;
        }
        grad_out.matmul_t(&self.weight)
    }

    pub(crate) fn push_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub(crate) fn push_tensors_mut<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, &'a mut Matrix)>,
    ) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }
}

impl ParamSet for Linear {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut v = Vec::new();
        self.push_tensors("linear", &mut v);
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut v = Vec::new();
        self.push_tensors_mut("linear", &mut v);
        v
    }
}

/// Two-layer perceptron `in → hidden (tanh) → out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp {
    pub fn new(rng: &mut Rng, d_in: usize, d_hidden: usize, d_out: usize) -> Self {
        Mlp {
            hidden: Linear::new(rng, d_in, d_hidden),
            output: Linear::new(rng, d_hidden, d_out),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            hidden: Linear::zeros(self.hidden.fan_in(), self.hidden.fan_out()),
            output: Linear::zeros(self.output.fan_in(), self.output.fan_out()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.output.fan_out()
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let h = self.hidden.forward(x).map(f64::tanh);
        self.output.forward(&h)
    }

    /// Mean squared error over all entries, with its gradient.
    pub fn mse_loss_and_grad(&self, x: &Matrix, target: &Matrix) -> (f64, Mlp) {
        let h = self.hidden.forward(x).map(f64::tanh);
        let y = self.output.forward(&h);
        let n = (y.rows() * y.cols()).max(1) as f64;
        let diff = y.sub(target);
        let loss = diff.as_slice().iter().map(|d| d * d).sum::<f64>() / n;
        let d_y = diff.scale(2.0 / n);
        let mut grad = self.zeros_like();
        let d_h = self.output.backward(&h, &d_y, &mut grad.output);
        let mut d_pre = d_h;
        for (g, a) in d_pre.as_mut_slice().iter_mut().zip(h.as_slice()) {
            *g *= 1.0 - a * a;
        }
        self.hidden.backward(x, &d_pre, &mut grad.hidden);
        (loss, grad)
    }

    pub fn mse(&self, x: &Matrix, target: &Matrix) -> f64 {
        let y = self.forward(x);
        let n = (y.rows() * y.cols()).max(1) as f64;
        y.sub(target).as_slice().iter().map(|d| d * d).sum::<f64>() / n
    }

    /// Minibatch SGD on mean squared error. Returns the final epoch's mean
    /// batch loss (`None` when `epochs == 0`).
    pub fn train_sgd(
        &mut self,
        x: &Matrix,
        target: &Matrix,
        epochs: usize,
        lr: f64,
        batch_size: usize,
        rng: &mut Rng,
    ) -> Option<f64> {
        let n = x.rows();
        let batch_size = batch_size.max(1);
        let mut order: Vec<usize> = (0..n).collect();
        let mut last = None;
        for _ in 0..epochs {
            rng.shuffle(&mut order);
            let mut total = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(batch_size) {
                let (loss, grad) = self.mse_loss_and_grad(&x.select_rows(chunk), &target.select_rows(chunk));
                sgd_step(self, &grad, lr);
                total += loss;
                batches += 1;
            }
            if batches > 0 {
                last = Some(total / batches as f64);
            }
        }
        last
    }
}

impl ParamSet for Mlp {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut v = Vec::new();
        self.hidden.push_tensors("hidden", &mut v);
        self.output.push_tensors("output", &mut v);
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut v = Vec::new();
        self.hidden.push_tensors_mut("hidden", &mut v);
        self.output.push_tensors_mut("output", &mut v);
        v
    }
}

pub fn sgd_step<P: ParamSet>(params: &mut P, grad: &P, lr: f64) {
    for ((_, p), (_, g)) in params.tensors_mut().into_iter().zip(grad.tensors()) {
        p.axpy(-lr, g);
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step<P: ParamSet>(&mut self, params: &mut P, grad: &P) {
        let grads = grad.tensors();
        if self.first.is_empty() {
            self.first = grads.iter().map(|(_, g)| vec![0.0; g.as_slice().len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, ((_, p), (_, g))) in params.tensors_mut().into_iter().zip(grads).enumerate() {
            let m = &mut self.first[k];
            let v = &mut self.second[k];
            for (i, (w, &gi)) in p.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
