use crate::error::{KtError, Result};
use crate::numerics::{Matrix, Pcg32};

/// Affine transform y = x W^T + b with gradient accumulation.
/// Weights are out x in; the bias is a 1 x out row broadcast over the batch.
#[derive(Debug, Clone)]
pub struct AffineLayer {
    pub weights: Matrix,
    pub bias: Matrix,
    pub grad_weights: Matrix,
    pub grad_bias: Matrix,
    cached_input: Option<Matrix>,
}

impl AffineLayer {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        AffineLayer {
            weights: Matrix::zeros(out_dim, in_dim),
            bias: Matrix::zeros(1, out_dim),
            grad_weights: Matrix::zeros(out_dim, in_dim),
            grad_bias: Matrix::zeros(1, out_dim),
            cached_input: None,
        }
    }

    /// Gaussian init with stddev 1/sqrt(fan_in), bias zero.
    pub fn init(&mut self, rng: &mut Pcg32) {
        let stddev = 1.0 / (self.in_dim() as f64).sqrt();
        for v in self.weights.data_mut() {
            *v = rng.gaussian(0.0, stddev).expect("valid stddev");
        }
        self.bias.fill(0.0);
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    /// Forward pass that caches the input for a subsequent `backward`.
    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let y = self.forward_frozen(x)?;
        self.cached_input = Some(x.clone());
        Ok(y)
    }

    /// Evaluation-only forward; leaves no cache and takes `&self`.
    pub fn forward_frozen(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(KtError::shape("affine forward", x.shape(), self.weights.shape()));
        }
        let mut y = x.matmul_transpose(&self.weights)?;
        for r in 0..y.rows() {
            let bias = self.bias.row(0);
            for (v, b) in y.row_mut(r).iter_mut().zip(bias.iter()) {
                *v += b;
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients from the cached input and returns the
    /// gradient with respect to the input.
    pub fn backward(&mut self, upstream: &Matrix) -> Result<Matrix> {
        let x = self.cached_input.as_ref().ok_or_else(|| {
            KtError::State("affine backward called without a cached forward".into())
        })?;
        if upstream.shape() != (x.rows(), self.out_dim()) {
            return Err(KtError::shape(
                "affine backward",
                upstream.shape(),
                (x.rows(), self.out_dim()),
            ));
        }
        let dw = upstream.transpose_matmul(x)?;
        self.grad_weights.add_assign(&dw)?;
        for r in 0..upstream.rows() {
            let row = upstream.row(r);
            for (g, u) in self.grad_bias.row_mut(0).iter_mut().zip(row.iter()) {
                *g += u;
            }
        }
        upstream.matmul(&self.weights)
    }

    pub fn zero_grads(&mut self) {
        self.grad_weights.fill(0.0);
        self.grad_bias.fill(0.0);
        self.cached_input = None;
    }
}
