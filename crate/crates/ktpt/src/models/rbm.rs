use crate::error::{KtError, Result};
use crate::layers::{sigmoid, AffineLayer};
use crate::models::Mlp;
use crate::numerics::{Matrix, Pcg32};

/// Visible unit family. Gaussian visibles (unit variance, for standardized
/// real features) are only used for the first RBM in a stack; deeper RBMs
/// are Bernoulli-Bernoulli over hidden probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VisibleType {
    Gaussian,
    Bernoulli,
}

/// Restricted Boltzmann machine trained with one-step contrastive
/// divergence.
#[derive(Debug, Clone)]
pub struct Rbm {
    pub weights: Matrix,      // H x V
    pub visible_bias: Matrix, // 1 x V
    pub hidden_bias: Matrix,  // 1 x H
    pub visible_type: VisibleType,
}

impl Rbm {
    pub fn new(num_visible: usize, num_hidden: usize, visible_type: VisibleType, rng: &mut Pcg32) -> Self {
        let mut weights = Matrix::zeros(num_hidden, num_visible);
        for v in weights.data_mut() {
            *v = rng.gaussian(0.0, 0.01).expect("valid stddev");
        }
        Rbm {
            weights,
            visible_bias: Matrix::zeros(1, num_visible),
            hidden_bias: Matrix::zeros(1, num_hidden),
            visible_type,
        }
    }

    pub fn num_visible(&self) -> usize {
        self.weights.cols()
    }

    pub fn num_hidden(&self) -> usize {
        self.weights.rows()
    }

    /// P(h=1 | v) = sigmoid(v W^T + hidden_bias), row per batch element.
    pub fn hidden_probs(&self, visible: &Matrix) -> Result<Matrix> {
        if visible.cols() != self.num_visible() {
            return Err(KtError::shape(
                "rbm hidden_probs",
                visible.shape(),
                self.weights.shape(),
            ));
        }
        let mut pre = visible.matmul_transpose(&self.weights)?;
        for r in 0..pre.rows() {
            for (v, b) in pre.row_mut(r).iter_mut().zip(self.hidden_bias.row(0).iter()) {
                *v = sigmoid(*v + b);
            }
        }
        Ok(pre)
    }

    /// Reconstruction mean given hidden values: sigmoid for Bernoulli
    /// visibles, the raw affine mean for Gaussian visibles.
    fn visible_mean(&self, hidden: &Matrix) -> Result<Matrix> {
        let mut pre = hidden.matmul(&self.weights)?;
        for r in 0..pre.rows() {
            for (v, b) in pre.row_mut(r).iter_mut().zip(self.visible_bias.row(0).iter()) {
                *v += b;
                if self.visible_type == VisibleType::Bernoulli {
                    *v = sigmoid(*v);
                }
            }
        }
        Ok(pre)
    }

    /// One CD-1 update on a batch. Hidden states are sampled to produce the
    /// reconstruction; expectations in the update use probabilities; the
    /// reconstruction itself uses probabilities/means. Returns the mean
    /// squared reconstruction error over the batch.
    pub fn cd1_step(&mut self, batch: &Matrix, learning_rate: f64, rng: &mut Pcg32) -> Result<f64> {
        if batch.cols() != self.num_visible() {
            return Err(KtError::shape("rbm cd1_step", batch.shape(), self.weights.shape()));
        }
        let n = batch.rows() as f64;
        let h0_prob = self.hidden_probs(batch)?;
        let mut h0_sample = h0_prob.clone();
        for v in h0_sample.data_mut() {
            *v = if rng.next_f64() < *v { 1.0 } else { 0.0 };
        }
        let v1 = self.visible_mean(&h0_sample)?;
        let h1_prob = self.hidden_probs(&v1)?;

        if learning_rate != 0.0 {
            let positive = h0_prob.transpose_matmul(batch)?; // H x V
            let negative = h1_prob.transpose_matmul(&v1)?;
            let scale = learning_rate / n;
            for ((w, p), ng) in self
                .weights
                .data_mut()
                .iter_mut()
                .zip(positive.data().iter())
                .zip(negative.data().iter())
            {
                *w += scale * (p - ng);
            }
            for c in 0..self.num_visible() {
                let mut delta = 0.0;
                for r in 0..batch.rows() {
                    delta += batch.get(r, c) - v1.get(r, c);
                }
                let b = self.visible_bias.get(0, c);
                self.visible_bias.set(0, c, b + scale * delta);
            }
            for c in 0..self.num_hidden() {
                let mut delta = 0.0;
                for r in 0..batch.rows() {
                    delta += h0_prob.get(r, c) - h1_prob.get(r, c);
                }
                let b = self.hidden_bias.get(0, c);
                self.hidden_bias.set(0, c, b + scale * delta);
            }
        }

        let mut err = 0.0;
        for (a, b) in batch.data().iter().zip(v1.data().iter()) {
            err += (a - b) * (a - b);
        }
        Ok(err / batch.data().len() as f64)
    }
}

/// Greedy deep-belief-net stacking: each RBM's (weights, hidden_bias) become
/// a sigmoid hidden layer, so the MLP hidden forward equals the RBM
/// hidden-probability pass exactly. The output layer is randomly
/// initialized.
pub fn stack_rbms_into_mlp(rbms: &[Rbm], num_classes: usize, rng: &mut Pcg32) -> Result<Mlp> {
    if rbms.is_empty() {
        return Err(KtError::Argument("no RBMs to stack".into()));
    }
    for pair in rbms.windows(2) {
        if pair[0].num_hidden() != pair[1].num_visible() {
            return Err(KtError::shape(
                "rbm stack dim chain",
                pair[0].weights.shape(),
                pair[1].weights.shape(),
            ));
        }
    }
    let input_dim = rbms[0].num_visible();
    let mut hidden = Vec::with_capacity(rbms.len());
    for rbm in rbms {
        let mut layer = AffineLayer::new(rbm.num_visible(), rbm.num_hidden());
        layer.weights = rbm.weights.clone();
        layer.bias = rbm.hidden_bias.clone();
        hidden.push(layer);
    }
    let last = rbms.last().expect("non-empty").num_hidden();
    let mut output = AffineLayer::new(last, num_classes);
    output.init(rng);
    Ok(Mlp::from_layers(hidden, output, input_dim, num_classes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rbm_hidden_probs_are_half() {
        let mut rng = Pcg32::new(1, 1);
        let mut rbm = Rbm::new(4, 3, VisibleType::Bernoulli, &mut rng);
        rbm.weights.fill(0.0);
        let v = Matrix::from_rows(&[vec![1.0, 0.0, 1.0, 1.0]]).unwrap();
        let h = rbm.hidden_probs(&v).unwrap();
        assert!(h.data().iter().all(|&p| (p - 0.5).abs() < 1e-15));
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut rng = Pcg32::new(2, 2);
        let mut rbm = Rbm::new(5, 4, VisibleType::Gaussian, &mut rng);
        let before = rbm.clone();
        let mut batch = Matrix::zeros(6, 5);
        for v in batch.data_mut() {
            *v = rng.gaussian(0.0, 1.0).unwrap();
        }
        rbm.cd1_step(&batch, 0.0, &mut rng).unwrap();
        assert_eq!(rbm.weights, before.weights);
        assert_eq!(rbm.visible_bias, before.visible_bias);
        assert_eq!(rbm.hidden_bias, before.hidden_bias);
    }

    #[test]
    fn reconstruction_error_improves_over_epochs() {
        let mut rng = Pcg32::new(3, 3);
        // Structured synthetic batch: two prototype patterns plus noise.
        let mut batch = Matrix::zeros(40, 6);
        for r in 0..40 {
            let proto = if r % 2 == 0 {
                [1.0, 1.0, 1.0, -1.0, -1.0, -1.0]
            } else {
                [-1.0, -1.0, -1.0, 1.0, 1.0, 1.0]
            };
            for c in 0..6 {
                batch.set(r, c, proto[c] + rng.gaussian(0.0, 0.2).unwrap());
            }
        }
        let mut rbm = Rbm::new(6, 8, VisibleType::Gaussian, &mut rng);
        let mut first = 0.0;
        let mut last = 0.0;
        for epoch in 0..10 {
            let err = rbm.cd1_step(&batch, 0.05, &mut rng).unwrap();
            if epoch == 0 {
                first = err;
            }
            last = err;
        }
        assert!(last < first, "reconstruction error did not improve: {first} -> {last}");
    }

    #[test]
    fn stacked_mlp_matches_rbm_hidden_pass() {
        let mut rng = Pcg32::new(4, 4);
        let rbm1 = Rbm::new(8, 16, VisibleType::Gaussian, &mut rng);
        let rbm2 = Rbm::new(16, 6, VisibleType::Bernoulli, &mut rng);
        let rbms = vec![rbm1, rbm2];
        let mlp = stack_rbms_into_mlp(&rbms, 4, &mut rng).unwrap();
        assert_eq!(mlp.input_dim(), 8);
        assert_eq!(mlp.hidden_sizes(), &[16, 6]);
        assert_eq!(mlp.num_classes(), 4);
        // Weights carried over bit-exactly.
        assert_eq!(mlp.hidden[0].weights, rbms[0].weights);
        assert_eq!(mlp.hidden[1].weights, rbms[1].weights);

        let mut x = Matrix::zeros(3, 8);
        for v in x.data_mut() {
            *v = rng.gaussian(0.0, 1.0).unwrap();
        }
        let h1 = rbms[0].hidden_probs(&x).unwrap();
        let h2 = rbms[1].hidden_probs(&h1).unwrap();
        let via_mlp_l1 = mlp.hidden[0].forward_frozen(&x).unwrap().map(sigmoid);
        let via_mlp_l2 = mlp.hidden[1].forward_frozen(&via_mlp_l1).unwrap().map(sigmoid);
        for (a, b) in via_mlp_l2.data().iter().zip(h2.data().iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn stack_rejects_broken_dim_chain() {
        let mut rng = Pcg32::new(5, 5);
        let rbm1 = Rbm::new(8, 16, VisibleType::Gaussian, &mut rng);
        let rbm2 = Rbm::new(10, 6, VisibleType::Bernoulli, &mut rng);
        assert!(stack_rbms_into_mlp(&[rbm1, rbm2], 4, &mut rng).is_err());
    }

    #[test]
    fn single_rbm_stack_shape() {
        let mut rng = Pcg32::new(6, 6);
        let rbm = Rbm::new(8, 16, VisibleType::Gaussian, &mut rng);
        let mlp = stack_rbms_into_mlp(&[rbm], 4, &mut rng).unwrap();
        assert_eq!(mlp.input_dim(), 8);
        assert_eq!(mlp.hidden_sizes(), &[16]);
        assert_eq!(mlp.num_classes(), 4);
    }
}
