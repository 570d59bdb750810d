use crate::error::Result;
use crate::layers::{sigmoid, sigmoid_grad_from_output, AffineLayer};
use crate::numerics::{Matrix, Pcg32};

/// Feed-forward network with sigmoid hidden layers and a linear output layer
/// producing per-frame logits.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub hidden: Vec<AffineLayer>,
    pub output: AffineLayer,
    input_dim: usize,
    hidden_sizes: Vec<usize>,
    num_classes: usize,
    cached_activations: Vec<Matrix>,
}

impl Mlp {
    pub fn new(input_dim: usize, hidden_sizes: &[usize], num_classes: usize, rng: &mut Pcg32) -> Self {
        let mut hidden = Vec::with_capacity(hidden_sizes.len());
        let mut prev = input_dim;
        for &size in hidden_sizes {
            let mut layer = AffineLayer::new(prev, size);
            layer.init(rng);
            hidden.push(layer);
            prev = size;
        }
        let mut output = AffineLayer::new(prev, num_classes);
        output.init(rng);
        Mlp {
            hidden,
            output,
            input_dim,
            hidden_sizes: hidden_sizes.to_vec(),
            num_classes,
            cached_activations: Vec::new(),
        }
    }

    /// Builds an MLP from already-initialized layers (used when stacking
    /// pre-trained RBMs). Dims must chain; the caller guarantees it.
    pub(crate) fn from_layers(
        hidden: Vec<AffineLayer>,
        output: AffineLayer,
        input_dim: usize,
        num_classes: usize,
    ) -> Self {
        let hidden_sizes = hidden.iter().map(|l| l.out_dim()).collect();
        Mlp {
            hidden,
            output,
            input_dim,
            hidden_sizes,
            num_classes,
            cached_activations: Vec::new(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_sizes(&self) -> &[usize] {
        &self.hidden_sizes
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn forward_logits(&mut self, batch: &Matrix) -> Result<Matrix> {
        self.cached_activations.clear();
        let mut a = batch.clone();
        for layer in &mut self.hidden {
            let z = layer.forward(&a)?;
            a = z.map(sigmoid);
            self.cached_activations.push(a.clone());
        }
        self.output.forward(&a)
    }

    pub fn forward_logits_frozen(&self, batch: &Matrix) -> Result<Matrix> {
        let mut a = batch.clone();
        for layer in &self.hidden {
            a = layer.forward_frozen(&a)?.map(sigmoid);
        }
        self.output.forward_frozen(&a)
    }

    /// Backward from per-frame logit gradients; returns the input gradient.
    pub fn backward(&mut self, grad_logits: &Matrix) -> Result<Matrix> {
        let mut g = self.output.backward(grad_logits)?;
        for (layer, act) in self
            .hidden
            .iter_mut()
            .zip(self.cached_activations.iter())
            .rev()
        {
            // Through the sigmoid: dz = da * s(1-s).
            let mut dz = g.clone();
            for (d, &s) in dz.data_mut().iter_mut().zip(act.data().iter()) {
                *d *= sigmoid_grad_from_output(s);
            }
            g = layer.backward(&dz)?;
        }
        Ok(g)
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.hidden {
            layer.zero_grads();
        }
        self.output.zero_grads();
        self.cached_activations.clear();
    }

    /// Redraws the output layer from the standard init and zeroes its bias;
    /// hidden layers are untouched.
    pub fn reinit_output_layer(&mut self, rng: &mut Pcg32) {
        self.output.init(rng);
    }

    pub fn params_and_grads(&mut self) -> Vec<(&mut Matrix, &mut Matrix)> {
        let mut out = Vec::new();
        for layer in &mut self.hidden {
            out.push((&mut layer.weights, &mut layer.grad_weights));
            out.push((&mut layer.bias, &mut layer.grad_bias));
        }
        out.push((&mut self.output.weights, &mut self.output.grad_weights));
        out.push((&mut self.output.bias, &mut self.output.grad_bias));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ce_hard;

    #[test]
    fn zero_parameters_give_zero_logits() {
        let mut rng = Pcg32::new(1, 1);
        let mut mlp = Mlp::new(3, &[4], 2, &mut rng);
        for layer in &mut mlp.hidden {
            layer.weights.fill(0.0);
            layer.bias.fill(0.0);
        }
        mlp.output.weights.fill(0.0);
        mlp.output.bias.fill(0.0);
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let logits = mlp.forward_logits(&x).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_set_single_layer_composition() {
        // Hidden layer with zero weights gives constant activation 0.5, so
        // logits reduce to 0.5 * row-sums of the output weights plus bias.
        let mut rng = Pcg32::new(2, 2);
        let mut mlp = Mlp::new(2, &[2], 2, &mut rng);
        for layer in &mut mlp.hidden {
            layer.weights.fill(0.0);
            layer.bias.fill(0.0);
        }
        mlp.output.weights =
            Matrix::from_rows(&[vec![1.0, 3.0], vec![-2.0, 4.0]]).unwrap();
        mlp.output.bias = Matrix::row_vector(&[0.5, -0.5]);
        let x = Matrix::from_rows(&[vec![7.0, -1.0], vec![0.0, 0.0]]).unwrap();
        let logits = mlp.forward_logits(&x).unwrap();
        for r in 0..2 {
            assert!((logits.get(r, 0) - (0.5 * 4.0 + 0.5)).abs() < 1e-12);
            assert!((logits.get(r, 1) - (0.5 * 2.0 - 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic_for_fixed_seed() {
        let build = || {
            let mut rng = Pcg32::new(0, 0);
            Mlp::new(5, &[6, 4], 3, &mut rng)
        };
        let mut a = build();
        let mut b = build();
        let x = Matrix::from_rows(&[vec![0.1, -0.2, 0.3, 0.4, -0.5]]).unwrap();
        assert_eq!(
            a.forward_logits(&x).unwrap(),
            b.forward_logits(&x).unwrap()
        );
    }

    #[test]
    fn reinit_output_layer_isolated() {
        let mut rng = Pcg32::new(3, 3);
        let mut mlp = Mlp::new(4, &[5, 5], 3, &mut rng);
        let before: Vec<Matrix> = mlp.hidden.iter().map(|l| l.weights.clone()).collect();
        let out_before = mlp.output.weights.clone();
        mlp.reinit_output_layer(&mut rng);
        for (l, b) in mlp.hidden.iter().zip(before.iter()) {
            assert_eq!(&l.weights, b);
        }
        assert_ne!(mlp.output.weights, out_before);
        assert!(mlp.output.bias.data().iter().all(|&v| v == 0.0));

        // Distinct streams give distinct redraws.
        let mut m2 = mlp.clone();
        let mut r1 = Pcg32::new(9, 1);
        let mut r2 = Pcg32::new(9, 2);
        mlp.reinit_output_layer(&mut r1);
        m2.reinit_output_layer(&mut r2);
        assert_ne!(mlp.output.weights, m2.output.weights);
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let mut rng = Pcg32::new(4, 4);
        let mut mlp = Mlp::new(4, &[5], 3, &mut rng);
        let mut x = Matrix::zeros(2, 4);
        for v in x.data_mut() {
            *v = rng.gaussian(0.0, 1.0).unwrap();
        }
        let labels = [1usize, 2usize];

        let loss_of = |m: &Mlp, x: &Matrix| -> f64 {
            let logits = m.forward_logits_frozen(x).unwrap();
            let mut total = 0.0;
            for (r, &label) in labels.iter().enumerate() {
                total += ce_hard(label, logits.row(r)).unwrap().0;
            }
            total / labels.len() as f64
        };

        mlp.zero_grads();
        let logits = mlp.forward_logits(&x).unwrap();
        let mut grad = Matrix::zeros(2, 3);
        for (r, &label) in labels.iter().enumerate() {
            let (_, g) = ce_hard(label, logits.row(r)).unwrap();
            for (c, v) in g.iter().enumerate() {
                grad.set(r, c, v / labels.len() as f64);
            }
        }
        mlp.backward(&grad).unwrap();

        let h = 1e-5;
        let num_params = mlp.params_and_grads().len();
        for p_idx in 0..num_params {
            let len = mlp.params_and_grads()[p_idx].0.data().len();
            for idx in 0..len {
                let mut mp = mlp.clone();
                let mut mm = mlp.clone();
                mp.params_and_grads()[p_idx].0.data_mut()[idx] += h;
                mm.params_and_grads()[p_idx].0.data_mut()[idx] -= h;
                let numeric = (loss_of(&mp, &x) - loss_of(&mm, &x)) / (2.0 * h);
                let analytic = mlp.params_and_grads()[p_idx].1.data()[idx];
                let denom = analytic.abs().max(numeric.abs()).max(1e-5);
                assert!(
                    ((analytic - numeric) / denom).abs() < 1e-5,
                    "param {p_idx} idx {idx}: analytic={analytic} numeric={numeric}"
                );
            }
        }
    }
}
