use crate::error::Result;
use crate::layers::{AffineLayer, LstmLayer};
use crate::numerics::{Matrix, Pcg32};

/// One or two LSTM layers followed by a per-frame affine output layer.
/// Layer l consumes the hidden sequence of layer l-1; hidden and cell state
/// reset to zero at every sequence start, so sequences are independent.
#[derive(Debug, Clone)]
pub struct StackedLstm {
    pub lstm: Vec<LstmLayer>,
    pub output: AffineLayer,
    input_dim: usize,
    hidden_size: usize,
    num_classes: usize,
}

impl StackedLstm {
    pub fn new(
        input_dim: usize,
        num_layers: usize,
        hidden_size: usize,
        num_classes: usize,
        rng: &mut Pcg32,
    ) -> Self {
        assert!(num_layers >= 1, "need at least one LSTM layer");
        let mut lstm = Vec::with_capacity(num_layers);
        let mut prev = input_dim;
        for _ in 0..num_layers {
            let mut layer = LstmLayer::new(prev, hidden_size);
            layer.init(rng);
            lstm.push(layer);
            prev = hidden_size;
        }
        let mut output = AffineLayer::new(hidden_size, num_classes);
        output.init(rng);
        StackedLstm {
            lstm,
            output,
            input_dim,
            hidden_size,
            num_classes,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn num_layers(&self) -> usize {
        self.lstm.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Forward over one sequence (T x D), producing per-frame logits (T x K).
    pub fn forward_logits(&mut self, sequence: &Matrix) -> Result<Matrix> {
        let mut h = sequence.clone();
        for layer in &mut self.lstm {
            h = layer.forward_sequence(&h)?;
        }
        self.output.forward(&h)
    }

    pub fn forward_logits_frozen(&self, sequence: &Matrix) -> Result<Matrix> {
        let mut h = sequence.clone();
        for layer in &self.lstm {
            h = layer.forward_sequence_frozen(&h)?;
        }
        self.output.forward_frozen(&h)
    }

    /// BPTT through the whole stack from per-frame logit gradients.
    pub fn backward(&mut self, grad_logits: &Matrix) -> Result<Matrix> {
        let mut g = self.output.backward(grad_logits)?;
        for layer in self.lstm.iter_mut().rev() {
            g = layer.backward_sequence(&g)?;
        }
        Ok(g)
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.lstm {
            layer.zero_grads();
        }
        self.output.zero_grads();
    }

    pub fn reinit_output_layer(&mut self, rng: &mut Pcg32) {
        self.output.init(rng);
    }

    pub fn params_and_grads(&mut self) -> Vec<(&mut Matrix, &mut Matrix)> {
        let mut out = Vec::new();
        for layer in &mut self.lstm {
            out.push((&mut layer.input_weights, &mut layer.grad_input_weights));
            out.push((
                &mut layer.recurrent_weights,
                &mut layer.grad_recurrent_weights,
            ));
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
    use crate::layers::{ce_hard, ce_soft, Temperature};

    #[test]
    fn sequences_do_not_leak_state() {
        let mut rng = Pcg32::new(7, 1);
        let model = StackedLstm::new(3, 2, 4, 2, &mut rng);
        let mut a = Matrix::zeros(5, 3);
        let mut b = Matrix::zeros(4, 3);
        for v in a.data_mut() {
            *v = rng.gaussian(0.0, 1.0).unwrap();
        }
        for v in b.data_mut() {
            *v = rng.gaussian(0.0, 1.0).unwrap();
        }
        let a_then_b = (
            model.forward_logits_frozen(&a).unwrap(),
            model.forward_logits_frozen(&b).unwrap(),
        );
        let b_then_a = (
            model.forward_logits_frozen(&b).unwrap(),
            model.forward_logits_frozen(&a).unwrap(),
        );
        assert_eq!(a_then_b.0, b_then_a.1);
        assert_eq!(a_then_b.1, b_then_a.0);
    }

    fn check_gradients(loss_temp: Option<Temperature>) {
        let mut rng = Pcg32::new(8, 2);
        let mut model = StackedLstm::new(4, 2, 4, 3, &mut rng);
        let mut xs = Matrix::zeros(4, 4);
        for v in xs.data_mut() {
            *v = rng.gaussian(0.0, 1.0).unwrap();
        }
        let labels = [0usize, 2, 1, 1];
        let soft: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let raw: Vec<f64> = (0..3).map(|_| rng.next_f64() + 0.1).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect();

        let loss_of = |m: &StackedLstm, xs: &Matrix| -> f64 {
            let logits = m.forward_logits_frozen(xs).unwrap();
            let mut total = 0.0;
            for t in 0..logits.rows() {
                total += match loss_temp {
                    None => ce_hard(labels[t], logits.row(t)).unwrap().0,
                    Some(temp) => ce_soft(&soft[t], logits.row(t), temp).unwrap().0,
                };
            }
            total / logits.rows() as f64
        };

        model.zero_grads();
        let logits = model.forward_logits(&xs).unwrap();
        let mut grad = Matrix::zeros(4, 3);
        for t in 0..4 {
            let g = match loss_temp {
                None => ce_hard(labels[t], logits.row(t)).unwrap().1,
                Some(temp) => ce_soft(&soft[t], logits.row(t), temp).unwrap().1,
            };
            for (c, v) in g.iter().enumerate() {
                grad.set(t, c, v / 4.0);
            }
        }
        model.backward(&grad).unwrap();

        let h = 1e-5;
        let num_params = model.params_and_grads().len();
        for p_idx in 0..num_params {
            let len = model.params_and_grads()[p_idx].0.data().len();
            for idx in 0..len {
                let mut mp = model.clone();
                let mut mm = model.clone();
                mp.params_and_grads()[p_idx].0.data_mut()[idx] += h;
                mm.params_and_grads()[p_idx].0.data_mut()[idx] -= h;
                let numeric = (loss_of(&mp, &xs) - loss_of(&mm, &xs)) / (2.0 * h);
                let analytic = model.params_and_grads()[p_idx].1.data()[idx];
                let denom = analytic.abs().max(numeric.abs()).max(1e-5);
                assert!(
                    ((analytic - numeric) / denom).abs() < 1e-5,
                    "param {p_idx} idx {idx}: analytic={analytic} numeric={numeric}"
                );
            }
        }
    }

    #[test]
    fn stacked_gradient_matches_finite_differences_hard() {
        check_gradients(None);
    }

    #[test]
    fn stacked_gradient_matches_finite_differences_soft() {
        check_gradients(Some(Temperature::new(2.0).unwrap()));
    }
}
