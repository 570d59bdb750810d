//! Complete networks composed from the layer primitives: MLP teacher/student,
//! stacked-LSTM student and RBM, plus prediction, output-layer
//! re-initialization and the binary model container.

mod lstm_stack;
mod mlp;
mod rbm;
pub(crate) mod serialize;

pub use lstm_stack::StackedLstm;
pub use mlp::Mlp;
pub use rbm::{stack_rbms_into_mlp, Rbm, VisibleType};
pub use serialize::MODEL_FORMAT_VERSION;

use crate::error::Result;
use crate::numerics::{Matrix, Pcg32};
use std::path::Path;

/// A trainable student or teacher network. For an `Mlp` a batch is any stack
/// of independent frames; for a `Lstm` a batch is one sequence in time order.
#[derive(Debug, Clone)]
pub enum Network {
    Mlp(Mlp),
    Lstm(StackedLstm),
}

impl Network {
    pub fn forward_logits(&mut self, batch: &Matrix) -> Result<Matrix> {
        match self {
            Network::Mlp(m) => m.forward_logits(batch),
            Network::Lstm(m) => m.forward_logits(batch),
        }
    }

    pub fn forward_logits_frozen(&self, batch: &Matrix) -> Result<Matrix> {
        match self {
            Network::Mlp(m) => m.forward_logits_frozen(batch),
            Network::Lstm(m) => m.forward_logits_frozen(batch),
        }
    }

    /// Backward pass from per-frame logit gradients; accumulates parameter
    /// gradients for the batch last passed to `forward_logits`.
    pub fn backward(&mut self, grad_logits: &Matrix) -> Result<()> {
        match self {
            Network::Mlp(m) => m.backward(grad_logits).map(|_| ()),
            Network::Lstm(m) => m.backward(grad_logits).map(|_| ()),
        }
    }

    pub fn zero_grads(&mut self) {
        match self {
            Network::Mlp(m) => m.zero_grads(),
            Network::Lstm(m) => m.zero_grads(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Network::Mlp(m) => m.num_classes(),
            Network::Lstm(m) => m.num_classes(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Network::Mlp(m) => m.input_dim(),
            Network::Lstm(m) => m.input_dim(),
        }
    }

    pub fn is_sequence_model(&self) -> bool {
        matches!(self, Network::Lstm(_))
    }

    /// Per-frame argmax class prediction; ties break toward the lowest index.
    pub fn predict(&self, batch: &Matrix) -> Result<Vec<usize>> {
        let logits = self.forward_logits_frozen(batch)?;
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }

    pub fn reinit_output_layer(&mut self, rng: &mut Pcg32) {
        match self {
            Network::Mlp(m) => m.reinit_output_layer(rng),
            Network::Lstm(m) => m.reinit_output_layer(rng),
        }
    }

    /// Parameter/gradient pairs in a fixed declaration order; the optimizer's
    /// velocity buffers mirror this order.
    pub fn params_and_grads(&mut self) -> Vec<(&mut Matrix, &mut Matrix)> {
        match self {
            Network::Mlp(m) => m.params_and_grads(),
            Network::Lstm(m) => m.params_and_grads(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        serialize::save_network(self, path)
    }

    pub fn load(path: &Path) -> Result<Network> {
        serialize::load_network(path)
    }
}

/// Index of the largest value, first occurrence wins on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_basic_and_tie_break() {
        assert_eq!(argmax(&[0.0, 3.0, 1.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0, 0.0]), 0);
    }

    #[test]
    fn predict_agrees_with_softmax_argmax() {
        use crate::layers::{softmax_t, Temperature};
        let mut rng = Pcg32::new(21, 1);
        let mut mlp = Mlp::new(4, &[5], 3, &mut rng);
        let mut x = Matrix::zeros(6, 4);
        for v in x.data_mut() {
            *v = rng.gaussian(0.0, 1.0).unwrap();
        }
        let net = Network::Mlp(mlp.clone());
        let preds = net.predict(&x).unwrap();
        let logits = mlp.forward_logits(&x).unwrap();
        for &t in &[0.5, 1.0, 3.0] {
            let p = softmax_t(&logits, Temperature::new(t).unwrap()).unwrap();
            for (r, &pred) in preds.iter().enumerate() {
                assert_eq!(pred, argmax(p.row(r)));
            }
        }
    }
}
