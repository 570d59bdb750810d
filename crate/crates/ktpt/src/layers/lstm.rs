use crate::error::{KtError, Result};
use crate::layers::{sigmoid, sigmoid_grad_from_output, tanh_grad_from_output};
use crate::numerics::{Matrix, Pcg32};

/// Standard four-gate LSTM cell applied over a whole sequence, with full
/// backpropagation through time. Gate order in the stacked 4H dimension is
/// fixed as [input, forget, cell-candidate, output]. No peepholes, no
/// projection. Hidden and cell state start at zero for every sequence.
#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub input_weights: Matrix,     // 4H x D
    pub recurrent_weights: Matrix, // 4H x H
    pub bias: Matrix,              // 1 x 4H
    pub grad_input_weights: Matrix,
    pub grad_recurrent_weights: Matrix,
    pub grad_bias: Matrix,
    hidden_size: usize,
    input_dim: usize,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    inputs: Matrix, // T x D
    gate_i: Matrix, // T x H, post-sigmoid
    gate_f: Matrix,
    gate_g: Matrix, // post-tanh candidate
    gate_o: Matrix,
    cell: Matrix,      // T x H
    tanh_cell: Matrix, // T x H
    hidden: Matrix,    // T x H
}

impl LstmLayer {
    pub fn new(input_dim: usize, hidden_size: usize) -> Self {
        LstmLayer {
            input_weights: Matrix::zeros(4 * hidden_size, input_dim),
            recurrent_weights: Matrix::zeros(4 * hidden_size, hidden_size),
            bias: Matrix::zeros(1, 4 * hidden_size),
            grad_input_weights: Matrix::zeros(4 * hidden_size, input_dim),
            grad_recurrent_weights: Matrix::zeros(4 * hidden_size, hidden_size),
            grad_bias: Matrix::zeros(1, 4 * hidden_size),
            hidden_size,
            input_dim,
            cache: None,
        }
    }

    /// Gaussian init with stddev 1/sqrt(fan_in). The forget-gate bias slice
    /// is set to 1.0, all other biases to 0.
    pub fn init(&mut self, rng: &mut Pcg32) {
        let sd_in = 1.0 / (self.input_dim as f64).sqrt();
        for v in self.input_weights.data_mut() {
            *v = rng.gaussian(0.0, sd_in).expect("valid stddev");
        }
        let sd_rec = 1.0 / (self.hidden_size as f64).sqrt();
        for v in self.recurrent_weights.data_mut() {
            *v = rng.gaussian(0.0, sd_rec).expect("valid stddev");
        }
        self.bias.fill(0.0);
        let h = self.hidden_size;
        for j in h..2 * h {
            self.bias.set(0, j, 1.0);
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    /// One cell update without touching the sequence cache. Returns
    /// (h_t, c_t).
    pub fn step_frozen(
        &self,
        x_t: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (i, f, g, o) = self.gates(x_t, h_prev)?;
        let h = self.hidden_size;
        let mut c_t = vec![0.0; h];
        let mut h_t = vec![0.0; h];
        for j in 0..h {
            c_t[j] = f[j] * c_prev[j] + i[j] * g[j];
            h_t[j] = o[j] * c_t[j].tanh();
        }
        Ok((h_t, c_t))
    }

    fn gates(&self, x_t: &[f64], h_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        if x_t.len() != self.input_dim {
            return Err(KtError::shape(
                "lstm step input",
                (1, x_t.len()),
                (1, self.input_dim),
            ));
        }
        let h = self.hidden_size;
        let mut pre = vec![0.0; 4 * h];
        for (row, p) in pre.iter_mut().enumerate() {
            let wx = self.input_weights.row(row);
            let wh = self.recurrent_weights.row(row);
            let mut acc = self.bias.get(0, row);
            for (w, x) in wx.iter().zip(x_t.iter()) {
                acc += w * x;
            }
            for (w, hp) in wh.iter().zip(h_prev.iter()) {
                acc += w * hp;
            }
            *p = acc;
        }
        let i: Vec<f64> = pre[0..h].iter().map(|&a| sigmoid(a)).collect();
        let f: Vec<f64> = pre[h..2 * h].iter().map(|&a| sigmoid(a)).collect();
        let g: Vec<f64> = pre[2 * h..3 * h].iter().map(|&a| a.tanh()).collect();
        let o: Vec<f64> = pre[3 * h..4 * h].iter().map(|&a| sigmoid(a)).collect();
        Ok((i, f, g, o))
    }

    /// Runs the cell over a T x D sequence from zero initial state and caches
    /// everything `backward_sequence` needs. Returns the T x H hidden
    /// sequence.
    pub fn forward_sequence(&mut self, xs: &Matrix) -> Result<Matrix> {
        let t_len = xs.rows();
        let h = self.hidden_size;
        let mut cache = Cache {
            inputs: xs.clone(),
            gate_i: Matrix::zeros(t_len, h),
            gate_f: Matrix::zeros(t_len, h),
            gate_g: Matrix::zeros(t_len, h),
            gate_o: Matrix::zeros(t_len, h),
            cell: Matrix::zeros(t_len, h),
            tanh_cell: Matrix::zeros(t_len, h),
            hidden: Matrix::zeros(t_len, h),
        };
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for t in 0..t_len {
            let (i, f, g, o) = self.gates(xs.row(t), &h_prev)?;
            for j in 0..h {
                let c = f[j] * c_prev[j] + i[j] * g[j];
                let tc = c.tanh();
                cache.gate_i.set(t, j, i[j]);
                cache.gate_f.set(t, j, f[j]);
                cache.gate_g.set(t, j, g[j]);
                cache.gate_o.set(t, j, o[j]);
                cache.cell.set(t, j, c);
                cache.tanh_cell.set(t, j, tc);
                cache.hidden.set(t, j, o[j] * tc);
            }
            h_prev.copy_from_slice(cache.hidden.row(t));
            c_prev.copy_from_slice(cache.cell.row(t));
        }
        let out = cache.hidden.clone();
        self.cache = Some(cache);
        Ok(out)
    }

    /// Evaluation-only forward over a sequence; no cache is written.
    pub fn forward_sequence_frozen(&self, xs: &Matrix) -> Result<Matrix> {
        let h = self.hidden_size;
        let mut out = Matrix::zeros(xs.rows(), h);
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for t in 0..xs.rows() {
            let (h_t, c_t) = self.step_frozen(xs.row(t), &h_prev, &c_prev)?;
            out.row_mut(t).copy_from_slice(&h_t);
            h_prev = h_t;
            c_prev = c_t;
        }
        Ok(out)
    }

    /// Full BPTT over the cached sequence. `upstream` is the T x H gradient
    /// of the loss with respect to the hidden sequence; returns the T x D
    /// gradient with respect to the inputs and accumulates parameter grads.
    pub fn backward_sequence(&mut self, upstream: &Matrix) -> Result<Matrix> {
        let cache = self.cache.take().ok_or_else(|| {
            KtError::State("lstm backward called without a cached forward".into())
        })?;
        let t_len = cache.inputs.rows();
        let h = self.hidden_size;
        if upstream.shape() != (t_len, h) {
            return Err(KtError::shape("lstm backward", upstream.shape(), (t_len, h)));
        }
        let mut dx = Matrix::zeros(t_len, self.input_dim);
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut d_pre = vec![0.0; 4 * h];
        for t in (0..t_len).rev() {
            for j in 0..h {
                let i = cache.gate_i.get(t, j);
                let f = cache.gate_f.get(t, j);
                let g = cache.gate_g.get(t, j);
                let o = cache.gate_o.get(t, j);
                let tc = cache.tanh_cell.get(t, j);
                let c_prev = if t > 0 { cache.cell.get(t - 1, j) } else { 0.0 };

                let dh = upstream.get(t, j) + dh_next[j];
                let d_o = dh * tc;
                let dc = dc_next[j] + dh * o * tanh_grad_from_output(tc);
                let d_i = dc * g;
                let d_g = dc * i;
                let d_f = dc * c_prev;
                dc_next[j] = dc * f;

                d_pre[j] = d_i * sigmoid_grad_from_output(i);
                d_pre[h + j] = d_f * sigmoid_grad_from_output(f);
                d_pre[2 * h + j] = d_g * tanh_grad_from_output(g);
                d_pre[3 * h + j] = d_o * sigmoid_grad_from_output(o);
            }
            let x_t = cache.inputs.row(t);
            let h_prev: &[f64] = if t > 0 { cache.hidden.row(t - 1) } else { &[] };
            for (row, &dp) in d_pre.iter().enumerate() {
                if dp == 0.0 {
                    continue;
                }
                {
                    let gw = self.grad_input_weights.row_mut(row);
                    for (g, &x) in gw.iter_mut().zip(x_t.iter()) {
                        *g += dp * x;
                    }
                }
                if t > 0 {
                    let gr = self.grad_recurrent_weights.row_mut(row);
                    for (g, &hp) in gr.iter_mut().zip(h_prev.iter()) {
                        *g += dp * hp;
                    }
                }
                *self
                    .grad_bias
                    .row_mut(0)
                    .get_mut(row)
                    .expect("bias row covers 4H") += dp;
                let dx_row = dx.row_mut(t);
                let wx = self.input_weights.row(row);
                for (d, &w) in dx_row.iter_mut().zip(wx.iter()) {
                    *d += dp * w;
                }
            }
            // dh for the previous step.
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            if t > 0 {
                for (row, &dp) in d_pre.iter().enumerate() {
                    if dp == 0.0 {
                        continue;
                    }
                    let wh = self.recurrent_weights.row(row);
                    for (d, &w) in dh_next.iter_mut().zip(wh.iter()) {
                        *d += dp * w;
                    }
                }
            }
        }
        Ok(dx)
    }

    pub fn zero_grads(&mut self) {
        self.grad_input_weights.fill(0.0);
        self.grad_recurrent_weights.fill(0.0);
        self.grad_bias.fill(0.0);
        self.cache = None;
    }
}
