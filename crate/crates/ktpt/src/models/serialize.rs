//! Binary model container: magic "KTPT", format version, model kind tag,
//! shape metadata, then parameters as little-endian f64 in declaration
//! order. Round-trips are bit-exact.

use crate::error::{KtError, Result};
use crate::layers::AffineLayer;
use crate::models::{Mlp, Network, Rbm, StackedLstm, VisibleType};
use crate::numerics::Matrix;
use std::fs;
use std::path::Path;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"KTPT";

const KIND_MLP: u8 = 0;
const KIND_LSTM: u8 = 1;
const KIND_RBM: u8 = 2;

#[derive(Default)]
pub(crate) struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        ByteWriter::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn matrix(&mut self, m: &Matrix) {
        for &v in m.data() {
            self.f64(v);
        }
    }

    pub fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        ByteReader { data, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(KtError::Format {
                offset: self.pos as u64,
                message: format!("truncated file while reading {what}"),
            });
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        self.take(n, what)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Matrix> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64(what)?);
        }
        Matrix::from_vec(rows, cols, data)
    }

    pub fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let offset = self.offset();
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| KtError::Format {
            offset,
            message: format!("invalid utf-8 in {what}"),
        })
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(KtError::Format {
                offset: self.pos as u64,
                message: format!("{} trailing bytes", self.data.len() - self.pos),
            });
        }
        Ok(())
    }
}

pub(crate) fn check_header(reader: &mut ByteReader, magic: &[u8; 4], version: u32) -> Result<()> {
    let got = reader.bytes(4, "magic")?;
    if got != magic {
        return Err(KtError::Format {
            offset: 0,
            message: format!(
                "bad magic {:?}, expected {:?}",
                got,
                std::str::from_utf8(magic).expect("ascii magic")
            ),
        });
    }
    let got_version = reader.u32("format version")?;
    if got_version != version {
        return Err(KtError::Format {
            offset: 4,
            message: format!("unsupported version {got_version}, expected {version}"),
        });
    }
    Ok(())
}

fn write_affine(w: &mut ByteWriter, layer: &AffineLayer) {
    w.matrix(&layer.weights);
    w.matrix(&layer.bias);
}

fn read_affine(r: &mut ByteReader, in_dim: usize, out_dim: usize) -> Result<AffineLayer> {
    let mut layer = AffineLayer::new(in_dim, out_dim);
    layer.weights = r.matrix(out_dim, in_dim, "affine weights")?;
    layer.bias = r.matrix(1, out_dim, "affine bias")?;
    Ok(layer)
}

pub(crate) fn encode_network(net: &Network) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(MAGIC);
    w.u32(MODEL_FORMAT_VERSION);
    match net {
        Network::Mlp(m) => {
            w.u8(KIND_MLP);
            w.u32(m.input_dim() as u32);
            w.u32(m.hidden_sizes().len() as u32);
            for &s in m.hidden_sizes() {
                w.u32(s as u32);
            }
            w.u32(m.num_classes() as u32);
            for layer in &m.hidden {
                write_affine(&mut w, layer);
            }
            write_affine(&mut w, &m.output);
        }
        Network::Lstm(m) => {
            w.u8(KIND_LSTM);
            w.u32(m.input_dim() as u32);
            w.u32(m.num_layers() as u32);
            w.u32(m.hidden_size() as u32);
            w.u32(m.num_classes() as u32);
            for layer in &m.lstm {
                w.matrix(&layer.input_weights);
                w.matrix(&layer.recurrent_weights);
                w.matrix(&layer.bias);
            }
            write_affine(&mut w, &m.output);
        }
    }
    w.into_vec()
}

pub(crate) fn decode_network(data: &[u8]) -> Result<Network> {
    let mut r = ByteReader::new(data);
    check_header(&mut r, MAGIC, MODEL_FORMAT_VERSION)?;
    let kind = r.u8("model kind")?;
    let net = match kind {
        KIND_MLP => {
            let input_dim = r.u32("input dim")? as usize;
            let num_hidden = r.u32("hidden layer count")? as usize;
            let mut sizes = Vec::with_capacity(num_hidden);
            for _ in 0..num_hidden {
                sizes.push(r.u32("hidden size")? as usize);
            }
            let num_classes = r.u32("class count")? as usize;
            let mut hidden = Vec::with_capacity(num_hidden);
            let mut prev = input_dim;
            for &s in &sizes {
                hidden.push(read_affine(&mut r, prev, s)?);
                prev = s;
            }
            let output = read_affine(&mut r, prev, num_classes)?;
            Network::Mlp(Mlp::from_layers(hidden, output, input_dim, num_classes))
        }
        KIND_LSTM => {
            let input_dim = r.u32("input dim")? as usize;
            let num_layers = r.u32("lstm layer count")? as usize;
            let hidden = r.u32("hidden size")? as usize;
            let num_classes = r.u32("class count")? as usize;
            let mut model = StackedLstm::new(
                input_dim,
                num_layers.max(1),
                hidden,
                num_classes,
                &mut crate::numerics::Pcg32::new(0, 0),
            );
            if num_layers == 0 {
                return Err(KtError::Format {
                    offset: r.offset(),
                    message: "lstm layer count must be positive".into(),
                });
            }
            let mut prev = input_dim;
            for layer in model.lstm.iter_mut() {
                layer.input_weights = r.matrix(4 * hidden, prev, "lstm input weights")?;
                layer.recurrent_weights = r.matrix(4 * hidden, hidden, "lstm recurrent weights")?;
                layer.bias = r.matrix(1, 4 * hidden, "lstm bias")?;
                prev = hidden;
            }
            model.output = read_affine(&mut r, hidden, num_classes)?;
            Network::Lstm(model)
        }
        other => {
            return Err(KtError::Format {
                offset: r.offset() - 1,
                message: format!("unknown model kind {other}"),
            })
        }
    };
    r.expect_end()?;
    Ok(net)
}

pub(crate) fn save_network(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, encode_network(net))?;
    Ok(())
}

pub(crate) fn load_network(path: &Path) -> Result<Network> {
    let data = fs::read(path)?;
    decode_network(&data)
}

impl Rbm {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u32(MODEL_FORMAT_VERSION);
        w.u8(KIND_RBM);
        w.u32(self.num_visible() as u32);
        w.u32(self.num_hidden() as u32);
        w.u8(match self.visible_type {
            VisibleType::Gaussian => 0,
            VisibleType::Bernoulli => 1,
        });
        w.matrix(&self.weights);
        w.matrix(&self.visible_bias);
        w.matrix(&self.hidden_bias);
        fs::write(path, w.into_vec())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Rbm> {
        let data = fs::read(path)?;
        let mut r = ByteReader::new(&data);
        check_header(&mut r, MAGIC, MODEL_FORMAT_VERSION)?;
        let kind = r.u8("model kind")?;
        if kind != KIND_RBM {
            return Err(KtError::Format {
                offset: r.offset() - 1,
                message: format!("expected RBM kind, got {kind}"),
            });
        }
        let visible = r.u32("visible count")? as usize;
        let hidden = r.u32("hidden count")? as usize;
        let vtype = match r.u8("visible type")? {
            0 => VisibleType::Gaussian,
            1 => VisibleType::Bernoulli,
            other => {
                return Err(KtError::Format {
                    offset: r.offset() - 1,
                    message: format!("unknown visible type {other}"),
                })
            }
        };
        let weights = r.matrix(hidden, visible, "rbm weights")?;
        let visible_bias = r.matrix(1, visible, "rbm visible bias")?;
        let hidden_bias = r.matrix(1, hidden, "rbm hidden bias")?;
        r.expect_end()?;
        Ok(Rbm {
            weights,
            visible_bias,
            hidden_bias,
            visible_type: vtype,
        })
    }
}
