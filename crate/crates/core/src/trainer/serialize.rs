//! Binary parameter file.
//!
//! All integers are `u32` and all reals `f64`, little-endian:
//!
//! ```text
//! magic           b"JFNP"
//! version         u32 (= PARAMS_VERSION)
//! input_dim       u32
//! n_hidden        u32
//! hidden_dims     u32 × n_hidden
//! embed_dim       u32
//! num_classes     u32
//! activation      u32 (0 = relu, 1 = tanh)
//! for each dense layer, input side first:
//!     weights     f64 × (fan_out · fan_in), row-major
//!     bias        f64 × fan_out
//! class weights   f64 × (num_classes · embed_dim), row-major
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::network::{Activation, DenseLayer, NetworkParams, NetworkSpec, Tensors};
use crate::error::{Error, Result};

pub const PARAMS_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"JFNP";

pub fn params_to_bytes(params: &NetworkParams) -> Vec<u8> {
    let spec = &params.spec;
    let mut out = Vec::with_capacity(64 + 8 * params.tensors.num_values());
    out.extend_from_slice(MAGIC);
    let put_u32 = |v: usize, out: &mut Vec<u8>| out.extend_from_slice(&(v as u32).to_le_bytes());
    put_u32(PARAMS_VERSION as usize, &mut out);
    put_u32(spec.input_dim, &mut out);
    put_u32(spec.hidden_dims.len(), &mut out);
    for &h in &spec.hidden_dims {
        put_u32(h, &mut out);
    }
    put_u32(spec.embed_dim, &mut out);
    put_u32(spec.num_classes, &mut out);
    put_u32(
        match spec.activation {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        },
        &mut out,
    );
    for layer in &params.tensors.layers {
        put_matrix(&layer.weights, &mut out);
        for v in layer.bias.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    put_matrix(&params.tensors.class_weights, &mut out);
    out
}

fn put_matrix(m: &DMatrix<f64>, out: &mut Vec<u8>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.origin, "truncated parameter file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(f64::from_le_bytes(a))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = self.f64()?;
            }
        }
        Ok(m)
    }
}

pub fn params_from_bytes(bytes: &[u8], origin: &str) -> Result<NetworkParams> {
    let mut rd = Reader { bytes, pos: 0, origin };
    if rd.take(4)? != MAGIC {
        return Err(Error::format(origin, "bad magic, not a parameter file"));
    }
    let version = rd.u32()?;
    if version != PARAMS_VERSION as usize {
        return Err(Error::format(origin, format!("unsupported version {version}")));
    }
    let input_dim = rd.u32()?;
    let n_hidden = rd.u32()?;
    let hidden_dims = (0..n_hidden).map(|_| rd.u32()).collect::<Result<Vec<_>>>()?;
    let embed_dim = rd.u32()?;
    let num_classes = rd.u32()?;
    let activation = match rd.u32()? {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        other => return Err(Error::format(origin, format!("unknown activation tag {other}"))),
    };
    let spec = NetworkSpec {
        input_dim,
        hidden_dims,
        embed_dim,
        num_classes,
        activation,
    };
    spec.validate()?;

    let mut layers = Vec::new();
    for (fan_in, fan_out) in spec.layer_shapes() {
        let weights = rd.matrix(fan_out, fan_in)?;
        let bias = DVector::from_iterator(
            fan_out,
            (0..fan_out).map(|_| rd.f64()).collect::<Result<Vec<_>>>()?,
        );
        layers.push(DenseLayer { weights, bias });
    }
    let class_weights = rd.matrix(num_classes, embed_dim)?;
    if rd.pos != bytes.len() {
        return Err(Error::format(origin, "trailing bytes after class weights"));
    }
    Ok(NetworkParams {
        spec,
        tensors: Tensors {
            layers,
            class_weights,
        },
    })
}

pub fn write_params(path: &Path, params: &NetworkParams) -> Result<()> {
    std::fs::write(path, params_to_bytes(params))?;
    Ok(())
}

pub fn read_params(path: &Path) -> Result<NetworkParams> {
    let bytes = std::fs::read(path)?;
    params_from_bytes(&bytes, &path.display().to_string())
}
