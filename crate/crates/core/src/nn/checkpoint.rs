//! Versioned little-endian network checkpoint.
//!
//! ```text
//! magic "GGNN" | u32 version | u32 layer count
//! per layer: u32 in | u32 out | u8 activation tag | f64 activation param
//!            | out*in f64 weights (row-major) | out f64 biases
//! ```

use std::io::Write;

use byteorder::{LittleEndian, WriteBytesExt};
use ndarray::{Array1, Array2};

use super::{Activation, DenseLayer, Mlp};
use crate::error::Result;
use crate::io::binary::SliceReader;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GGNN";
pub const CHECKPOINT_VERSION: u32 = 1;

fn tag(a: Activation) -> (u8, f64) {
    match a {
        Activation::LeakyRelu(alpha) => (0, alpha),
        Activation::Sigmoid => (1, 0.0),
        Activation::Linear => (2, 0.0),
        Activation::ScaledSigmoid(c) => (3, c),
    }
}

pub fn write_checkpoint<W: Write>(net: &Mlp, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    w.write_u32::<LittleEndian>(net.layers().len() as u32)?;
    for layer in net.layers() {
        w.write_u32::<LittleEndian>(layer.input_dim() as u32)?;
        w.write_u32::<LittleEndian>(layer.output_dim() as u32)?;
        let (t, p) = tag(layer.activation);
        w.write_u8(t)?;
        w.write_f64::<LittleEndian>(p)?;
        for &v in layer.weights.iter() {
            w.write_f64::<LittleEndian>(v)?;
        }
        for &v in layer.biases.iter() {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Mlp> {
    read_from(&mut SliceReader::new(bytes))
}

pub(crate) fn read_from(r: &mut SliceReader<'_>) -> Result<Mlp> {
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return r.fail(format!("unsupported checkpoint version {version}"));
    }
    let count = r.u32("layer count")? as usize;
    if count == 0 {
        return r.fail("checkpoint has no layers");
    }
    let mut layers = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let input = r.u32("layer input dim")? as usize;
        let output = r.u32("layer output dim")? as usize;
        let at = r.offset();
        let t = r.u8("activation tag")?;
        let p = r.f64("activation param")?;
        let activation = match t {
            0 => Activation::LeakyRelu(p),
            1 => Activation::Sigmoid,
            2 => Activation::Linear,
            3 => Activation::ScaledSigmoid(p),
            _ => {
                return Err(crate::Error::Format {
                    offset: at,
                    message: format!("unknown activation tag {t}"),
                })
            }
        };
        let weights = r.f64_vec(input * output, "weights")?;
        let biases = r.f64_vec(output, "biases")?;
        layers.push(DenseLayer {
            weights: Array2::from_shape_vec((output, input), weights)
                .expect("length checked by reader"),
            biases: Array1::from(biases),
            activation,
        });
    }
    let at = r.offset();
    Mlp::new(layers).map_err(|e| crate::Error::Format {
        offset: at,
        message: e.to_string(),
    })
}
