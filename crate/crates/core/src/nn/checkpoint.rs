//! Versioned little-endian binary model file.
//!
//! Layout:
//!
//! ```text
//! u32 format_version | u32 layer_count
//! per layer: u64 in | u64 out | u8 activation | f64 dropout | f64 weights[in*out] | f64 bias[out]
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{Activation, DenseLayer, Matrix, Mlp};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub fn write_mlp<W: Write>(net: &Mlp, mut out: W) -> std::io::Result<()> {
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(net.layers().len() as u32).to_le_bytes())?;
    for layer in net.layers() {
        out.write_all(&(layer.input_dim() as u64).to_le_bytes())?;
        out.write_all(&(layer.output_dim() as u64).to_le_bytes())?;
        out.write_all(&[layer.activation().tag()])?;
        out.write_all(&layer.dropout_rate().to_le_bytes())?;
        for v in layer.weights().as_slice().iter().chain(layer.bias()) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn encode_mlp(net: &Mlp) -> Vec<u8> {
    let mut buf = Vec::new();
    write_mlp(net, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

pub fn decode_mlp(mut bytes: &[u8]) -> Result<Mlp> {
    let reader = &mut bytes;
    let version = read_u32(reader)?;
    if version != FORMAT_VERSION {
        return Err(Error::MalformedCheckpoint(format!("unsupported format version {version}")));
    }
    let count = read_u32(reader)? as usize;
    if count == 0 {
        return Err(Error::MalformedCheckpoint("zero layers".into()));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let input = read_u64(reader)? as usize;
        let output = read_u64(reader)? as usize;
        let mut tag = [0u8; 1];
        read_exact(reader, &mut tag)?;
        let activation = Activation::from_tag(tag[0])
            .ok_or_else(|| Error::MalformedCheckpoint(format!("unknown activation tag {}", tag[0])))?;
        let dropout = read_f64(reader)?;
        let n = input
            .checked_mul(output)
            .filter(|n| n * 8 <= reader.len())
            .ok_or_else(|| Error::MalformedCheckpoint("truncated weights".into()))?;
        let weights = (0..n).map(|_| read_f64(reader)).collect::<Result<Vec<_>>>()?;
        let bias = (0..output).map(|_| read_f64(reader)).collect::<Result<Vec<_>>>()?;
        let weights = Matrix::new(input, output, weights)?;
        layers.push(DenseLayer::new(weights, bias, activation, dropout)?);
    }
    if !reader.is_empty() {
        return Err(Error::MalformedCheckpoint(format!("{} trailing bytes", reader.len())));
    }
    Mlp::new(layers)
}

pub fn save_mlp(net: &Mlp, path: &Path) -> Result<()> {
    std::fs::write(path, encode_mlp(net)).map_err(|e| Error::io(path, e))
}

pub fn load_mlp(path: &Path) -> Result<Mlp> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mlp(&bytes)
}

fn read_exact(reader: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    reader
        .read_exact(buf)
        .map_err(|_| Error::MalformedCheckpoint("unexpected end of file".into()))
}

fn read_u32(reader: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(reader, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(reader: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(reader, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(reader: &mut &[u8]) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(reader, &mut b)?;
    Ok(f64::from_le_bytes(b))
}
