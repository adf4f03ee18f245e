//! Binary checkpoint files: magic "DDH1", format version, the network
//! spec, raw little-endian `f64` parameters in spec order, then the
//! optimizer state.

use super::{build_network, Activation, LayerSpec, Network, NetworkSpec, OptMethod, OptimizerState};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"DDH1";
const VERSION: u32 = 1;

pub fn save_checkpoint(net: &Network, optimizer: &OptimizerState, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    write_spec(&mut w, net.spec())?;
    w.write_all(&net.seed().to_le_bytes())?;
    w.write_all(&(net.params().len() as u32).to_le_bytes())?;
    for p in net.params() {
        write_tensor(&mut w, &p.value)?;
    }
    let method = match optimizer.method {
        OptMethod::Sgd => 0u8,
        OptMethod::Adam => 1u8,
    };
    w.write_all(&[method])?;
    w.write_all(&optimizer.learning_rate.to_le_bytes())?;
    w.write_all(&optimizer.step.to_le_bytes())?;
    w.write_all(&[u8::from(!optimizer.moments.is_empty())])?;
    for (m, v) in &optimizer.moments {
        write_tensor(&mut w, m)?;
        write_tensor(&mut w, v)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint; the forward behavior of the returned network is
/// bit-identical to the saved one.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Network, OptimizerState)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let spec = read_spec(&mut r)?;
    let seed = read_u64(&mut r)?;
    let n_params = read_u32(&mut r)? as usize;
    // rebuild to obtain parameter shapes, then overwrite values
    let mut net = build_network(&spec, seed)?;
    if n_params != net.params().len() {
        return Err(Error::Format(format!(
            "checkpoint has {n_params} parameters, spec implies {}",
            net.params().len()
        )));
    }
    for i in 0..n_params {
        let expected = net.params()[i].value.len();
        let t = read_tensor(&mut r, net.params()[i].value.shape().to_vec())?;
        if t.len() != expected {
            return Err(Error::Format("parameter length mismatch".to_string()));
        }
        *net.param_mut(i) = t;
    }
    let method = match read_u8(&mut r)? {
        0 => OptMethod::Sgd,
        1 => OptMethod::Adam,
        other => return Err(Error::Format(format!("unknown optimizer tag {other}"))),
    };
    let learning_rate = read_f64(&mut r)?;
    let step = read_u64(&mut r)?;
    let has_moments = read_u8(&mut r)? != 0;
    let mut moments = Vec::new();
    if has_moments {
        for i in 0..n_params {
            let shape = net.params()[i].value.shape().to_vec();
            let m = read_tensor(&mut r, shape.clone())?;
            let v = read_tensor(&mut r, shape)?;
            moments.push((m, v));
        }
    }
    let mut trailer = [0u8; 1];
    if r.read(&mut trailer)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".to_string()));
    }
    Ok((
        net,
        OptimizerState {
            method,
            learning_rate,
            step,
            moments,
        },
    ))
}

/// Loads a checkpoint and verifies the network's code width.
pub fn load_checkpoint_expecting(
    path: impl AsRef<Path>,
    code_width: usize,
) -> Result<(Network, OptimizerState)> {
    let (net, opt) = load_checkpoint(path)?;
    if net.spec().code_width != code_width {
        return Err(Error::Spec(format!(
            "checkpoint code width {} does not match expected {code_width}",
            net.spec().code_width
        )));
    }
    Ok((net, opt))
}

fn write_spec(w: &mut impl Write, spec: &NetworkSpec) -> Result<()> {
    w.write_all(&(spec.input.0 as u32).to_le_bytes())?;
    w.write_all(&(spec.input.1 as u32).to_le_bytes())?;
    w.write_all(&(spec.input.2 as u32).to_le_bytes())?;
    w.write_all(&(spec.code_width as u32).to_le_bytes())?;
    w.write_all(&(spec.layers.len() as u32).to_le_bytes())?;
    for l in &spec.layers {
        match l {
            LayerSpec::Conv { kernel: (kh, kw), channels, stride } => {
                w.write_all(&[0u8])?;
                for v in [*kh, *kw, *channels, *stride] {
                    w.write_all(&(v as u32).to_le_bytes())?;
                }
            }
            LayerSpec::MaxPool { window } => {
                w.write_all(&[1u8])?;
                w.write_all(&(*window as u32).to_le_bytes())?;
            }
            LayerSpec::FullyConnected { width } => {
                w.write_all(&[2u8])?;
                w.write_all(&(*width as u32).to_le_bytes())?;
            }
            LayerSpec::Activation(a) => {
                w.write_all(&[3u8])?;
                let tag = match a {
                    Activation::Relu => 0u8,
                    Activation::Tanh => 1u8,
                    Activation::Linear => 2u8,
                };
                w.write_all(&[tag])?;
            }
        }
    }
    Ok(())
}

fn read_spec(r: &mut impl Read) -> Result<NetworkSpec> {
    let h = read_u32(r)? as usize;
    let w = read_u32(r)? as usize;
    let c = read_u32(r)? as usize;
    let code_width = read_u32(r)? as usize;
    let n_layers = read_u32(r)? as usize;
    if n_layers > 10_000 {
        return Err(Error::Format(format!("implausible layer count {n_layers}")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let layer = match read_u8(r)? {
            0 => {
                let kh = read_u32(r)? as usize;
                let kw = read_u32(r)? as usize;
                let channels = read_u32(r)? as usize;
                let stride = read_u32(r)? as usize;
                LayerSpec::Conv { kernel: (kh, kw), channels, stride }
            }
            1 => LayerSpec::MaxPool { window: read_u32(r)? as usize },
            2 => LayerSpec::FullyConnected { width: read_u32(r)? as usize },
            3 => {
                let a = match read_u8(r)? {
                    0 => Activation::Relu,
                    1 => Activation::Tanh,
                    2 => Activation::Linear,
                    other => return Err(Error::Format(format!("unknown activation tag {other}"))),
                };
                LayerSpec::Activation(a)
            }
            other => return Err(Error::Format(format!("unknown layer tag {other}"))),
        };
        layers.push(layer);
    }
    Ok(NetworkSpec { input: (h, w, c), layers, code_width })
}

fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    w.write_all(&(t.len() as u64).to_le_bytes())?;
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_tensor(r: &mut impl Read, shape: Vec<usize>) -> Result<Tensor> {
    let len = read_u64(r)? as usize;
    let expected: usize = shape.iter().product();
    if len != expected {
        return Err(Error::Format(format!(
            "tensor length {len} does not match shape {shape:?}"
        )));
    }
    let mut data = vec![0.0f64; len];
    let mut buf = [0u8; 8];
    for v in &mut data {
        read_exact(r, &mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    Tensor::from_vec(shape, data)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format("truncated checkpoint file".to_string()))
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b)?;
    Ok(b[0])
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}
