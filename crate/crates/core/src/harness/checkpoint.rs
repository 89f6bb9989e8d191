//! Binary optimizer-state checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "KPRC"  version:u16  layers:u32
//! per layer:  param:u8  method:u8  step_count:u64  tensors:u8
//! per tensor: dtype:u8  rank:u8  dims:u32*rank  raw buffer
//! ```
//!
//! Tensors are stored in the order `theta, λ₁, Q₁, C₁, λ₂, Q₂, C₂` followed by
//! `m, v` for the Adam variants, where `Cᵢ` is the companion matrix (`Sᵢ` or
//! `Pᵢ`). Buffers are written in their storage precision, so a round trip is
//! bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::config::{Method, Parametrization};
use crate::error::{Error, Result};
use crate::matcore::{Precision, StorageBuffer, StorageMatrix};
use crate::shampoo::{FactorState, LayerState};
use crate::soap::RotatedMoments;

pub const MAGIC: &[u8; 4] = b"KPRC";
pub const VERSION: u16 = 1;

/// Names of the tensors of one layer, in file order.
pub fn tensor_names(method: Method) -> &'static [&'static str] {
    const BASE: &[&str] = &["theta", "lambda1", "Q1", "C1", "lambda2", "Q2", "C2"];
    const ADAM: &[&str] = &["theta", "lambda1", "Q1", "C1", "lambda2", "Q2", "C2", "m", "v"];
    if method.uses_adam() { ADAM } else { BASE }
}

fn param_code(p: Parametrization) -> u8 {
    match p {
        Parametrization::Old => 0,
        Parametrization::New => 1,
    }
}

fn method_code(m: Method) -> u8 {
    match m {
        Method::KlShampoo => 0,
        Method::KlSoap => 1,
        Method::Soap => 2,
    }
}

/// One stored tensor, kept as raw storage.
#[derive(Clone, Debug)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: StorageBuffer,
}

impl Tensor {
    fn matrix(m: &StorageMatrix) -> Tensor {
        Tensor { dims: vec![m.rows(), m.cols()], data: m.buffer().clone() }
    }

    fn vector(v: &StorageBuffer) -> Tensor {
        Tensor { dims: vec![v.len()], data: v.clone() }
    }

    fn into_matrix(self, name: &str) -> Result<StorageMatrix> {
        match self.dims[..] {
            [r, c] => StorageMatrix::from_buffer(r, c, self.data),
            _ => Err(Error::Format(format!("tensor {name} should have rank 2, has rank {}", self.dims.len()))),
        }
    }

    fn into_vector(self, name: &str) -> Result<StorageBuffer> {
        match self.dims[..] {
            [_] => Ok(self.data),
            _ => Err(Error::Format(format!("tensor {name} should have rank 1, has rank {}", self.dims.len()))),
        }
    }
}

/// A decoded layer before it is turned back into optimizer state.
#[derive(Clone, Debug)]
pub struct LayerRecord {
    pub parametrization: Parametrization,
    pub method: Method,
    pub step_count: u64,
    pub tensors: Vec<Tensor>,
}

fn layer_tensors(state: &LayerState) -> Vec<Tensor> {
    let mut out = vec![Tensor::matrix(state.theta())];
    for f in state.factors() {
        // Serialization reads λ through the raw buffer rather than the counted accessor.
        out.push(Tensor::vector(f.lambda_buffer()));
        out.push(Tensor::matrix(f.basis()));
        out.push(Tensor::matrix(f.companion()));
    }
    if let Some(m) = state.moments() {
        out.push(Tensor::matrix(&m.m));
        out.push(Tensor::matrix(&m.v));
    }
    out
}

pub fn encode(states: &[LayerState]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(states.len() as u32).to_le_bytes());
    for state in states {
        buf.push(param_code(state.parametrization()));
        buf.push(method_code(state.method()));
        buf.extend_from_slice(&state.step_count().to_le_bytes());
        let tensors = layer_tensors(state);
        buf.push(tensors.len() as u8);
        for t in tensors {
            buf.push(t.data.precision().code());
            buf.push(t.dims.len() as u8);
            for &d in &t.dims {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            buf.extend_from_slice(&t.data.to_le_bytes());
        }
    }
    buf
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    Ok(read_array::<1>(r)?[0])
}

/// Parses the raw records without building optimizer state.
pub fn decode_records(bytes: &[u8]) -> Result<Vec<LayerRecord>> {
    let mut r = bytes;
    let magic = read_array::<4>(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let version = u16::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}, expected {VERSION}")));
    }
    let layers = u32::from_le_bytes(read_array(&mut r)?);
    let mut out = Vec::new();
    for layer in 0..layers {
        let parametrization = match read_u8(&mut r)? {
            0 => Parametrization::Old,
            1 => Parametrization::New,
            c => return Err(Error::Format(format!("layer {layer}: unknown parametrization code {c}"))),
        };
        let method = match read_u8(&mut r)? {
            0 => Method::KlShampoo,
            1 => Method::KlSoap,
            2 => Method::Soap,
            c => return Err(Error::Format(format!("layer {layer}: unknown method code {c}"))),
        };
        let step_count = u64::from_le_bytes(read_array(&mut r)?);
        let count = read_u8(&mut r)? as usize;
        let names = tensor_names(method);
        if count != names.len() {
            return Err(Error::Format(format!(
                "layer {layer}: method {method} stores {} tensors, file has {count}",
                names.len()
            )));
        }
        let mut tensors = Vec::with_capacity(count);
        for name in names {
            let code = read_u8(&mut r)?;
            let precision = Precision::from_code(code)
                .ok_or_else(|| Error::Format(format!("layer {layer} tensor {name}: unknown dtype code {code}")))?;
            let rank = read_u8(&mut r)? as usize;
            let dims: Vec<usize> = (0..rank)
                .map(|_| Ok(u32::from_le_bytes(read_array(&mut r)?) as usize))
                .collect::<Result<_>>()?;
            let len: usize = dims.iter().product();
            let nbytes = len * precision.bytes_per_element();
            if r.len() < nbytes {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::UnexpectedEof,
                    format!("layer {layer} tensor {name}: need {nbytes} bytes, {} left", r.len()),
                )));
            }
            let (raw, rest) = r.split_at(nbytes);
            r = rest;
            tensors.push(Tensor { dims, data: StorageBuffer::from_le_bytes(raw, precision)? });
        }
        out.push(LayerRecord { parametrization, method, step_count, tensors });
    }
    if !r.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after the last layer", r.len())));
    }
    Ok(out)
}

/// Decodes layer states. When `expected` is given, every tensor must be
/// stored in that precision.
pub fn decode(bytes: &[u8], expected: Option<Precision>) -> Result<Vec<LayerState>> {
    decode_records(bytes)?
        .into_iter()
        .map(|rec| {
            if let Some(want) = expected {
                if let Some(t) = rec.tensors.iter().find(|t| t.data.precision() != want) {
                    return Err(Error::PrecisionMismatch { expected: want, found: t.data.precision() });
                }
            }
            let p = rec.parametrization;
            let mut it = rec.tensors.into_iter();
            let mut next = || it.next().expect("tensor count checked");
            let theta = next().into_matrix("theta")?;
            let f1 = FactorState::from_parts(p, next().into_vector("lambda1")?, next().into_matrix("Q1")?, next().into_matrix("C1")?)?;
            let f2 = FactorState::from_parts(p, next().into_vector("lambda2")?, next().into_matrix("Q2")?, next().into_matrix("C2")?)?;
            let moments = if rec.method.uses_adam() {
                Some(RotatedMoments { m: next().into_matrix("m")?, v: next().into_matrix("v")? })
            } else {
                None
            };
            LayerState::from_parts(theta, [f1, f2], rec.method, rec.step_count, moments)
        })
        .collect()
}

pub fn save(path: &Path, states: &[LayerState]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(states))?;
    f.sync_all()?;
    Ok(())
}

pub fn load(path: &Path, expected: Option<Precision>) -> Result<Vec<LayerState>> {
    decode(&std::fs::read(path)?, expected)
}

/// Human-readable summary of a checkpoint, one line per tensor.
pub fn dump(bytes: &[u8]) -> Result<String> {
    use std::fmt::Write as _;
    let records = decode_records(bytes)?;
    let mut s = String::new();
    let _ = writeln!(s, "checkpoint version {VERSION}, {} layer(s)", records.len());
    for (i, rec) in records.iter().enumerate() {
        let _ = writeln!(s, "layer {i}: method={} param={} step_count={}", rec.method, rec.parametrization, rec.step_count);
        for (name, t) in tensor_names(rec.method).iter().zip(&rec.tensors) {
            let values = t.data.values();
            let max_abs = values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let dims: Vec<String> = t.dims.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(
                s,
                "  {name:<8} {:<4} [{}] max_abs={max_abs:.6e}",
                t.data.precision().name(),
                dims.join("x")
            );
        }
    }
    Ok(s)
}
