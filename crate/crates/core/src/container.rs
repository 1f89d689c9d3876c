//! Binary container for hypothesis batches and fitted models.
//!
//! Layout: `"DFLB"`, version `u8`, kind `u8`, then a kind-specific body.
//! All integers and floats are little-endian; matrices are stored as
//! `rows u64, cols u64` followed by row-major `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};

use crate::error::{DflError, Result};
use crate::hypothesis::{KernelHypothesisBatch, KernelSpec, LinearHypothesisBatch};
use crate::learners::{Basis, FairModel, FitInfo, ModelKind};

pub const MAGIC: &[u8; 4] = b"DFLB";
pub const VERSION: u8 = 1;

const KIND_LINEAR: u8 = 1;
const KIND_KERNEL: u8 = 2;
const KIND_MODEL: u8 = 3;

const BASIS_LINEAR: u8 = 0;
const BASIS_KERNEL: u8 = 1;
const BASIS_PROJECTION: u8 = 2;

/// Refuse matrices larger than this many entries when decoding.
const MAX_ENTRIES: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub enum Container {
    Linear(LinearHypothesisBatch),
    Kernel(KernelHypothesisBatch),
    Model(FairModel),
}

fn write_matrix<W: Write>(w: &mut W, m: &DMatrix<f64>) -> Result<()> {
    w.write_u64::<LE>(m.nrows() as u64)?;
    w.write_u64::<LE>(m.ncols() as u64)?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_f64::<LE>(m[(i, j)])?;
        }
    }
    Ok(())
}

fn read_matrix<R: Read>(r: &mut R) -> Result<DMatrix<f64>> {
    let rows = r.read_u64::<LE>()?;
    let cols = r.read_u64::<LE>()?;
    let entries = rows.checked_mul(cols).filter(|&e| e <= MAX_ENTRIES);
    let Some(entries) = entries else {
        return Err(DflError::Format(format!("matrix of {rows}x{cols} is too large")));
    };
    let mut data = vec![0.0; entries as usize];
    r.read_f64_into::<LE>(&mut data)?;
    Ok(DMatrix::from_row_slice(rows as usize, cols as usize, &data))
}

fn write_vec<W: Write>(w: &mut W, v: &[f64]) -> Result<()> {
    w.write_u64::<LE>(v.len() as u64)?;
    for &x in v {
        w.write_f64::<LE>(x)?;
    }
    Ok(())
}

fn read_vec<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let len = r.read_u64::<LE>()?;
    if len > MAX_ENTRIES {
        return Err(DflError::Format(format!("vector of length {len} is too large")));
    }
    let mut v = vec![0.0; len as usize];
    r.read_f64_into::<LE>(&mut v)?;
    Ok(v)
}

fn write_kernel<W: Write>(w: &mut W, k: KernelSpec) -> Result<()> {
    let (tag, gamma) = k.tag();
    w.write_u8(tag)?;
    w.write_f64::<LE>(gamma)?;
    Ok(())
}

fn read_kernel<R: Read>(r: &mut R) -> Result<KernelSpec> {
    let tag = r.read_u8()?;
    let gamma = r.read_f64::<LE>()?;
    KernelSpec::from_tag(tag, gamma)
}

fn read_bool<R: Read>(r: &mut R) -> Result<bool> {
    match r.read_u8()? {
        0 => Ok(false),
        1 => Ok(true),
        b => Err(DflError::Format(format!("invalid boolean byte {b}"))),
    }
}

pub fn encode<W: Write>(w: &mut W, c: &Container) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u8(VERSION)?;
    match c {
        Container::Linear(b) => {
            w.write_u8(KIND_LINEAR)?;
            write_matrix(w, &b.weights)?;
            w.write_f64::<LE>(b.sigma)?;
            w.write_u64::<LE>(b.seed)?;
        }
        Container::Kernel(b) => {
            w.write_u8(KIND_KERNEL)?;
            write_matrix(w, &b.coeffs)?;
            w.write_f64::<LE>(b.sigma)?;
            w.write_u64::<LE>(b.seed)?;
            write_kernel(w, b.kernel)?;
        }
        Container::Model(m) => {
            w.write_u8(KIND_MODEL)?;
            w.write_u8(m.kind.tag())?;
            w.write_f64::<LE>(m.lambda)?;
            write_vec(w, m.alpha.as_slice())?;
            match &m.basis {
                Basis::Linear(h) => {
                    w.write_u8(BASIS_LINEAR)?;
                    write_matrix(w, h)?;
                }
                Basis::Kernel { coeffs, train_x, kernel } => {
                    w.write_u8(BASIS_KERNEL)?;
                    write_matrix(w, coeffs)?;
                    write_matrix(w, train_x)?;
                    write_kernel(w, *kernel)?;
                }
                Basis::Projection { directions, intercept } => {
                    w.write_u8(BASIS_PROJECTION)?;
                    write_matrix(w, directions)?;
                    w.write_u8(*intercept as u8)?;
                }
            }
            w.write_u64::<LE>(m.info.iterations as u64)?;
            w.write_u8(m.info.converged as u8)?;
            w.write_u8(m.info.jittered as u8)?;
            write_vec(w, &m.info.objective_trace)?;
        }
    }
    Ok(())
}

pub fn decode<R: Read>(r: &mut R) -> Result<Container> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DflError::Format(format!("bad magic {magic:?}")));
    }
    let version = r.read_u8()?;
    if version != VERSION {
        return Err(DflError::Format(format!("unsupported container version {version}")));
    }
    let c = match r.read_u8()? {
        KIND_LINEAR => {
            let weights = read_matrix(r)?;
            let sigma = r.read_f64::<LE>()?;
            let seed = r.read_u64::<LE>()?;
            Container::Linear(LinearHypothesisBatch { weights, sigma, seed })
        }
        KIND_KERNEL => {
            let coeffs = read_matrix(r)?;
            let sigma = r.read_f64::<LE>()?;
            let seed = r.read_u64::<LE>()?;
            let kernel = read_kernel(r)?;
            Container::Kernel(KernelHypothesisBatch { coeffs, sigma, seed, kernel })
        }
        KIND_MODEL => {
            let tag = r.read_u8()?;
            let kind = ModelKind::from_tag(tag).ok_or_else(|| DflError::Format(format!("unknown model kind {tag}")))?;
            let lambda = r.read_f64::<LE>()?;
            let alpha = DVector::from_vec(read_vec(r)?);
            let basis = match r.read_u8()? {
                BASIS_LINEAR => Basis::Linear(read_matrix(r)?),
                BASIS_KERNEL => {
                    let coeffs = read_matrix(r)?;
                    let train_x = read_matrix(r)?;
                    let kernel = read_kernel(r)?;
                    Basis::Kernel { coeffs, train_x, kernel }
                }
                BASIS_PROJECTION => {
                    let directions = read_matrix(r)?;
                    let intercept = read_bool(r)?;
                    Basis::Projection { directions, intercept }
                }
                b => return Err(DflError::Format(format!("unknown basis tag {b}"))),
            };
            if basis.k() != alpha.len() {
                return Err(DflError::Format(format!("basis has {} members, alpha has {}", basis.k(), alpha.len())));
            }
            let iterations = r.read_u64::<LE>()? as usize;
            let converged = read_bool(r)?;
            let jittered = read_bool(r)?;
            let objective_trace = read_vec(r)?;
            Container::Model(FairModel {
                alpha,
                basis,
                lambda,
                kind,
                info: FitInfo { iterations, converged, jittered, objective_trace },
            })
        }
        k => return Err(DflError::Format(format!("unknown container kind {k}"))),
    };
    Ok(c)
}

pub fn to_bytes(c: &Container) -> Vec<u8> {
    let mut out = Vec::new();
    encode(&mut out, c).expect("writing to a Vec cannot fail");
    out
}

/// Decodes a complete buffer; trailing bytes are an error.
pub fn from_bytes(bytes: &[u8]) -> Result<Container> {
    let mut cur = bytes;
    let c = decode(&mut cur)?;
    if !cur.is_empty() {
        return Err(DflError::Format(format!("{} trailing bytes", cur.len())));
    }
    Ok(c)
}

pub fn save(path: impl AsRef<Path>, c: &Container) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    encode(&mut w, c)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Container> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}
