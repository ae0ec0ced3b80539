//! `VVSA0001` checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "VVSA0001"
//! records      until end of file, each:
//!   name_len   u32
//!   name       name_len bytes, UTF-8
//!   rank       u32
//!   dims       rank × u32
//!   values     product(dims) × f64
//! ```
//!
//! Besides the parameter tensors two rank-0 records carry metadata:
//! `meta.temperature` and, for VLAD models, `meta.k_shared`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::io::{check_magic, read_exact_or, read_u32, to_u32, write_u32, FormatError};
use crate::numkernel::Matrix;
use crate::scalar::Scalar;
use crate::vocabulary::Vocabulary;

use super::{Linear, Mlp, ModelParams, Pooling};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VVSA0001";

/// Trained parameters plus the soft-assignment temperature they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ModelParams<T>,
    pub temperature: f64,
}

fn write_record<W: Write>(w: &mut W, name: &str, dims: &[usize], values: impl Iterator<Item = f64>) -> Result<()> {
    write_u32(w, to_u32(name.len(), "tensor name length")?)?;
    w.write_all(name.as_bytes())?;
    write_u32(w, to_u32(dims.len(), "tensor rank")?)?;
    for &d in dims {
        write_u32(w, to_u32(d, "tensor dimension")?)?;
    }
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint<T: Scalar, W: Write>(w: &mut W, ckpt: &Checkpoint<T>) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    write_record(w, "meta.temperature", &[], std::iter::once(ckpt.temperature))?;
    if let Some(v) = ckpt.params.vocabulary() {
        write_record(w, "meta.k_shared", &[], std::iter::once(v.k_shared() as f64))?;
    }
    for t in ckpt.params.tensors() {
        write_record(w, t.name, &t.dims, t.data.iter().map(|x| x.as_f64()))?;
    }
    Ok(())
}

struct Record {
    dims: Vec<usize>,
    values: Vec<f64>,
}

const MAX_ELEMENTS: usize = 1 << 28;

fn read_records<R: Read>(r: &mut R) -> Result<BTreeMap<String, Record>> {
    let mut records = BTreeMap::new();
    loop {
        let mut len = [0u8; 4];
        // clean end of file only at a record boundary
        let mut got = 0;
        while got < 4 {
            let n = r.read(&mut len[got..])?;
            if n == 0 {
                break;
            }
            got += n;
        }
        if got == 0 {
            return Ok(records);
        }
        if got < 4 {
            return Err(FormatError::Truncated { what: "record name length" }.into());
        }
        let name_len = u32::from_le_bytes(len) as usize;
        if name_len > 1024 {
            return Err(FormatError::DimensionOverflow(format!("tensor name length {name_len}")).into());
        }
        let mut name = vec![0u8; name_len];
        read_exact_or(r, &mut name, "tensor name")?;
        let name = String::from_utf8(name).map_err(|_| FormatError::Malformed("tensor name is not UTF-8".into()))?;
        let rank = read_u32(r, "tensor rank")? as usize;
        if rank > 4 {
            return Err(FormatError::DimensionOverflow(format!("tensor {name} has rank {rank}")).into());
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(r, "tensor dims")? as usize);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&c| c <= MAX_ELEMENTS)
            .ok_or_else(|| FormatError::DimensionOverflow(format!("tensor {name} dims {dims:?}")))?;
        let mut bytes = vec![0u8; count * 8];
        read_exact_or(r, &mut bytes, "tensor values")?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if records.insert(name.clone(), Record { dims, values }).is_some() {
            return Err(FormatError::Malformed(format!("duplicate tensor {name}")).into());
        }
    }
}

pub fn read_checkpoint<T: Scalar, R: Read>(r: &mut R) -> Result<Checkpoint<T>> {
    check_magic(r, CHECKPOINT_MAGIC)?;
    let mut records = read_records(r)?;
    let mut take = |name: &str| {
        records
            .remove(name)
            .ok_or_else(|| Error::from(FormatError::Malformed(format!("missing tensor {name}"))))
    };
    let scalar = |rec: Record, name: &str| -> Result<f64> {
        if !rec.dims.is_empty() || rec.values.len() != 1 {
            return Err(FormatError::Malformed(format!("{name} must be a scalar")).into());
        }
        Ok(rec.values[0])
    };
    let matrix = |rec: Record, name: &str| -> Result<Matrix<T>> {
        if rec.dims.len() != 2 {
            return Err(FormatError::Malformed(format!("{name} must have rank 2")).into());
        }
        Matrix::new(rec.dims[0], rec.dims[1], rec.values.into_iter().map(T::lit).collect())
    };
    let vector = |rec: Record, name: &str| -> Result<Vec<T>> {
        if rec.dims.len() != 1 {
            return Err(FormatError::Malformed(format!("{name} must have rank 1")).into());
        }
        Ok(rec.values.into_iter().map(T::lit).collect())
    };
    let linear = |take: &mut dyn FnMut(&str) -> Result<Record>, prefix: &str| -> Result<Linear<T>> {
        let wn = format!("{prefix}.weight");
        let bn = format!("{prefix}.bias");
        Ok(Linear {
            weight: matrix(take(&wn)?, &wn)?,
            bias: vector(take(&bn)?, &bn)?,
        })
    };

    let temperature = scalar(take("meta.temperature")?, "meta.temperature")?;
    let k_shared = match take("meta.k_shared") {
        Ok(rec) => Some(scalar(rec, "meta.k_shared")?),
        Err(_) => None,
    };
    let encoder = Mlp {
        hidden: linear(&mut take, "encoder.hidden")?,
        output: linear(&mut take, "encoder.output")?,
    };
    let pooling = match k_shared {
        None => Pooling::Gap,
        Some(k1) => {
            if k1 < 1.0 || k1.fract() != 0.0 {
                return Err(FormatError::Malformed(format!("meta.k_shared = {k1}")).into());
            }
            let words = matrix(take("vocabulary.words")?, "vocabulary.words")?;
            Pooling::Vlad(Vocabulary::new(words, k1 as usize)?)
        }
    };
    let classifier = linear(&mut take, "classifier")?;
    let discriminator = Mlp {
        hidden: linear(&mut take, "discriminator.hidden")?,
        output: linear(&mut take, "discriminator.output")?,
    };
    if let Some(extra) = records.keys().next() {
        return Err(FormatError::Malformed(format!("unexpected tensor {extra}")).into());
    }
    let params = ModelParams {
        encoder,
        pooling,
        classifier,
        discriminator,
    };
    params.validate()?;
    Ok(Checkpoint { params, temperature })
}
