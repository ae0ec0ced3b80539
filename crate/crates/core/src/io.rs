//! Little-endian primitives shared by the binary file formats.

use std::io::{self, Read, Write};

use thiserror::Error;

#[derive(Error, Debug)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("truncated file while reading {what}")]
    Truncated { what: &'static str },
    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),
    #[error("malformed file: {0}")]
    Malformed(String),
}

pub(crate) fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &'static str) -> crate::Result<()> {
    match r.read_exact(buf) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(FormatError::Truncated { what }.into()),
        Err(e) => Err(e.into()),
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R, what: &'static str) -> crate::Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u8<R: Read>(r: &mut R, what: &'static str) -> crate::Result<u8> {
    let mut b = [0u8; 1];
    read_exact_or(r, &mut b, what)?;
    Ok(b[0])
}

pub(crate) fn check_magic<R: Read>(r: &mut R, expected: &[u8; 8]) -> crate::Result<()> {
    let mut m = [0u8; 8];
    read_exact_or(r, &mut m, "magic")?;
    if &m != expected {
        return Err(FormatError::BadMagic {
            expected: String::from_utf8_lossy(expected).into_owned(),
            found: String::from_utf8_lossy(&m).into_owned(),
        }
        .into());
    }
    Ok(())
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn to_u32(v: usize, what: &str) -> crate::Result<u32> {
    u32::try_from(v).map_err(|_| FormatError::DimensionOverflow(format!("{what} = {v} exceeds u32")).into())
}
