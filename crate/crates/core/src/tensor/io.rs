//! Versioned binary parameter files.
//!
//! ```text
//! magic    4 bytes  "MTPS"
//! version  u32 LE
//! count    u32 LE
//! count × {
//!   name   u32 LE length + UTF-8 bytes
//!   group  u32 LE length + UTF-8 bytes
//!   ndim   u32 LE, then ndim × u64 LE dims
//!   values product(dims) × f64 LE
//! }
//! ```

use std::io::{Read, Write};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MTPS";
pub const FORMAT_VERSION: u32 = 1;

fn w32(out: &mut impl Write, v: u32) -> std::io::Result<()> {
    out.write_all(&v.to_le_bytes())
}

fn write_str(out: &mut impl Write, s: &str) -> std::io::Result<()> {
    w32(out, s.len() as u32)?;
    out.write_all(s.as_bytes())
}

pub fn write_params(out: &mut impl Write, store: &ParamStore) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    w32(out, FORMAT_VERSION)?;
    w32(out, store.len() as u32)?;
    for p in store.iter() {
        write_str(out, &p.name)?;
        write_str(out, &p.group)?;
        w32(out, p.value.shape().len() as u32)?;
        for &d in p.value.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in p.value.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn bad(e: std::io::Error) -> Error {
    Error::Checkpoint(format!("truncated or unreadable parameter file: {e}"))
}

fn r32(input: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b).map_err(bad)?;
    Ok(u32::from_le_bytes(b))
}

fn r64(input: &mut impl Read) -> Result<[u8; 8]> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b).map_err(bad)?;
    Ok(b)
}

fn read_str(input: &mut impl Read) -> Result<String> {
    let n = r32(input)? as usize;
    let mut buf = vec![0u8; n];
    input.read_exact(&mut buf).map_err(bad)?;
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(format!("non-UTF-8 name: {e}")))
}

pub fn read_params(input: &mut impl Read) -> Result<ParamStore> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(bad)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = r32(input)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let count = r32(input)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name = read_str(input)?;
        let group = read_str(input)?;
        let ndim = r32(input)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(r64(input)?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(r64(input)?));
        }
        store.add(name, group, Tensor::new(shape, data)?);
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_preserves_bits(values in proptest::collection::vec(any::<f64>(), 1..40), rows in 1usize..4) {
            let cols = values.len();
            let mut store = ParamStore::new();
            let data: Vec<f64> = (0..rows).flat_map(|_| values.iter().copied()).collect();
            store.add("w.0", "encoder", Tensor::new(vec![rows, cols], data).unwrap());
            store.add("b", "decoder", Tensor::scalar(values[0]));
            let mut buf = Vec::new();
            write_params(&mut buf, &store).unwrap();
            let back = read_params(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), 2);
            for (a, b) in store.iter().zip(back.iter()) {
                prop_assert_eq!(&a.name, &b.name);
                prop_assert_eq!(&a.group, &b.group);
                prop_assert_eq!(a.value.shape(), b.value.shape());
                let abits: Vec<u64> = a.value.data().iter().map(|v| v.to_bits()).collect();
                let bbits: Vec<u64> = b.value.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(abits, bbits);
            }
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_params(&mut &b"XXXX\x01\0\0\0\0\0\0\0"[..]).is_err());
        let mut store = ParamStore::new();
        store.add("w", "g", Tensor::zeros(&[2, 2]));
        let mut buf = Vec::new();
        write_params(&mut buf, &store).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_params(&mut buf.as_slice()).is_err());
    }
}
