//! Little-endian binary tensor encoding:
//!
//! ```text
//! "TNSR1" | rank: u32 | extents: rank x u64 | element width: u8 | elements
//! ```

use std::io::{Read, Write};

use super::{numel, Real, Tensor};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 5] = b"TNSR1";

pub fn write_tensor<T: Real, W: Write>(w: &mut W, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + t.len() * T::WIDTH as usize);
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    buf.push(T::WIDTH);
    for &x in t.data() {
        x.write_le(&mut buf);
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated tensor payload".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

/// Reads one tensor. Elements stored at a different width are converted.
pub fn read_tensor<T: Real, R: Read>(r: &mut R) -> Result<Tensor<T>> {
    let magic = read_exact(r, 5)?;
    if magic != TENSOR_MAGIC {
        return Err(Error::Version {
            expected: "TNSR1".into(),
            found: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let rank = u32::from_le_bytes(read_exact(r, 4)?.try_into().unwrap()) as usize;
    if rank == 0 || rank > 16 {
        return Err(Error::Format(format!("implausible tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = u64::from_le_bytes(read_exact(r, 8)?.try_into().unwrap());
        shape.push(usize::try_from(d).map_err(|_| Error::Format("extent overflow".into()))?);
    }
    let width = read_exact(r, 1)?[0];
    let n = numel(&shape);
    let raw = read_exact(r, n * width as usize)?;
    let data: Vec<T> = match width {
        4 => raw.chunks_exact(4).map(|c| T::of(f32::read_le(c) as f64)).collect(),
        8 => raw.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect(),
        w => return Err(Error::Format(format!("unsupported element width {w}"))),
    };
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::from_f64([2], &[1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..5], b"TNSR1");
        assert_eq!(u32::from_le_bytes(buf[5..9].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[9..17].try_into().unwrap()), 2);
        assert_eq!(buf[17], 4);
        assert_eq!(buf.len(), 18 + 8);
    }

    #[test]
    fn round_trip_f64() {
        let t = Tensor::<f64>::from_f64([2, 3], &[0.1, 0.2, 0.3, -1e300, 5.0, 6.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let back: Tensor<f64> = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let t = Tensor::<f32>::ones([4]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let mut bad = buf.clone();
        bad[4] = b'2';
        assert!(matches!(read_tensor::<f32, _>(&mut bad.as_slice()), Err(Error::Version { .. })));
        buf.truncate(buf.len() - 1);
        assert!(matches!(read_tensor::<f32, _>(&mut buf.as_slice()), Err(Error::Format(_))));
    }
}
