//! Binary tensor containers.
//!
//! `TNS3`: magic `b"TNS3"`, version byte (1), dtype byte (0 = complex128 LE),
//! three little-endian `u64` dims, then `I*J*K` interleaved `(re, im)` `f64`
//! pairs in column-major order.
//!
//! `TNSN`: magic `b"TNSN"`, version byte, dtype byte, order byte `N`, `N`
//! little-endian `u64` dims, then the data as above.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fmri::ArrayN;
use crate::tensor::Tensor3;

pub const TNS3_MAGIC: &[u8; 4] = b"TNS3";
pub const TNSN_MAGIC: &[u8; 4] = b"TNSN";
pub const FORMAT_VERSION: u8 = 1;
pub const DTYPE_COMPLEX128: u8 = 0;

/// Header fields of a `TNS3` stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tns3Header {
    pub version: u8,
    pub dtype: u8,
    pub dims: [usize; 3],
}

pub fn write_tns3<W: Write>(w: &mut W, t: &Tensor3) -> Result<()> {
    w.write_all(TNS3_MAGIC)?;
    w.write_all(&[FORMAT_VERSION, DTYPE_COMPLEX128])?;
    for d in t.dims() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    write_data(w, t.data())
}

pub fn read_tns3<R: Read>(r: &mut R) -> Result<Tensor3> {
    let header = read_tns3_header(r)?;
    let n = header.dims.iter().product();
    let data = read_data(r, n)?;
    Tensor3::new(header.dims, data)
}

pub fn read_tns3_header<R: Read>(r: &mut R) -> Result<Tns3Header> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TNS3_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected TNS3")));
    }
    let (version, dtype) = read_version_dtype(r)?;
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        *d = read_dim(r)?;
    }
    Ok(Tns3Header { version, dtype, dims })
}

pub fn write_tnsn<W: Write>(w: &mut W, a: &ArrayN) -> Result<()> {
    let order = u8::try_from(a.dims().len())
        .map_err(|_| Error::Format("TNSN supports at most 255 modes".into()))?;
    w.write_all(TNSN_MAGIC)?;
    w.write_all(&[FORMAT_VERSION, DTYPE_COMPLEX128, order])?;
    for &d in a.dims() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    write_data(w, a.data())
}

pub fn read_tnsn<R: Read>(r: &mut R) -> Result<ArrayN> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TNSN_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected TNSN")));
    }
    read_version_dtype(r)?;
    let mut order = [0u8; 1];
    r.read_exact(&mut order)?;
    let dims = (0..order[0]).map(|_| read_dim(r)).collect::<Result<Vec<_>>>()?;
    let n = dims.iter().product();
    let data = read_data(r, n)?;
    ArrayN::new(dims, data)
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor3) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tns3(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor3> {
    read_tns3(&mut BufReader::new(File::open(path)?))
}

pub fn save_array(path: impl AsRef<Path>, a: &ArrayN) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tnsn(&mut w, a)?;
    w.flush()?;
    Ok(())
}

pub fn load_array(path: impl AsRef<Path>) -> Result<ArrayN> {
    read_tnsn(&mut BufReader::new(File::open(path)?))
}

fn read_version_dtype<R: Read>(r: &mut R) -> Result<(u8, u8)> {
    let mut vd = [0u8; 2];
    r.read_exact(&mut vd)?;
    if vd[0] != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {}", vd[0])));
    }
    if vd[1] != DTYPE_COMPLEX128 {
        return Err(Error::Format(format!("unsupported dtype {}", vd[1])));
    }
    Ok((vd[0], vd[1]))
}

fn read_dim<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::Format("dimension overflows usize".into()))
}

fn write_data<W: Write>(w: &mut W, data: &[Complex64]) -> Result<()> {
    for z in data {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

fn read_data<R: Read>(r: &mut R, n: usize) -> Result<Vec<Complex64>> {
    let mut buf = vec![0u8; n.checked_mul(16).ok_or_else(|| Error::Format("size overflow".into()))?];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            Complex64::new(re, im)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tns3_layout_is_bit_exact() {
        let t = Tensor3::from_fn([1, 2, 1], |_, j, _| Complex64::new(j as f64 + 0.5, -1.0));
        let mut buf = Vec::new();
        write_tns3(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"TNS3");
        assert_eq!(buf[4], 1);
        assert_eq!(buf[5], 0);
        assert_eq!(&buf[6..14], &1u64.to_le_bytes());
        assert_eq!(&buf[14..22], &2u64.to_le_bytes());
        assert_eq!(&buf[22..30], &1u64.to_le_bytes());
        assert_eq!(&buf[30..38], &0.5f64.to_le_bytes());
        assert_eq!(&buf[38..46], &(-1.0f64).to_le_bytes());
        assert_eq!(buf.len(), 30 + 2 * 16);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bad = b"TNSX".to_vec();
        bad.extend_from_slice(&[1, 0]);
        assert!(matches!(read_tns3(&mut bad.as_slice()), Err(Error::Format(_))));
        let t = Tensor3::zeros([2, 2, 2]);
        let mut buf = Vec::new();
        write_tns3(&mut buf, &t).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_tns3(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn tnsn_round_trip() {
        let a = ArrayN::from_fn(vec![2, 3, 1, 2], |idx| Complex64::new(idx[0] as f64, (idx[1] + idx[3]) as f64));
        let mut buf = Vec::new();
        write_tnsn(&mut buf, &a).unwrap();
        assert_eq!(&buf[..4], b"TNSN");
        assert_eq!(buf[6], 4);
        assert_eq!(read_tnsn(&mut buf.as_slice()).unwrap(), a);
    }

    proptest! {
        #[test]
        fn tns3_round_trip(i in 1usize..5, j in 1usize..5, k in 1usize..5, re in -1e6f64..1e6, im in -1e6f64..1e6) {
            let t = Tensor3::from_fn([i, j, k], |a, b, c| Complex64::new(re * a as f64, im - (b * c) as f64));
            let mut buf = Vec::new();
            write_tns3(&mut buf, &t).unwrap();
            prop_assert_eq!(read_tns3(&mut buf.as_slice()).unwrap(), t);
        }
    }
}
