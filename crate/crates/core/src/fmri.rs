//! Layout conversion between multi-way k-space arrays and third-order tensors,
//! plus image-domain error metrics.
//!
//! Single-slice data `m_x x m_y x m_c x J` becomes `(m_x m_y) x J x m_c`;
//! multi-slice data `m_x x m_y x m_c x J x m_s` becomes `(m_x m_y) x J x (m_s m_c)`
//! with the coil index varying fastest in the third mode. The k-space point
//! `(k_x, k_y)` maps to row `k_x + m_x k_y`.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ZERO;
use crate::tensor::{nre, Tensor3};

/// Dense column-major N-way complex array (first index fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayN {
    dims: Vec<usize>,
    data: Vec<Complex64>,
}

impl ArrayN {
    pub fn new(dims: Vec<usize>, data: Vec<Complex64>) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("invalid dims {dims:?}")));
        }
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!("data length {} vs dims {dims:?}", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> Complex64) -> Self {
        let n = dims.iter().product();
        let mut idx = vec![0usize; dims.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            for (d, i) in idx.iter_mut().enumerate() {
                *i += 1;
                if *i < dims[d] {
                    break;
                }
                *i = 0;
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.dims).rev().fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn get(&self, idx: &[usize]) -> Complex64 {
        self.data[self.offset(idx)]
    }
}

/// Acquisition geometry of an fMRI scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanGeometry {
    pub mx: usize,
    pub my: usize,
    #[serde(default = "one")]
    pub mc: usize,
    #[serde(default = "one")]
    pub ms: usize,
    #[serde(default)]
    pub frames: usize,
}

fn one() -> usize {
    1
}

impl ScanGeometry {
    pub fn kspace_len(&self) -> usize {
        self.mx * self.my
    }

    /// Row index of k-space point `(kx, ky)`.
    pub fn row(&self, kx: usize, ky: usize) -> usize {
        kx + self.mx * ky
    }

    /// Third-mode index of coil `c` in slice `s`.
    pub fn channel(&self, coil: usize, slice: usize) -> usize {
        coil + self.mc * slice
    }

    pub fn channels(&self) -> usize {
        self.mc * self.ms
    }
}

/// `m_x x m_y x m_c x J` to `(m_x m_y) x J x m_c`.
pub fn reshape_single(x4: &ArrayN) -> Result<Tensor3> {
    let d = x4.dims();
    if d.len() != 4 {
        return Err(Error::Shape(format!("expected a 4-way array, got dims {d:?}")));
    }
    let (mx, my, mc, nj) = (d[0], d[1], d[2], d[3]);
    Ok(Tensor3::from_fn([mx * my, nj, mc], |i, j, k| x4.get(&[i % mx, i / mx, k, j])))
}

pub fn unreshape_single(t: &Tensor3, mx: usize, my: usize) -> Result<ArrayN> {
    let [ni, nj, nk] = t.dims();
    if ni != mx * my {
        return Err(Error::Shape(format!("first mode {ni} is not {mx} x {my}")));
    }
    Ok(ArrayN::from_fn(vec![mx, my, nk, nj], |idx| t.get(idx[0] + mx * idx[1], idx[3], idx[2])))
}

/// `m_x x m_y x m_c x J x m_s` to `(m_x m_y) x J x (m_s m_c)`, coil fastest.
pub fn reshape_multi(x5: &ArrayN) -> Result<Tensor3> {
    let d = x5.dims();
    if d.len() != 5 {
        return Err(Error::Shape(format!("expected a 5-way array, got dims {d:?}")));
    }
    let (mx, my, mc, nj, ms) = (d[0], d[1], d[2], d[3], d[4]);
    Ok(Tensor3::from_fn([mx * my, nj, mc * ms], |i, j, k| {
        x5.get(&[i % mx, i / mx, k % mc, j, k / mc])
    }))
}

pub fn unreshape_multi(t: &Tensor3, mx: usize, my: usize, mc: usize) -> Result<ArrayN> {
    let [ni, nj, nk] = t.dims();
    if ni != mx * my || mc == 0 || nk % mc != 0 {
        return Err(Error::Shape(format!("tensor dims {:?} inconsistent with mx={mx} my={my} mc={mc}", t.dims())));
    }
    let ms = nk / mc;
    Ok(ArrayN::from_fn(vec![mx, my, mc, nj, ms], |idx| {
        t.get(idx[0] + mx * idx[1], idx[3], idx[2] + mc * idx[4])
    }))
}

/// Orthonormal 2-D inverse DFT of a column-major `m_x x m_y` k-space frame.
pub fn idft2(kframe: &[Complex64], mx: usize, my: usize) -> Vec<Complex64> {
    assert_eq!(kframe.len(), mx * my, "frame length must be mx * my");
    let mut planner = FftPlanner::<f64>::new();
    let fx = planner.plan_fft_inverse(mx);
    let fy = planner.plan_fft_inverse(my);
    let mut buf = kframe.to_vec();
    // columns of the m_x x m_y frame are contiguous
    for col in buf.chunks_exact_mut(mx) {
        fx.process(col);
    }
    let mut line = vec![ZERO; my];
    for x in 0..mx {
        for y in 0..my {
            line[y] = buf[x + mx * y];
        }
        fy.process(&mut line);
        for y in 0..my {
            buf[x + mx * y] = line[y];
        }
    }
    let scale = 1.0 / ((mx * my) as f64).sqrt();
    buf.iter_mut().for_each(|z| *z *= scale);
    buf
}

/// Magnitude image `|Q(kframe)|`.
pub fn idft2_magnitude(kframe: &[Complex64], mx: usize, my: usize) -> Vec<f64> {
    idft2(kframe, mx, my).iter().map(|z| z.norm()).collect()
}

/// Magnitude images of every `(frame, channel)` pair, as a real tensor with the same layout.
pub fn magnitude_images(t: &Tensor3, geom: &ScanGeometry) -> Result<Tensor3> {
    let [ni, nj, nk] = t.dims();
    if ni != geom.kspace_len() {
        return Err(Error::Shape(format!(
            "first mode {ni} does not match geometry {} x {}",
            geom.mx, geom.my
        )));
    }
    let mut out = Tensor3::zeros([ni, nj, nk]);
    let mut frame = vec![ZERO; ni];
    for k in 0..nk {
        for j in 0..nj {
            for (i, z) in frame.iter_mut().enumerate() {
                *z = t.get(i, j, k);
            }
            for (i, m) in idft2_magnitude(&frame, geom.mx, geom.my).into_iter().enumerate() {
                out.set(i, j, k, Complex64::new(m, 0.0));
            }
        }
    }
    Ok(out)
}

/// NRE between per-coil magnitude images, summed over frontal slabs like [`nre`].
pub fn nre2(estimate: &Tensor3, truth: &Tensor3, geom: &ScanGeometry) -> Result<f64> {
    if estimate.dims() != truth.dims() {
        return Err(Error::Shape(format!("dims {:?} vs {:?}", estimate.dims(), truth.dims())));
    }
    nre(&magnitude_images(estimate, geom)?, &magnitude_images(truth, geom)?)
}
