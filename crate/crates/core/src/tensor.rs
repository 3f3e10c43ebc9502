//! Dense complex third-order tensors, stored column-major.
//!
//! Entry `(i, j, k)` of an `I x J x K` tensor lives at offset `i + I*j + I*J*k`,
//! so frontal slab `k` is a contiguous `I x J` column-major block and the
//! mode-3 unfolding is the data buffer reinterpreted as an `IJ x K` matrix.

use nalgebra::DMatrixView;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{CMat, ZERO};
use crate::selection::SelectionSet;

/// One of the three tensor modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::One, Mode::Two, Mode::Three];

    /// Maps 1, 2, 3 onto the corresponding mode.
    pub fn from_number(m: usize) -> Result<Mode> {
        match m {
            1 => Ok(Mode::One),
            2 => Ok(Mode::Two),
            3 => Ok(Mode::Three),
            _ => Err(Error::InvalidArgument(format!("mode must be 1, 2 or 3 (got {m})"))),
        }
    }

    /// 0-based position of the mode.
    pub fn index(self) -> usize {
        match self {
            Mode::One => 0,
            Mode::Two => 1,
            Mode::Three => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::One => "mode-1 (rows)",
            Mode::Two => "mode-2 (columns)",
            Mode::Three => "mode-3 (fibers)",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<Complex64>,
}

impl Tensor3 {
    pub fn new(dims: [usize; 3], data: Vec<Complex64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("dimensions must be positive, got {dims:?}")));
        }
        let len = dims[0] * dims[1] * dims[2];
        if data.len() != len {
            return Err(Error::Shape(format!(
                "data length {} does not match dims {:?} ({} entries)",
                data.len(),
                dims,
                len
            )));
        }
        if let Some(pos) = data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite(format!("tensor entry at offset {pos}")));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "dimensions must be positive");
        Self { dims, data: vec![ZERO; dims[0] * dims[1] * dims[2]] }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> Complex64) -> Self {
        let mut t = Self::zeros(dims);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    t.data[i + dims[0] * (j + dims[1] * k)] = f(i, j, k);
                }
            }
        }
        t
    }

    /// Promotes a real-valued buffer.
    pub fn from_real(dims: [usize; 3], data: &[f64]) -> Result<Self> {
        Self::new(dims, data.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> Complex64 {
        self.data[self.offset(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: Complex64) {
        let o = self.offset(i, j, k);
        self.data[o] = v;
    }

    /// Frontal slab `X(:, :, k)` as an `I x J` view.
    pub fn frontal(&self, k: usize) -> DMatrixView<'_, Complex64> {
        let [i, j, _] = self.dims;
        DMatrixView::from_slice(&self.data[i * j * k..i * j * (k + 1)], i, j)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scaled(&self, alpha: Complex64) -> Tensor3 {
        Tensor3 { dims: self.dims, data: self.data.iter().map(|z| z * alpha).collect() }
    }

    pub fn sub(&self, other: &Tensor3) -> Result<Tensor3> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!("dims {:?} vs {:?}", self.dims, other.dims)));
        }
        Ok(Tensor3 {
            dims: self.dims,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    /// Gathers the sub-tensor `X(rows, cols, fibers)`; `None` keeps a mode whole.
    pub fn select(
        &self,
        rows: Option<&SelectionSet>,
        cols: Option<&SelectionSet>,
        fibers: Option<&SelectionSet>,
    ) -> Result<Tensor3> {
        let pick = |s: Option<&SelectionSet>, m: usize| -> Result<Vec<usize>> {
            match s {
                None => Ok((0..self.dims[m]).collect()),
                Some(s) if s.ambient() == self.dims[m] => Ok(s.indices().to_vec()),
                Some(s) => Err(Error::Shape(format!(
                    "selection over {} does not match {} of size {}",
                    s.ambient(),
                    Mode::ALL[m].name(),
                    self.dims[m]
                ))),
            }
        };
        let (ri, ci, fi) = (pick(rows, 0)?, pick(cols, 1)?, pick(fibers, 2)?);
        let dims = [ri.len(), ci.len(), fi.len()];
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for &k in &fi {
            for &j in &ci {
                let base = self.dims[0] * (j + self.dims[1] * k);
                data.extend(ri.iter().map(|&i| self.data[base + i]));
            }
        }
        Ok(Tensor3 { dims, data })
    }
}

/// Unfolds a tensor: mode 1 gives `JK x I`, mode 2 gives `IK x J`, mode 3 gives `IJ x K`,
/// each column being the column-major vectorization of the matching slab.
pub fn unfold(t: &Tensor3, mode: Mode) -> CMat {
    let [ni, nj, nk] = t.dims;
    match mode {
        Mode::Three => CMat::from_column_slice(ni * nj, nk, &t.data),
        Mode::One => CMat::from_fn(nj * nk, ni, |r, i| t.get(i, r % nj, r / nj)),
        Mode::Two => CMat::from_fn(ni * nk, nj, |r, j| t.get(r % ni, j, r / ni)),
    }
}

/// Inverse of [`unfold`].
pub fn fold(m: &CMat, mode: Mode, dims: [usize; 3]) -> Result<Tensor3> {
    let [ni, nj, nk] = dims;
    let expected = match mode {
        Mode::One => (nj * nk, ni),
        Mode::Two => (ni * nk, nj),
        Mode::Three => (ni * nj, nk),
    };
    if m.shape() != expected || dims.iter().any(|&d| d == 0) {
        return Err(Error::Shape(format!(
            "matrix of shape {:?} cannot fold along {} into {:?} (expected {:?})",
            m.shape(),
            mode.name(),
            dims,
            expected
        )));
    }
    let t = match mode {
        Mode::Three => Tensor3 { dims, data: m.as_slice().to_vec() },
        Mode::One => Tensor3::from_fn(dims, |i, j, k| m[(j + nj * k, i)]),
        Mode::Two => Tensor3::from_fn(dims, |i, j, k| m[(i + ni * k, j)]),
    };
    Tensor3::new(t.dims, t.data)
}

/// Restricts a tensor to the selected indices along one mode (`X x_m P`).
pub fn mode_product(t: &Tensor3, mode: Mode, s: &SelectionSet) -> Result<Tensor3> {
    if s.ambient() != t.dims[mode.index()] {
        return Err(Error::Shape(format!(
            "selection ambient {} differs from {} size {}",
            s.ambient(),
            mode.name(),
            t.dims[mode.index()]
        )));
    }
    match mode {
        Mode::One => t.select(Some(s), None, None),
        Mode::Two => t.select(None, Some(s), None),
        Mode::Three => t.select(None, None, Some(s)),
    }
}

/// Normalized reconstruction error: summed frontal-slab Frobenius error norms over
/// summed frontal-slab norms of the truth.
pub fn nre(estimate: &Tensor3, truth: &Tensor3) -> Result<f64> {
    if estimate.dims != truth.dims {
        return Err(Error::Shape(format!("dims {:?} vs {:?}", estimate.dims, truth.dims)));
    }
    let slab = estimate.dims[0] * estimate.dims[1];
    let mut num = 0.0;
    let mut den = 0.0;
    for (e, x) in estimate.data.chunks(slab).zip(truth.data.chunks(slab)) {
        num += e.iter().zip(x).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        den += x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    }
    if den == 0.0 {
        return Err(Error::InvalidArgument("NRE undefined for an all-zero reference tensor".into()));
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn tracer(dims: [usize; 3]) -> Tensor3 {
        Tensor3::from_fn(dims, |i, j, k| Complex64::new((i + 10 * j + 100 * k) as f64, k as f64))
    }

    #[test]
    fn constant_unfold() {
        let t = Tensor3::from_fn([2, 2, 2], |_, _, _| c(1.0));
        let m = unfold(&t, Mode::Three);
        assert_eq!(m.shape(), (4, 2));
        assert!(m.iter().all(|&z| z == c(1.0)));
        assert_eq!(fold(&m, Mode::Three, [2, 2, 2]).unwrap(), t);
    }

    #[test]
    fn unfold_columns_are_slab_vectorizations() {
        let t = tracer([3, 4, 5]);
        let m1 = unfold(&t, Mode::One);
        // column i = vec(X(i,:,:)), a J x K slab.
        assert_eq!(m1[(2 + 4 * 3, 1)], t.get(1, 2, 3));
        let m2 = unfold(&t, Mode::Two);
        assert_eq!(m2[(2 + 3 * 4, 1)], t.get(2, 1, 4));
        let m3 = unfold(&t, Mode::Three);
        assert_eq!(m3[(1 + 3 * 2, 4)], t.get(1, 2, 4));
    }

    #[test]
    fn fold_shape_mismatch() {
        let m = CMat::from_element(4, 2, c(1.0));
        assert!(matches!(fold(&m, Mode::Three, [3, 3, 3]), Err(Error::Shape(_))));
    }

    #[test]
    fn select_all_is_identity_and_commutes() {
        let t = tracer([4, 3, 5]);
        let all = SelectionSet::full(4);
        assert_eq!(mode_product(&t, Mode::One, &all).unwrap(), t);
        let r = SelectionSet::new(vec![0, 3], 4).unwrap();
        let f = SelectionSet::new(vec![1, 2, 4], 5).unwrap();
        let a = mode_product(&mode_product(&t, Mode::One, &r).unwrap(), Mode::Three, &f).unwrap();
        let b = mode_product(&mode_product(&t, Mode::Three, &f).unwrap(), Mode::One, &r).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.get(1, 2, 0), t.get(3, 2, 1));
    }

    #[test]
    fn mode_product_rejects_wrong_ambient() {
        let t = tracer([4, 3, 5]);
        let s = SelectionSet::new(vec![0, 1], 3).unwrap();
        assert!(mode_product(&t, Mode::One, &s).is_err());
    }

    #[test]
    fn nre_basics() {
        let t = tracer([3, 3, 2]);
        assert_eq!(nre(&t, &t).unwrap(), 0.0);
        let zero = Tensor3::zeros([3, 3, 2]);
        assert!((nre(&zero, &t).unwrap() - 1.0).abs() < 1e-15);
        assert!((nre(&t.scaled(c(2.0)), &t).unwrap() - 1.0).abs() < 1e-15);
        assert!(nre(&t, &zero).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let mut d = vec![c(0.0); 8];
        d[3] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(Tensor3::new([2, 2, 2], d), Err(Error::NonFinite(_))));
    }

    proptest! {
        #[test]
        fn fold_unfold_round_trip(i in 1usize..6, j in 1usize..6, k in 1usize..6, seed in any::<u64>()) {
            let t = Tensor3::from_fn([i, j, k], |a, b, c| {
                let h = (a as u64 * 31 + b as u64 * 17 + c as u64 * 7) ^ seed;
                Complex64::new((h % 1000) as f64 / 7.0, (h % 97) as f64)
            });
            for m in Mode::ALL {
                prop_assert_eq!(fold(&unfold(&t, m), m, [i, j, k]).unwrap(), t.clone());
            }
        }

        #[test]
        fn nre_of_scaled_truth(alpha in 0.0f64..5.0) {
            let t = tracer([3, 2, 4]);
            let e = nre(&t.scaled(c(alpha)), &t).unwrap();
            prop_assert!((e - (alpha - 1.0).abs()).abs() < 1e-12);
        }
    }
}
