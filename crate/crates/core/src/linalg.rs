//! Thin safe wrappers over LAPACK/BLAS for dense symmetric matrices.
//!
//! Matrices are symmetric, so row-major and column-major layouts coincide and
//! the standard-layout buffer of an [`Array2`] is passed straight through.

use ndarray::{Array1, Array2, ArrayView2, ShapeBuilder};

use crate::error::{Error, Result};

/// Eigenpairs of a symmetric matrix, eigenvalues ascending, eigenvectors as
/// the columns of `vectors`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

impl SymEigen {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `(A + Aᵀ)/2` in place.
pub fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "symmetrize needs a square matrix");
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = m;
            a[[j, i]] = m;
        }
    }
}

fn standard_buffer(a: &ArrayView2<f64>) -> Vec<f64> {
    a.as_standard_layout().iter().cloned().collect()
}

fn check_square(a: &ArrayView2<f64>) -> Result<i32> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "expected square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(a.nrows() as i32)
}

fn syevd(a: &ArrayView2<f64>, vectors: bool) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = check_square(a)?;
    let mut buf = standard_buffer(a);
    let mut w = vec![0.0; n as usize];
    if n == 0 {
        return Ok((w, buf));
    }
    let jobz = if vectors { b'V' } else { b'N' };
    let mut work = vec![0.0; 1];
    let mut iwork = vec![0; 1];
    let mut info = 0;
    unsafe {
        lapack::dsyevd(jobz, b'L', n, &mut buf, n, &mut w, &mut work, -1, &mut iwork, -1, &mut info);
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "dsyevd", info });
    }
    let lwork = work[0] as i32;
    let liwork = iwork[0];
    work = vec![0.0; lwork.max(1) as usize];
    iwork = vec![0; liwork.max(1) as usize];
    unsafe {
        lapack::dsyevd(jobz, b'L', n, &mut buf, n, &mut w, &mut work, lwork, &mut iwork, liwork, &mut info);
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "dsyevd", info });
    }
    Ok((w, buf))
}

/// Full eigendecomposition of a symmetric matrix.
pub fn sym_eigh(a: &ArrayView2<f64>) -> Result<SymEigen> {
    let (w, z) = syevd(a, true)?;
    let n = w.len();
    let vectors = Array2::from_shape_vec((n, n).f(), z).expect("lapack output shape");
    Ok(SymEigen {
        values: Array1::from(w),
        vectors: vectors.as_standard_layout().to_owned(),
    })
}

/// Eigenvalues only, ascending.
pub fn sym_eigvals(a: &ArrayView2<f64>) -> Result<Array1<f64>> {
    Ok(Array1::from(syevd(a, false)?.0))
}

/// The `k` largest eigenpairs (ascending order) via `dsyevr`.
pub fn sym_top_k(a: &ArrayView2<f64>, k: usize) -> Result<SymEigen> {
    let n = check_square(a)?;
    if k == 0 || k as i32 > n {
        return Err(Error::InvalidArgument(format!("top-k with k = {k}, n = {n}")));
    }
    let mut buf = standard_buffer(a);
    let mut m = 0;
    let mut w = vec![0.0; n as usize];
    let mut z = vec![0.0; n as usize * k];
    let mut isuppz = vec![0; 2 * k];
    let (il, iu) = (n - k as i32 + 1, n);
    let mut work = vec![0.0; 1];
    let mut iwork = vec![0; 1];
    let mut info = 0;
    unsafe {
        lapack::dsyevr(
            b'V', b'I', b'L', n, &mut buf, n, 0.0, 0.0, il, iu, 0.0, &mut m, &mut w, &mut z, n,
            &mut isuppz, &mut work, -1, &mut iwork, -1, &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "dsyevr", info });
    }
    let lwork = work[0] as i32;
    let liwork = iwork[0];
    work = vec![0.0; lwork.max(1) as usize];
    iwork = vec![0; liwork.max(1) as usize];
    unsafe {
        lapack::dsyevr(
            b'V', b'I', b'L', n, &mut buf, n, 0.0, 0.0, il, iu, 0.0, &mut m, &mut w, &mut z, n,
            &mut isuppz, &mut work, lwork, &mut iwork, liwork, &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "dsyevr", info });
    }
    let m = m as usize;
    z.truncate(n as usize * m);
    let vectors = Array2::from_shape_vec((n as usize, m).f(), z).expect("lapack output shape");
    Ok(SymEigen {
        values: Array1::from(w[..m].to_vec()),
        vectors: vectors.as_standard_layout().to_owned(),
    })
}

/// `C ← alpha·AᵀA + C` for `A` of shape `(k, n)`, `C` of shape `(n, n)`.
///
/// Only the lower triangle is updated by BLAS; the result is mirrored so `C`
/// stays fully populated.
pub fn syrk_ata_add(c: &mut Array2<f64>, a: &ArrayView2<f64>, alpha: f64) {
    let n = a.ncols();
    let k = a.nrows();
    assert_eq!(c.dim(), (n, n), "syrk output shape");
    if k == 0 || n == 0 {
        return;
    }
    let a_buf = a.as_standard_layout();
    let a_slice = a_buf.as_slice().expect("standard layout");
    let c_slice = c.as_slice_mut().expect("standard layout output");
    // Row-major (k, n) A is column-major (n, k) Aᵀ; the row-major C buffer
    // read column-major is Cᵀ = C. Computing Aᵀ(Aᵀ)ᵀ = AᵀA in BLAS terms:
    // dsyrk('U', 'N') on the column-major Aᵀ fills the upper column-major
    // triangle, i.e. the lower row-major one.
    unsafe {
        blas::dsyrk(b'U', b'N', n as i32, k as i32, alpha, a_slice, n as i32, 1.0, c_slice, n as i32);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            c[[i, j]] = c[[j, i]];
        }
    }
}

/// Largest eigenvalue estimate by power iteration on a symmetric PSD matrix.
pub fn power_max_eig(a: &ArrayView2<f64>, iterations: usize) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = Array1::from_shape_fn(n, |i| 1.0 + (i as f64 * 0.618_033_988_7).fract());
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let w = a.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = v.dot(&w) / v.dot(&v);
        v = w / norm;
    }
    lambda
}
