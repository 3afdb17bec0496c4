//! Small complex linear-algebra helpers on top of `nalgebra`.

use nalgebra::DMatrix;
pub use num_complex::Complex64 as C64;

/// Dense complex matrix (column-major).
pub type CMat = DMatrix<C64>;

/// `Tr(A Aᴴ)`, i.e. the squared Frobenius norm.
pub fn power(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Largest entry-wise deviation of `a` from Hermitian symmetry.
pub fn hermitian_defect(a: &CMat) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Smallest eigenvalue of a Hermitian matrix (the Hermitian part is used).
pub fn min_eigenvalue(a: &CMat) -> f64 {
    let sym = (a + a.adjoint()) * C64::new(0.5, 0.0);
    let eig = nalgebra::SymmetricEigen::new(sym);
    eig.eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Real trace of a square matrix.
pub fn trace_re(a: &CMat) -> f64 {
    (0..a.nrows()).map(|i| a[(i, i)].re).sum()
}

/// Permutation matrix `P` with `(P x)[i] = x[perm[i]]`.
pub fn permutation(perm: &[usize]) -> CMat {
    let n = perm.len();
    let mut p = CMat::zeros(n, n);
    for (i, &j) in perm.iter().enumerate() {
        p[(i, j)] = C64::new(1.0, 0.0);
    }
    p
}
