//! Dense linear algebra kernel shared by every other module.
//!
//! Matrices carry a [`Field`] tag: real-tagged matrices hold exactly zero
//! imaginary parts and are decomposed with real arithmetic, so that vectors
//! derived from them (null-space bases, solves) stay real.
//!
//! Random sampling uses ChaCha20 (`rand_chacha` 0.9) seeded through
//! `SeedableRng::seed_from_u64`. Independent streams are obtained with
//! [`derive_seed`], a SplitMix64 mix of `(seed, stream index)`.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CVector = DVector<C64>;

const SVD_MAX_ITER: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Complex,
    Real,
}

/// Dense matrix with a field tag. Dereferences to the underlying
/// `DMatrix<Complex64>` for read-only arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: DMatrix<C64>,
    field: Field,
}

impl Matrix {
    pub fn complex(data: DMatrix<C64>) -> Self {
        assert!(
            data.nrows() >= 1 && data.ncols() >= 1,
            "matrix must be nonempty, got {}x{}",
            data.nrows(),
            data.ncols()
        );
        Self {
            data,
            field: Field::Complex,
        }
    }

    pub fn real(data: &DMatrix<f64>) -> Self {
        let mut m = Self::complex(data.map(|x| C64::new(x, 0.0)));
        m.field = Field::Real;
        m
    }

    /// Tags `data` as real. Fails if any imaginary part is nonzero.
    pub fn real_from_complex(data: DMatrix<C64>) -> Result<Self> {
        if data.iter().any(|z| z.im != 0.0) {
            return Err(Error::InvalidParameter(
                "real-tagged matrix has nonzero imaginary parts".into(),
            ));
        }
        let mut m = Self::complex(data);
        m.field = Field::Real;
        Ok(m)
    }

    /// Wraps `data` with the given tag; imaginary parts are dropped when `field` is real.
    pub fn with_field(data: DMatrix<C64>, field: Field) -> Self {
        match field {
            Field::Complex => Self::complex(data),
            Field::Real => Self::real(&data.map(|z| z.re)),
        }
    }

    pub fn zeros(rows: usize, cols: usize, field: Field) -> Self {
        Self::with_field(DMatrix::zeros(rows, cols), field)
    }

    pub fn identity(n: usize, field: Field) -> Self {
        Self::with_field(DMatrix::identity(n, n), field)
    }

    pub fn from_column(v: &CVector, field: Field) -> Self {
        Self::with_field(DMatrix::from_column_slice(v.len(), 1, v.as_slice()), field)
    }

    pub fn from_columns(cols: &[CVector], field: Field) -> Self {
        Self::with_field(DMatrix::from_columns(cols), field)
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn is_real(&self) -> bool {
        self.field == Field::Real
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn inner(&self) -> &DMatrix<C64> {
        &self.data
    }

    pub fn into_inner(self) -> DMatrix<C64> {
        self.data
    }

    pub fn real_part(&self) -> DMatrix<f64> {
        self.data.map(|z| z.re)
    }

    /// Product; the result is real-tagged only when both factors are.
    pub fn mul(&self, rhs: &Matrix) -> Matrix {
        Self::with_field(&self.data * &rhs.data, self.field.join(rhs.field))
    }

    pub fn adjoint(&self) -> Matrix {
        Self::with_field(self.data.adjoint(), self.field)
    }

    pub fn transpose(&self) -> Matrix {
        Self::with_field(self.data.transpose(), self.field)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Self::with_field(&self.data * C64::new(s, 0.0), self.field)
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.data)
    }

    pub fn column(&self, j: usize) -> CVector {
        self.data.column(j).into_owned()
    }

    /// Column-major vectorization.
    pub fn vec(&self) -> CVector {
        CVector::from_column_slice(self.data.as_slice())
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixDoc {
    field: Field,
    rows: usize,
    cols: usize,
    /// Row-major `[re, im]` pairs.
    entries: Vec<[f64; 2]>,
}

impl Serialize for Matrix {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let entries = (0..self.rows())
            .flat_map(|i| (0..self.cols()).map(move |j| (i, j)))
            .map(|(i, j)| [self.data[(i, j)].re, self.data[(i, j)].im])
            .collect();
        MatrixDoc {
            field: self.field,
            rows: self.rows(),
            cols: self.cols(),
            entries,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = MatrixDoc::deserialize(deserializer)?;
        if doc.rows == 0 || doc.cols == 0 || doc.entries.len() != doc.rows * doc.cols {
            return Err(D::Error::custom(
                "matrix entry count does not match its shape",
            ));
        }
        let entries: Vec<C64> = doc
            .entries
            .iter()
            .map(|[re, im]| C64::new(*re, *im))
            .collect();
        let data = DMatrix::from_row_slice(doc.rows, doc.cols, &entries);
        match doc.field {
            Field::Complex => Ok(Matrix::complex(data)),
            Field::Real => Matrix::real_from_complex(data).map_err(D::Error::custom),
        }
    }
}

impl Deref for Matrix {
    type Target = DMatrix<C64>;

    fn deref(&self) -> &Self::Target {
        &self.data
    }
}

impl Field {
    pub fn join(self, other: Field) -> Field {
        if self == Field::Real && other == Field::Real {
            Field::Real
        } else {
            Field::Complex
        }
    }
}

pub fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn block_diag(blocks: &[&Matrix]) -> Matrix {
    assert!(!blocks.is_empty());
    let rows: usize = blocks.iter().map(|b| b.rows()).sum();
    let cols: usize = blocks.iter().map(|b| b.cols()).sum();
    let field = blocks.iter().fold(Field::Real, |f, b| f.join(b.field()));
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r0, c0), (b.rows(), b.cols()))
            .copy_from(b.inner());
        r0 += b.rows();
        c0 += b.cols();
    }
    Matrix::with_field(out, field)
}

// ---------------------------------------------------------------------------
// Seeded sampling

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the subseed of stream `stream` from `seed`. Used for trial
/// indices, per-matrix channel draws and per-purpose streams.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ mix64(stream.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// i.i.d. circularly-symmetric complex Gaussian entries with unit total
/// variance (real and imaginary parts each `N(0, 1/2)`), drawn row-major,
/// real part first.
pub fn sample_complex_gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = rng_from_seed(seed);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let mut entries = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        entries.push(C64::new(scale * re, scale * im));
    }
    Matrix::complex(DMatrix::from_row_slice(rows, cols, &entries))
}

/// i.i.d. standard real Gaussian entries, drawn row-major.
pub fn sample_real_gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = rng_from_seed(seed);
    let entries: Vec<f64> = (0..rows * cols)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Matrix::real(&DMatrix::from_row_slice(rows, cols, &entries))
}

pub fn sample_gaussian(rows: usize, cols: usize, seed: u64, field: Field) -> Matrix {
    match field {
        Field::Complex => sample_complex_gaussian(rows, cols, seed),
        Field::Real => sample_real_gaussian(rows, cols, seed),
    }
}

// ---------------------------------------------------------------------------
// Rank

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankTolerancePolicy {
    pub safety_factor: f64,
}

impl Default for RankTolerancePolicy {
    fn default() -> Self {
        Self {
            safety_factor: 100.0,
        }
    }
}

impl RankTolerancePolicy {
    pub fn new(safety_factor: f64) -> Self {
        Self { safety_factor }
    }

    /// `c * sigma_max * max(rows, cols) * eps`
    pub fn threshold(&self, sigma_max: f64, rows: usize, cols: usize) -> f64 {
        self.safety_factor * sigma_max * rows.max(cols) as f64 * f64::EPSILON
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub rank: usize,
    pub singular_values: Vec<f64>,
    pub tolerance_used: f64,
}

impl RankReport {
    fn from_singular_values(
        sv: Vec<f64>,
        rows: usize,
        cols: usize,
        p: &RankTolerancePolicy,
    ) -> Self {
        let sigma_max = sv.first().copied().unwrap_or(0.0);
        let tol = p.threshold(sigma_max, rows, cols);
        let rank = sv.iter().filter(|&&s| s > tol).count();
        Self {
            rank,
            singular_values: sv,
            tolerance_used: tol,
        }
    }

    pub fn min_singular(&self) -> f64 {
        self.singular_values.last().copied().unwrap_or(0.0)
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.singular_values.len()
    }
}

fn sorted_desc(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

pub fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    let (rows, cols) = a.shape();
    let err = || Error::SvdNonConvergence { rows, cols };
    let sv = if a.is_real() {
        a.real_part()
            .try_svd(false, false, f64::EPSILON, SVD_MAX_ITER)
            .ok_or_else(err)?
            .singular_values
            .iter()
            .copied()
            .collect()
    } else {
        a.inner()
            .clone()
            .try_svd(false, false, f64::EPSILON, SVD_MAX_ITER)
            .ok_or_else(err)?
            .singular_values
            .iter()
            .copied()
            .collect()
    };
    Ok(sorted_desc(sv))
}

pub fn numerical_rank(a: &Matrix, policy: &RankTolerancePolicy) -> Result<RankReport> {
    let sv = singular_values(a)?;
    Ok(RankReport::from_singular_values(
        sv,
        a.rows(),
        a.cols(),
        policy,
    ))
}

// ---------------------------------------------------------------------------
// Null space

#[derive(Debug, Clone)]
pub struct NullVector {
    /// Unit-norm, first nonzero entry real positive.
    pub vector: CVector,
    pub nullity: usize,
    /// `||constraints * vector||`
    pub residual: f64,
    pub tolerance_used: f64,
}

/// Right singular vectors (as columns) and descending singular values of the
/// square zero-padded version of `a`.
fn full_right_svd(a: &Matrix) -> Result<(Vec<f64>, DMatrix<C64>)> {
    let (rows, cols) = a.shape();
    let n = rows.max(cols);
    let err = || Error::SvdNonConvergence { rows, cols };
    if a.is_real() {
        let mut padded = DMatrix::<f64>::zeros(n, cols);
        padded
            .view_mut((0, 0), (rows, cols))
            .copy_from(&a.real_part());
        let svd = padded
            .try_svd(false, true, f64::EPSILON, SVD_MAX_ITER)
            .ok_or_else(err)?;
        let v = svd.v_t.ok_or_else(err)?.transpose();
        Ok((
            svd.singular_values.iter().copied().collect(),
            v.map(|x| C64::new(x, 0.0)),
        ))
    } else {
        let mut padded = DMatrix::<C64>::zeros(n, cols);
        padded.view_mut((0, 0), (rows, cols)).copy_from(a.inner());
        let svd = padded
            .try_svd(false, true, f64::EPSILON, SVD_MAX_ITER)
            .ok_or_else(err)?;
        Ok((
            svd.singular_values.iter().copied().collect(),
            svd.v_t.ok_or_else(err)?.adjoint(),
        ))
    }
}

/// Scales `v` by a unit phase so its first nonzero entry is real positive.
pub fn normalize_phase(v: &mut CVector) {
    let norm = v.norm();
    if norm == 0.0 {
        return;
    }
    if let Some(z) = v.iter().copied().find(|z| z.norm() > 1e-12 * norm) {
        let phase = z.conj() / z.norm();
        v.iter_mut().for_each(|x| *x *= phase);
    }
}

/// Unit vector `u` with `constraints * u ~ 0`. When the null space has
/// dimension above one, the right singular vector of the smallest singular
/// value is returned.
pub fn null_space_vector(constraints: &Matrix, policy: &RankTolerancePolicy) -> Result<NullVector> {
    let (rows, cols) = constraints.shape();
    let (sv, v) = full_right_svd(constraints)?;
    // singular values of the padded square matrix, unsorted
    let sigma_max = sv.iter().copied().fold(0.0, f64::max);
    let tol = policy.threshold(sigma_max, rows, cols);
    let nullity = sv.iter().filter(|&&s| s <= tol).count();
    if nullity == 0 {
        return Err(Error::Infeasible {
            constraints: rows,
            dim: cols,
            context: format!(
                "smallest singular value {:e} above tolerance {:e}",
                sv.iter().copied().fold(f64::INFINITY, f64::min),
                tol
            ),
        });
    }
    let (idx, _) = sv
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("nonempty");
    let mut u = v.column(idx).into_owned();
    let n = u.norm();
    u /= C64::new(n, 0.0);
    normalize_phase(&mut u);
    if constraints.is_real() {
        u.iter_mut().for_each(|z| z.im = 0.0);
    }
    let residual = (constraints.inner() * &u).norm();
    Ok(NullVector {
        vector: u,
        nullity,
        residual,
        tolerance_used: tol,
    })
}

// ---------------------------------------------------------------------------
// Linear solves

fn pivot_ratio<T: nalgebra::ComplexField<RealField = f64>>(u: &DMatrix<T>) -> f64 {
    let diag: Vec<f64> = u.diagonal().iter().map(|z| z.clone().abs()).collect();
    let max = diag.iter().copied().fold(0.0, f64::max);
    let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}

/// Solves `a * x = b` column by column with an LU factorization (partial
/// pivoting). Real arithmetic is used when both operands are real-tagged.
pub fn solve_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::DimensionMismatch(format!(
            "solve needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if b.rows() != n {
        return Err(Error::DimensionMismatch(format!(
            "right-hand side has {} rows, expected {n}",
            b.rows()
        )));
    }
    let singular_limit = n as f64 * f64::EPSILON;
    if a.is_real() && b.is_real() {
        let lu = a.real_part().lu();
        let ratio = pivot_ratio(&lu.u());
        if ratio <= singular_limit {
            return Err(Error::SingularChannel {
                dim: n,
                pivot_ratio: ratio,
            });
        }
        let x = lu.solve(&b.real_part()).ok_or(Error::SingularChannel {
            dim: n,
            pivot_ratio: ratio,
        })?;
        Ok(Matrix::real(&x))
    } else {
        let lu = a.inner().clone().lu();
        let ratio = pivot_ratio(&lu.u());
        if ratio <= singular_limit {
            return Err(Error::SingularChannel {
                dim: n,
                pivot_ratio: ratio,
            });
        }
        let x = lu.solve(b.inner()).ok_or(Error::SingularChannel {
            dim: n,
            pivot_ratio: ratio,
        })?;
        Ok(Matrix::complex(x))
    }
}

pub fn solve(a: &Matrix, b: &CVector) -> Result<CVector> {
    let field = if b.iter().all(|z| z.im == 0.0) {
        Field::Real
    } else {
        Field::Complex
    };
    let x = solve_matrix(a, &Matrix::from_column(b, field))?;
    Ok(x.column(0))
}
