//! Sparse symmetric storage, factorization wrappers and the dense kernels
//! shared by assembly, spectral analysis and time stepping.

use std::collections::BTreeMap;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt as SparseLlt, Lu as SparseLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::{c64, Col, Mat, Side};

#[derive(Debug, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("sparse factorization failed: {0}")]
    Factorization(String),
    #[error("dense eigensolver failed to converge")]
    EigenNoConvergence,
    #[error("iterative eigensolver did not converge for {wanted} pairs (subspace {subspace})")]
    IterativeNoConvergence { wanted: usize, subspace: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Symmetric sparse matrix in compressed-column form. Both triangles are
/// stored, and entry (i, j) is bitwise identical to entry (j, i).
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Accumulates contributions into the upper triangle, then mirrors.
///
/// Summation order per entry is insertion order, so assembly is reproducible.
#[derive(Debug)]
pub struct SymAccumulator {
    n: usize,
    entries: BTreeMap<(usize, usize), f64>,
}

impl SymAccumulator {
    pub fn new(n: usize) -> Self {
        Self { n, entries: BTreeMap::new() }
    }

    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        debug_assert!(i < self.n && j < self.n);
        let key = if i <= j { (i, j) } else { (j, i) };
        *self.entries.entry(key).or_insert(0.0) += value;
    }

    pub fn finish(self) -> SymMatrix {
        let mut full: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * self.entries.len());
        for (&(i, j), &v) in &self.entries {
            full.push((j, i, v));
            if i != j {
                full.push((i, j, v));
            }
        }
        full.sort_unstable_by_key(|&(col, row, _)| (col, row));
        let mut col_ptr = vec![0usize; self.n + 1];
        let mut row_idx = Vec::with_capacity(full.len());
        let mut values = Vec::with_capacity(full.len());
        for &(col, row, v) in &full {
            col_ptr[col + 1] += 1;
            row_idx.push(row);
            values.push(v);
        }
        for c in 0..self.n {
            col_ptr[c + 1] += col_ptr[c];
        }
        SymMatrix { n: self.n, col_ptr, row_idx, values }
    }
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymAccumulator::new(n).finish()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates stored entries as (row, col, value), column-major.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |c| {
            (self.col_ptr[c]..self.col_ptr[c + 1]).map(move |k| (self.row_idx[k], c, self.values[k]))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let rows = &self.row_idx[self.col_ptr[j]..self.col_ptr[j + 1]];
        match rows.binary_search(&i) {
            Ok(k) => self.values[self.col_ptr[j] + k],
            Err(_) => 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Largest |A_ij - A_ji| over stored entries.
    pub fn asymmetry(&self) -> f64 {
        self.entries().map(|(i, j, v)| (v - self.get(j, i)).abs()).fold(0.0, f64::max)
    }

    /// Induced 1-norm (equal to the infinity norm for symmetric matrices).
    pub fn norm1(&self) -> f64 {
        (0..self.n)
            .map(|c| self.values[self.col_ptr[c]..self.col_ptr[c + 1]].iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Rows/columns carrying at least one nonzero value.
    pub fn support(&self) -> Vec<usize> {
        (0..self.n).filter(|&c| self.values[self.col_ptr[c]..self.col_ptr[c + 1]].iter().any(|&v| v != 0.0)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for c in 0..self.n {
            let xc = x[c];
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[k]] += self.values[k] * xc;
            }
        }
        y
    }

    pub fn mul_cvec(&self, x: &[c64]) -> Vec<c64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![c64::new(0.0, 0.0); self.n];
        for c in 0..self.n {
            let xc = x[c];
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[k]] += xc * self.values[k];
            }
        }
        y
    }

    /// xᵀ A x for real x.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul_vec(x))
    }

    /// x* A x for complex x; real because A is real symmetric.
    pub fn cquad_form(&self, x: &[c64]) -> f64 {
        cdot(x, &self.mul_cvec(x)).re
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::<f64>::zeros(self.n, self.n);
        for (i, j, v) in self.entries() {
            m[(i, j)] = v;
        }
        m
    }

    pub fn to_faer(&self) -> SparseColMat<usize, f64> {
        let trips: Vec<_> = self.entries().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
        SparseColMat::try_new_from_triplets(self.n, self.n, &trips).expect("valid symmetric pattern")
    }

    /// Restriction to the given rows/columns as a dense matrix.
    pub fn dense_block(&self, idx: &[usize]) -> Mat<f64> {
        let mut m = Mat::<f64>::zeros(idx.len(), idx.len());
        for (b, &j) in idx.iter().enumerate() {
            for (a, &i) in idx.iter().enumerate() {
                m[(a, b)] = self.get(i, j);
            }
        }
        m
    }

    /// Linear combination a·self + b·other, both on the same index space.
    pub fn combine(&self, a: f64, other: &SymMatrix, b: f64) -> SymMatrix {
        assert_eq!(self.n, other.n);
        let mut acc = SymAccumulator::new(self.n);
        for (i, j, v) in self.entries().filter(|e| e.0 <= e.1) {
            acc.add(i, j, a * v);
        }
        for (i, j, v) in other.entries().filter(|e| e.0 <= e.1) {
            acc.add(i, j, b * v);
        }
        acc.finish()
    }

    /// Writes the matrix in 1-based coordinate text format.
    pub fn write_coo<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "% symmetric real coordinate, both triangles stored")?;
        writeln!(out, "{} {} {}", self.n, self.n, self.nnz())?;
        for (i, j, v) in self.entries() {
            writeln!(out, "{} {} {:e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Σ conj(a_i) b_i.
pub fn cdot(a: &[c64], b: &[c64]) -> c64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cnorm2(a: &[c64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn to_complex(a: &[f64]) -> Vec<c64> {
    a.iter().map(|&x| c64::new(x, 0.0)).collect()
}

/// Sparse LLᵀ factorization of a symmetric positive definite matrix.
pub struct SparseCholesky {
    n: usize,
    llt: SparseLlt<usize, f64>,
}

impl SparseCholesky {
    pub fn new(a: &SymMatrix) -> Result<Self, LinalgError> {
        let llt = a.to_faer().sp_cholesky(Side::Lower).map_err(|_| LinalgError::NotPositiveDefinite)?;
        Ok(Self { n: a.dim(), llt })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let rhs = Col::<f64>::from_fn(self.n, |i| b[i]);
        let x = self.llt.solve(&rhs);
        (0..self.n).map(|i| x[i]).collect()
    }

    pub fn solve_complex(&self, b: &[c64]) -> Vec<c64> {
        let re: Vec<f64> = b.iter().map(|z| z.re).collect();
        let im: Vec<f64> = b.iter().map(|z| z.im).collect();
        let xr = self.solve(&re);
        let xi = self.solve(&im);
        xr.into_iter().zip(xi).map(|(r, i)| c64::new(r, i)).collect()
    }

    /// Solves for several right-hand sides stored as columns.
    pub fn solve_mat(&self, b: &Mat<f64>) -> Mat<f64> {
        self.llt.solve(b)
    }
}

/// Sparse LU of a complex matrix assembled from real symmetric pieces.
pub struct SparseComplexLu {
    n: usize,
    lu: SparseLu<usize, c64>,
}

impl SparseComplexLu {
    /// Factors Σ_k coeffs[k]·mats[k]. All matrices must share the dimension.
    pub fn new(terms: &[(c64, &SymMatrix)]) -> Result<Self, LinalgError> {
        let n = terms.first().map(|t| t.1.dim()).unwrap_or(0);
        let mut trips = Vec::new();
        for (coeff, m) in terms {
            if m.dim() != n {
                return Err(LinalgError::Dimension { expected: n, got: m.dim() });
            }
            trips.extend(m.entries().map(|(i, j, v)| Triplet::new(i, j, *coeff * v)));
        }
        let a = SparseColMat::<usize, c64>::try_new_from_triplets(n, n, &trips)
            .map_err(|e| LinalgError::Factorization(format!("{e:?}")))?;
        let lu = a.sp_lu().map_err(|e| LinalgError::Factorization(format!("{e:?}")))?;
        Ok(Self { n, lu })
    }

    pub fn solve(&self, b: &[c64]) -> Vec<c64> {
        assert_eq!(b.len(), self.n);
        let rhs = Col::<c64>::from_fn(self.n, |i| b[i]);
        let x = self.lu.solve(&rhs);
        (0..self.n).map(|i| x[i]).collect()
    }
}

/// Dense lower Cholesky factor.
pub fn cholesky_lower(a: &Mat<f64>) -> Result<Mat<f64>, LinalgError> {
    let llt = a.llt(Side::Lower).map_err(|_| LinalgError::NotPositiveDefinite)?;
    Ok(llt.L().to_owned())
}

/// Solves L X = B for lower-triangular L.
pub fn lower_solve(l: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    let mut x = b.clone();
    l.as_ref().solve_lower_triangular_in_place(x.as_mut());
    x
}

/// Solves Lᵀ X = B for lower-triangular L.
pub fn lower_transpose_solve(l: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    let mut x = b.clone();
    l.as_ref().transpose().solve_upper_triangular_in_place(x.as_mut());
    x
}

pub fn symmetrize(a: &mut Mat<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}

/// Eigenpairs of the symmetric-definite pencil (A, B): A x = λ B x, ascending,
/// with xᵀ B x = 1.
pub fn dense_gen_sym_eigen(a: &Mat<f64>, b: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>), LinalgError> {
    let l = cholesky_lower(b)?;
    let half = lower_solve(&l, a);
    let mut c = lower_solve(&l, &half.transpose().to_owned());
    symmetrize(&mut c);
    let evd = c.self_adjoint_eigen(Side::Lower).map_err(|_| LinalgError::EigenNoConvergence)?;
    let n = a.nrows();
    let values: Vec<f64> = (0..n).map(|i| evd.S()[i]).collect();
    let vectors = lower_transpose_solve(&l, &evd.U().to_owned());
    Ok((values, vectors))
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const PADE13_THETA: f64 = 5.371920351148152;

fn mat_norm1(a: &Mat<f64>) -> f64 {
    (0..a.ncols()).map(|j| (0..a.nrows()).map(|i| a[(i, j)].abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Matrix exponential by degree-13 Padé approximation with scaling and squaring.
pub fn expm(a: &Mat<f64>) -> Mat<f64> {
    let n = a.nrows();
    let norm = mat_norm1(a);
    let squarings = if norm > PADE13_THETA { (norm / PADE13_THETA).log2().ceil() as i32 } else { 0 };
    let scale = 0.5f64.powi(squarings);
    let a1 = a * faer::Scale(scale);
    let id = Mat::<f64>::identity(n, n);
    let a2 = &a1 * &a1;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;
    let inner_u = &a6 * faer::Scale(b[13]) + &a4 * faer::Scale(b[11]) + &a2 * faer::Scale(b[9]);
    let u_poly = &a6 * &inner_u
        + &a6 * faer::Scale(b[7])
        + &a4 * faer::Scale(b[5])
        + &a2 * faer::Scale(b[3])
        + &id * faer::Scale(b[1]);
    let u = &a1 * &u_poly;
    let inner_v = &a6 * faer::Scale(b[12]) + &a4 * faer::Scale(b[10]) + &a2 * faer::Scale(b[8]);
    let v = &a6 * &inner_v
        + &a6 * faer::Scale(b[6])
        + &a4 * faer::Scale(b[4])
        + &a2 * faer::Scale(b[2])
        + &id * faer::Scale(b[0]);
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.partial_piv_lu().solve(&p);
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

/// Largest singular value (spectral norm).
pub fn spectral_norm(a: &Mat<f64>) -> Result<f64, LinalgError> {
    let sv = a.singular_values().map_err(|_| LinalgError::EigenNoConvergence)?;
    Ok(sv.first().copied().unwrap_or(0.0))
}

/// Smallest eigenpairs of K x = λ B x by shift-invert Lanczos (shift 0) with
/// full B-reorthogonalization. `k_solver` applies K⁻¹.
pub fn lanczos_smallest(
    k: &SymMatrix,
    b: &SymMatrix,
    k_solver: &SparseCholesky,
    count: usize,
    tol: f64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>), LinalgError> {
    let n = k.dim();
    let mut subspace = (2 * count + 20).min(n);
    loop {
        let (values, vectors) = lanczos_pass(k, b, k_solver, count, subspace)?;
        let converged = values.iter().zip(&vectors).all(|(&lam, x)| {
            let kx = k.mul_vec(x);
            let bx = b.mul_vec(x);
            let r: Vec<f64> = kx.iter().zip(&bx).map(|(p, q)| p - lam * q).collect();
            norm2(&r) <= tol * norm2(&kx)
        });
        if converged {
            return Ok((values, vectors));
        }
        if subspace == n {
            return Err(LinalgError::IterativeNoConvergence { wanted: count, subspace });
        }
        subspace = (2 * subspace).min(n);
    }
}

fn lanczos_pass(
    k: &SymMatrix,
    b: &SymMatrix,
    k_solver: &SparseCholesky,
    count: usize,
    subspace: usize,
) -> Result<(Vec<f64>, Vec<Vec<f64>>), LinalgError> {
    let n = k.dim();
    // deterministic, non-degenerate start vector
    let mut q: Vec<f64> = (0..n).map(|i| 1.0 + ((i as f64) * 0.754_877_666).sin()).collect();
    let bn = b.quad_form(&q).sqrt();
    q.iter_mut().for_each(|x| *x /= bn);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut bbasis: Vec<Vec<f64>> = vec![b.mul_vec(&basis[0])];
    let mut h = Mat::<f64>::zeros(subspace, subspace);
    for j in 0..subspace {
        let mut w = k_solver.solve(&bbasis[j]);
        for _pass in 0..2 {
            for (i, (qi, bqi)) in basis.iter().zip(&bbasis).enumerate() {
                let c = dot(bqi, &w);
                h[(i, j)] += c;
                w.iter_mut().zip(qi).for_each(|(x, y)| *x -= c * y);
            }
        }
        if j + 1 == subspace {
            break;
        }
        let bw = b.mul_vec(&w);
        let beta = dot(&w, &bw).sqrt();
        if beta <= 1e-14 * h[(j, j)].abs().max(1e-300) {
            // invariant subspace reached
            let m = j + 1;
            return ritz(&h, m, &basis, count);
        }
        h[(j + 1, j)] = beta;
        w.iter_mut().for_each(|x| *x /= beta);
        bbasis.push(bw.into_iter().map(|x| x / beta).collect());
        basis.push(w);
    }
    ritz(&h, subspace, &basis, count)
}

fn ritz(h: &Mat<f64>, m: usize, basis: &[Vec<f64>], count: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>), LinalgError> {
    let mut t = h.as_ref().submatrix(0, 0, m, m).to_owned();
    symmetrize(&mut t);
    let evd = t.self_adjoint_eigen(Side::Lower).map_err(|_| LinalgError::EigenNoConvergence)?;
    // largest θ of K⁻¹B ↔ smallest λ = 1/θ
    let take = count.min(m);
    let n = basis[0].len();
    let mut values = Vec::with_capacity(take);
    let mut vectors = Vec::with_capacity(take);
    for r in 0..take {
        let idx = m - 1 - r;
        let theta = evd.S()[idx];
        values.push(1.0 / theta);
        let mut x = vec![0.0; n];
        for (i, qi) in basis.iter().take(m).enumerate() {
            let s = evd.U()[(i, idx)];
            x.iter_mut().zip(qi).for_each(|(a, b)| *a += s * b);
        }
        vectors.push(x);
    }
    Ok((values, vectors))
}
