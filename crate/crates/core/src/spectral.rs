//! The first-order generator `G = (−M, Δ; I, 0)` on `H = L² ⊕ H¹₀` in Galerkin
//! form, its spectrum, resolvent and the imaginary-mode criteria.
//!
//! With `U = (v, w)`, `GU = (B⁻¹(−Dv − Kw), v)` and
//! `⟨(v,w),(f,g)⟩_H = vᵀB f̄ + wᵀK ḡ`. In Cholesky coordinates
//! `y = (L_Bᵀv, L_Kᵀw)` the H-norm is Euclidean and G becomes
//! `C = [[−L_B⁻¹ D L_B⁻ᵀ, −L_B⁻¹L_K], [L_Kᵀ L_B⁻ᵀ, 0]]`.

use std::sync::OnceLock;

use faer::{c64, Mat};
use serde::Serialize;

use crate::fem::{dirichlet_eigs, FemError, OperatorTriple, DENSE_LIMIT};
use crate::linalg::{
    cdot, cholesky_lower, cnorm2, lower_solve, lower_transpose_solve, symmetrize, LinalgError, SparseCholesky,
    SparseComplexLu,
};

#[derive(Debug, thiserror::Error)]
pub enum SpectralError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("eigenpair at {zeta} has residual {residual:e} above tolerance {tolerance:e}")]
    ResidualExceeded { zeta: c64, residual: f64, tolerance: f64 },
    #[error("eigenpair at {zeta} has H-norm {h_norm}, expected 1")]
    NotNormalized { zeta: c64, h_norm: f64 },
    #[error("imaginary mode at {zeta} fails check ({check}): {value:e} > {bound:e}")]
    ImaginaryModeViolation { check: &'static str, zeta: c64, value: f64, bound: f64 },
    #[error("shift {z} is numerically an eigenvalue")]
    SingularShift { z: c64 },
    #[error("requested {count} eigenpairs, at most {max} exist")]
    InvalidCount { count: usize, max: usize },
}

/// A vector of the energy space: velocity `v` and displacement `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct HVector {
    pub v: Vec<c64>,
    pub w: Vec<c64>,
}

impl HVector {
    pub fn zeros(n: usize) -> Self {
        Self { v: vec![c64::new(0.0, 0.0); n], w: vec![c64::new(0.0, 0.0); n] }
    }

    pub fn from_real(v: &[f64], w: &[f64]) -> Self {
        let c = |x: &[f64]| x.iter().map(|&a| c64::new(a, 0.0)).collect();
        Self { v: c(v), w: c(w) }
    }

    pub fn scale(&self, s: c64) -> Self {
        Self { v: self.v.iter().map(|x| x * s).collect(), w: self.w.iter().map(|x| x * s).collect() }
    }

    /// `self + s · other`
    pub fn axpy(&self, s: c64, other: &HVector) -> Self {
        let f = |a: &[c64], b: &[c64]| a.iter().zip(b).map(|(x, y)| x + s * y).collect();
        Self { v: f(&self.v, &other.v), w: f(&self.w, &other.w) }
    }

    fn conj(&self) -> Self {
        Self { v: self.v.iter().map(|x| x.conj()).collect(), w: self.w.iter().map(|x| x.conj()).collect() }
    }

    /// Applies `J = diag(I, −I)`.
    fn flip(&self) -> Self {
        Self { v: self.v.clone(), w: self.w.iter().map(|x| -x).collect() }
    }
}

struct DenseForm {
    lb: Mat<f64>,
    lk: Mat<f64>,
    companion: Mat<f64>,
}

/// Discrete generator built from an operator triple.
pub struct Generator {
    triple: OperatorTriple,
    mass_chol: SparseCholesky,
    dense: OnceLock<Result<DenseForm, String>>,
}

impl Generator {
    pub fn new(triple: OperatorTriple) -> Result<Self, SpectralError> {
        let mass_chol = SparseCholesky::new(&triple.mass)?;
        Ok(Self { triple, mass_chol, dense: OnceLock::new() })
    }

    pub fn triple(&self) -> &OperatorTriple {
        &self.triple
    }

    pub fn ndof(&self) -> usize {
        self.triple.ndof
    }

    /// `⟨U, V⟩_H = vᵀB f̄ + wᵀK ḡ` for `U = (v,w)`, `V = (f,g)`.
    pub fn h_inner(&self, u: &HVector, other: &HVector) -> c64 {
        // cdot conjugates its first argument
        cdot(&self.triple.mass.mul_cvec(&other.v), &u.v) + cdot(&self.triple.stiffness.mul_cvec(&other.w), &u.w)
    }

    pub fn h_norm(&self, u: &HVector) -> f64 {
        (self.triple.mass.cquad_form(&u.v) + self.triple.stiffness.cquad_form(&u.w)).max(0.0).sqrt()
    }

    /// `GU = (B⁻¹(−Dv − Kw), v)`.
    pub fn apply(&self, u: &HVector) -> HVector {
        let dv = self.triple.damping.mul_cvec(&u.v);
        let kw = self.triple.stiffness.mul_cvec(&u.w);
        let rhs: Vec<c64> = dv.iter().zip(&kw).map(|(a, b)| -(a + b)).collect();
        HVector { v: self.mass_chol.solve_complex(&rhs), w: u.v.clone() }
    }

    /// `v*Dv`, which equals `−Re⟨GU, U⟩_H`.
    pub fn dissipation(&self, u: &HVector) -> f64 {
        self.triple.damping.cquad_form(&u.v)
    }

    fn dense_form(&self) -> Result<&DenseForm, SpectralError> {
        let form = self.dense.get_or_init(|| {
            let lb = cholesky_lower(&self.triple.mass.to_dense()).map_err(|e| e.to_string())?;
            let lk = cholesky_lower(&self.triple.stiffness.to_dense()).map_err(|e| e.to_string())?;
            let n = self.ndof();
            let half = lower_solve(&lb, &self.triple.damping.to_dense());
            let mut dt = lower_solve(&lb, &half.transpose().to_owned());
            symmetrize(&mut dt);
            let s = lower_solve(&lb, &lk);
            let companion = Mat::<f64>::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
                (true, true) => -dt[(i, j)],
                (true, false) => -s[(i, j - n)],
                (false, true) => s[(j, i - n)],
                (false, false) => 0.0,
            });
            Ok(DenseForm { lb, lk, companion })
        });
        form.as_ref().map_err(|e| SpectralError::Linalg(LinalgError::Factorization(e.clone())))
    }

    /// Dense matrix of G in Cholesky coordinates; its Euclidean operator norm
    /// is the H operator norm.
    pub fn companion(&self) -> Result<&Mat<f64>, SpectralError> {
        Ok(&self.dense_form()?.companion)
    }

    /// Cholesky coordinates `y = (L_Bᵀ v, L_Kᵀ w)` of a real state.
    pub fn to_coordinates(&self, v: &[f64], w: &[f64]) -> Result<Vec<f64>, SpectralError> {
        let form = self.dense_form()?;
        let n = self.ndof();
        let mut y = vec![0.0; 2 * n];
        for j in 0..n {
            for i in j..n {
                y[j] += form.lb[(i, j)] * v[i];
                y[n + j] += form.lk[(i, j)] * w[i];
            }
        }
        Ok(y)
    }
}

/// An eigenpair ζ of G with eigenvector `(f, g)`, `f = ζ g`.
#[derive(Clone, Debug)]
pub struct EigenPair {
    pub zeta: c64,
    pub f: Vec<c64>,
    pub g: Vec<c64>,
    /// `‖ζ²Bg + ζDg + Kg‖ / (‖g‖ (|ζ|²‖B‖ + |ζ|‖D‖ + ‖K‖))`.
    pub residual: f64,
    /// `‖GU − ζU‖_H` for the H-normalized eigenvector.
    pub h_residual: f64,
    pub h_norm: f64,
    /// `f*Df`.
    pub damping_form: f64,
    /// Isolated from every other computed eigenvalue.
    pub simple: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpectrumTarget {
    /// Eigenvalues with the smallest |Re ζ| first.
    ImaginaryAxis,
    /// Eigenvalues nearest a complex shift first.
    Shift(c64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpectrumOptions {
    /// Bound on the normalized pencil residual.
    pub tolerance: f64,
    /// Above this many dofs the shift-invert Arnoldi path is used.
    pub dense_limit: usize,
    /// Relative separation below which eigenvalues count as coincident.
    pub cluster_tol: f64,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, dense_limit: DENSE_LIMIT, cluster_tol: 1e-6 }
    }
}

#[derive(Clone, Debug)]
pub struct Spectrum {
    pub pairs: Vec<EigenPair>,
    /// `"dense-companion"` or `"shift-invert-arnoldi"`.
    pub method: &'static str,
    /// Largest |ζ| among the computed pairs.
    pub spectral_radius: f64,
    pub tolerance: f64,
    /// True when every eigenvalue of the discrete generator is present.
    pub complete: bool,
}

/// One CSV/JSON row of a spectrum.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumRow {
    pub re: f64,
    pub im: f64,
    pub residual: f64,
    pub h_residual: f64,
    pub damping_form: f64,
    pub h_norm: f64,
    pub simple: bool,
}

impl Spectrum {
    pub fn rows(&self) -> Vec<SpectrumRow> {
        self.pairs
            .iter()
            .map(|p| SpectrumRow {
                re: p.zeta.re,
                im: p.zeta.im,
                residual: p.residual,
                h_residual: p.h_residual,
                damping_form: p.damping_form,
                h_norm: p.h_norm,
                simple: p.simple,
            })
            .collect()
    }

    /// `max Re ζ`.
    pub fn abscissa(&self) -> f64 {
        self.pairs.iter().map(|p| p.zeta.re).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "re,im,residual,h_residual,damping_form,h_norm,simple")?;
        for r in self.rows() {
            writeln!(
                out,
                "{:e},{:e},{:e},{:e},{:e},{:e},{}",
                r.re, r.im, r.residual, r.h_residual, r.damping_form, r.h_norm, r.simple
            )?;
        }
        Ok(())
    }
}

/// The `count` eigenpairs of G closest to `target`, H-normalized.
pub fn compute_spectrum(
    gen: &Generator,
    count: usize,
    target: SpectrumTarget,
    opts: &SpectrumOptions,
) -> Result<Spectrum, SpectralError> {
    let n = gen.ndof();
    if count > 2 * n {
        return Err(SpectralError::InvalidCount { count, max: 2 * n });
    }
    let mut spectrum =
        if n <= opts.dense_limit { dense_spectrum(gen, opts)? } else { arnoldi_spectrum(gen, count, target, opts)? };
    order_pairs(&mut spectrum.pairs, target);
    spectrum.pairs.truncate(count);
    if let Some(bad) = spectrum.pairs.iter().find(|p| !(p.residual <= opts.tolerance)) {
        return Err(SpectralError::ResidualExceeded {
            zeta: bad.zeta,
            residual: bad.residual,
            tolerance: opts.tolerance,
        });
    }
    Ok(spectrum)
}

fn order_pairs(pairs: &mut [EigenPair], target: SpectrumTarget) {
    let key = |z: c64| match target {
        SpectrumTarget::ImaginaryAxis => z.re.abs(),
        SpectrumTarget::Shift(s) => (z - s).norm(),
    };
    pairs.sort_by(|a, b| {
        key(a.zeta)
            .total_cmp(&key(b.zeta))
            .then(a.zeta.im.abs().total_cmp(&b.zeta.im.abs()))
            .then(b.zeta.im.total_cmp(&a.zeta.im))
            .then(a.zeta.re.total_cmp(&b.zeta.re))
    });
}

/// Complex `L⁻ᵀ y` for a real lower-triangular L, column by column.
fn lower_transpose_solve_complex(l: &Mat<f64>, y: &Mat<c64>) -> Mat<c64> {
    let (n, m) = (y.nrows(), y.ncols());
    let re = Mat::<f64>::from_fn(n, m, |i, j| y[(i, j)].re);
    let im = Mat::<f64>::from_fn(n, m, |i, j| y[(i, j)].im);
    let re = lower_transpose_solve(l, &re);
    let im = lower_transpose_solve(l, &im);
    Mat::<c64>::from_fn(n, m, |i, j| c64::new(re[(i, j)], im[(i, j)]))
}

fn dense_spectrum(gen: &Generator, opts: &SpectrumOptions) -> Result<Spectrum, SpectralError> {
    let form = gen.dense_form()?;
    let n = gen.ndof();
    let c = &form.companion;
    let evd = c.eigen().map_err(|_| LinalgError::EigenNoConvergence)?;
    let (values, vectors) = (evd.S(), evd.U());
    let m = 2 * n;
    let mut y = Mat::<c64>::from_fn(m, m, |i, j| vectors[(i, j)]);
    for j in 0..m {
        let norm = (0..m).map(|i| y[(i, j)].norm_sqr()).sum::<f64>().sqrt();
        for i in 0..m {
            y[(i, j)] /= norm;
        }
    }
    let y1 = Mat::<c64>::from_fn(n, m, |i, j| y[(i, j)]);
    let y2 = Mat::<c64>::from_fn(n, m, |i, j| y[(n + i, j)]);
    let f = lower_transpose_solve_complex(&form.lb, &y1);
    let g = lower_transpose_solve_complex(&form.lk, &y2);
    // ‖Cy − ζy‖ via a complex product
    let cc = Mat::<c64>::from_fn(m, m, |i, j| c64::new(c[(i, j)], 0.0));
    let cy = &cc * &y;
    let zetas: Vec<c64> = (0..m).map(|j| values[j]).collect();
    let rho = zetas.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let norms = Norms::of(gen.triple());
    let pairs = (0..m)
        .map(|j| {
            let zeta = zetas[j];
            let fj: Vec<c64> = (0..n).map(|i| f[(i, j)]).collect();
            let gj: Vec<c64> = (0..n).map(|i| g[(i, j)]).collect();
            let h_residual = (0..m).map(|i| (cy[(i, j)] - zeta * y[(i, j)]).norm_sqr()).sum::<f64>().sqrt();
            let simple = zetas
                .iter()
                .enumerate()
                .all(|(k, z)| k == j || (z - zeta).norm() > opts.cluster_tol * rho.max(f64::MIN_POSITIVE));
            finish_pair(gen, &norms, zeta, fj, gj, h_residual, simple)
        })
        .collect();
    Ok(Spectrum { pairs, method: "dense-companion", spectral_radius: rho, tolerance: opts.tolerance, complete: true })
}

struct Norms {
    b: f64,
    d: f64,
    k: f64,
}

impl Norms {
    fn of(t: &OperatorTriple) -> Self {
        Self { b: t.mass.norm1(), d: t.damping.norm1(), k: t.stiffness.norm1() }
    }
}

fn pencil_residual(t: &OperatorTriple, norms: &Norms, zeta: c64, g: &[c64]) -> f64 {
    let bg = t.mass.mul_cvec(g);
    let dg = t.damping.mul_cvec(g);
    let kg = t.stiffness.mul_cvec(g);
    let r: Vec<c64> = (0..g.len()).map(|i| zeta * zeta * bg[i] + zeta * dg[i] + kg[i]).collect();
    let scale = cnorm2(g) * (zeta.norm_sqr() * norms.b + zeta.norm() * norms.d + norms.k);
    if scale == 0.0 {
        0.0
    } else {
        cnorm2(&r) / scale
    }
}

fn finish_pair(
    gen: &Generator,
    norms: &Norms,
    zeta: c64,
    f: Vec<c64>,
    g: Vec<c64>,
    h_residual: f64,
    simple: bool,
) -> EigenPair {
    let t = gen.triple();
    let u = HVector { v: f, w: g };
    let h_norm = gen.h_norm(&u);
    let residual = pencil_residual(t, norms, zeta, &u.w);
    let damping_form = t.damping.cquad_form(&u.v);
    EigenPair { zeta, f: u.v, g: u.w, residual, h_residual, h_norm, damping_form, simple }
}

/// Shift-invert Arnoldi on `(σ − G)⁻¹` in the H inner product. The shift is
/// the origin for the imaginary-axis target.
fn arnoldi_spectrum(
    gen: &Generator,
    count: usize,
    target: SpectrumTarget,
    opts: &SpectrumOptions,
) -> Result<Spectrum, SpectralError> {
    let n = gen.ndof();
    let sigma = match target {
        SpectrumTarget::ImaginaryAxis => c64::new(0.0, 0.0),
        SpectrumTarget::Shift(s) => s,
    };
    let solver = SchurSolver::new(gen, sigma)?;
    let norms = Norms::of(gen.triple());
    let mut m = (2 * count + 20).min(2 * n);
    loop {
        let pairs = arnoldi_pass(gen, &solver, sigma, count, m, &norms, opts)?;
        if pairs.iter().all(|p| p.residual <= opts.tolerance) || m == 2 * n {
            let rho = pairs.iter().map(|p| p.zeta.norm()).fold(0.0, f64::max);
            return Ok(Spectrum {
                pairs,
                method: "shift-invert-arnoldi",
                spectral_radius: rho,
                tolerance: opts.tolerance,
                complete: count == 2 * n,
            });
        }
        m = (2 * m).min(2 * n);
    }
}

fn arnoldi_pass(
    gen: &Generator,
    solver: &SchurSolver,
    sigma: c64,
    count: usize,
    m: usize,
    norms: &Norms,
    opts: &SpectrumOptions,
) -> Result<Vec<EigenPair>, SpectralError> {
    let n = gen.ndof();
    let start = HVector::from_real(
        &(0..n).map(|i| 1.0 + (i as f64 * 0.754_877_666).sin()).collect::<Vec<_>>(),
        &(0..n).map(|i| 1.0 + (i as f64 * 0.569_840_291).cos()).collect::<Vec<_>>(),
    );
    let mut basis = vec![start.scale(c64::new(1.0 / gen.h_norm(&start), 0.0))];
    let mut h = Mat::<c64>::zeros(m, m);
    let mut size = m;
    for j in 0..m {
        let mut x = solver.solve(&basis[j]);
        for _ in 0..2 {
            for (i, q) in basis.iter().enumerate() {
                let c = gen.h_inner(&x, q);
                h[(i, j)] += c;
                x = x.axpy(-c, q);
            }
        }
        if j + 1 == m {
            break;
        }
        let beta = gen.h_norm(&x);
        if beta <= 1e-13 * h[(j, j)].norm().max(f64::MIN_POSITIVE) {
            size = j + 1;
            break;
        }
        h[(j + 1, j)] = c64::new(beta, 0.0);
        basis.push(x.scale(c64::new(1.0 / beta, 0.0)));
    }
    let hs = Mat::<c64>::from_fn(size, size, |i, j| h[(i, j)]);
    let evd = hs.eigen().map_err(|_| LinalgError::EigenNoConvergence)?;
    let (theta, s) = (evd.S(), evd.U());
    let mut order: Vec<usize> = (0..size).collect();
    order.sort_by(|&a, &b| theta[b].norm().total_cmp(&theta[a].norm()));
    let zetas: Vec<c64> = order.iter().map(|&k| sigma - c64::new(1.0, 0.0) / theta[k]).collect();
    let rho = zetas.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut pairs = Vec::with_capacity(count);
    for (pos, &k) in order.iter().take(count).enumerate() {
        let mut x = HVector::zeros(n);
        for (i, q) in basis.iter().take(size).enumerate() {
            x = x.axpy(s[(i, k)], q);
        }
        let x = x.scale(c64::new(1.0 / gen.h_norm(&x), 0.0));
        let zeta = zetas[pos];
        let gx = gen.apply(&x);
        let h_residual = gen.h_norm(&gx.axpy(-zeta, &x));
        let simple = zetas
            .iter()
            .enumerate()
            .all(|(q, z)| q == pos || (z - zeta).norm() > opts.cluster_tol * rho.max(f64::MIN_POSITIVE));
        pairs.push(finish_pair(gen, norms, zeta, x.v, x.w, h_residual, simple));
    }
    Ok(pairs)
}

/// Per-pair defect of the identity `Re ζ = −f*Df`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityDefect {
    pub re: f64,
    pub im: f64,
    pub defect: f64,
    /// `10 · max(residual, h_residual)` plus a roundoff floor.
    pub bound: f64,
}

/// Checks `Re ζ + f*Df = 0` on every simple, H-normalized pair.
///
/// For a unit eigenvector `Re ζ = Re⟨GU, U⟩_H + Re⟨ζU − GU, U⟩_H`, so the
/// defect is at most the H residual. The bound adds a floor of
/// `10³ ε (1 + |ζ|)` for the rounding in forming f*Df itself.
pub fn realpart_identity_check(spectrum: &Spectrum) -> Result<Vec<IdentityDefect>, SpectralError> {
    let mut out = Vec::new();
    for p in spectrum.pairs.iter().filter(|p| p.simple) {
        if (p.h_norm - 1.0).abs() > 1e-8 {
            return Err(SpectralError::NotNormalized { zeta: p.zeta, h_norm: p.h_norm });
        }
        let defect = (p.zeta.re + p.damping_form).abs();
        let bound = 10.0 * p.residual.max(p.h_residual) + 1e3 * f64::EPSILON * (1.0 + p.zeta.norm());
        out.push(IdentityDefect { re: p.zeta.re, im: p.zeta.im, defect, bound });
    }
    Ok(out)
}

/// A purely imaginary eigenvalue `iλ` with H-normalized eigenvector `(v, w)`.
#[derive(Clone, Debug)]
pub struct ImaginaryMode {
    pub lambda: f64,
    pub zeta: c64,
    pub v: Vec<c64>,
    pub w: Vec<c64>,
    pub damping_form: f64,
}

/// All eigenpairs with `|Re ζ| ≤ tol·ρ` (ρ the spectral radius), each
/// cross-checked against (a) `v*Dv ≤ tol·ρ`, (b) `‖Kw − λ²Bw‖ ≤ tol‖Kw‖`
/// and (c) `‖v − iλw‖ ≤ tol‖v‖`.
pub fn imaginary_modes(gen: &Generator, tol: f64) -> Result<Vec<ImaginaryMode>, SpectralError> {
    let opts = SpectrumOptions::default();
    let spectrum = compute_spectrum(gen, 2 * gen.ndof(), SpectrumTarget::ImaginaryAxis, &opts)?;
    imaginary_modes_of(gen, &spectrum, tol)
}

/// As [`imaginary_modes`] on an already computed (complete) spectrum.
pub fn imaginary_modes_of(gen: &Generator, spectrum: &Spectrum, tol: f64) -> Result<Vec<ImaginaryMode>, SpectralError> {
    let t = gen.triple();
    let rho = spectrum.spectral_radius;
    let mut out = Vec::new();
    for p in &spectrum.pairs {
        let zeta = p.zeta;
        if zeta.re.abs() > tol * rho {
            continue;
        }
        let lambda = zeta.im;
        if p.damping_form > tol * rho {
            return Err(SpectralError::ImaginaryModeViolation {
                check: "v*Dv = 0",
                zeta,
                value: p.damping_form,
                bound: tol * rho,
            });
        }
        let kw = t.stiffness.mul_cvec(&p.g);
        let bw = t.mass.mul_cvec(&p.g);
        let helm: Vec<c64> = kw.iter().zip(&bw).map(|(a, b)| a - lambda * lambda * b).collect();
        let (hv, hk) = (cnorm2(&helm), cnorm2(&kw));
        if hv > tol * hk {
            return Err(SpectralError::ImaginaryModeViolation {
                check: "Kw = λ²Bw", zeta, value: hv, bound: tol * hk
            });
        }
        let il = c64::new(0.0, lambda);
        let diff: Vec<c64> = p.f.iter().zip(&p.g).map(|(v, w)| v - il * w).collect();
        let (dv, nv) = (cnorm2(&diff), cnorm2(&p.f));
        if dv > tol * nv {
            return Err(SpectralError::ImaginaryModeViolation { check: "v = iλw", zeta, value: dv, bound: tol * nv });
        }
        out.push(ImaginaryMode { lambda, zeta, v: p.f.clone(), w: p.g.clone(), damping_form: p.damping_form });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeOverlap {
    pub index: usize,
    pub lambda: f64,
    /// Smallest eigenvalue of Ψᵀ D Ψ over the mode's cluster.
    pub overlap: f64,
    /// `ψᵀ D ψ` for this mode alone.
    pub diagonal: f64,
    pub cluster: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilizationReport {
    pub decays: bool,
    /// Overlaps at or below this count as zero.
    pub threshold: f64,
    pub cluster_count: usize,
    pub per_mode: Vec<ModeOverlap>,
}

impl StabilizationReport {
    /// First mode whose cluster has zero overlap.
    pub fn first_zero_mode(&self) -> Option<&ModeOverlap> {
        self.per_mode.iter().find(|m| m.overlap <= self.threshold)
    }

    /// Largest Dirichlet eigenvalue covered.
    pub fn lambda_max(&self) -> f64 {
        self.per_mode.last().map_or(0.0, |m| m.lambda)
    }
}

/// Groups the first `mode_count` Dirichlet eigenpairs into clusters of
/// relative spacing below `cluster_tol` and tests every cluster for a
/// nonzero projected damping form.
pub fn stabilization_predicate(
    gen: &Generator,
    mode_count: usize,
    cluster_tol: f64,
) -> Result<StabilizationReport, SpectralError> {
    let t = gen.triple();
    let modes = dirichlet_eigs(t, mode_count)?;
    let threshold = 1e-10 * t.damping.norm1();
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for k in 0..modes.len() {
        match clusters.last_mut() {
            Some(c) if modes[k].lambda - modes[k - 1].lambda <= cluster_tol * modes[k].lambda => c.push(k),
            _ => clusters.push(vec![k]),
        }
    }
    let mut per_mode = Vec::with_capacity(modes.len());
    let mut decays = true;
    for (ci, members) in clusters.iter().enumerate() {
        let dpsi: Vec<Vec<f64>> = members.iter().map(|&k| t.damping.mul_vec(&modes[k].psi)).collect();
        let m = members.len();
        let mut gram = Mat::<f64>::from_fn(m, m, |a, b| crate::linalg::dot(&modes[members[a]].psi, &dpsi[b]));
        symmetrize(&mut gram);
        let overlap = if m == 1 {
            gram[(0, 0)]
        } else {
            gram.self_adjoint_eigen(faer::Side::Lower).map_err(|_| LinalgError::EigenNoConvergence)?.S()[0]
        };
        if overlap <= threshold {
            decays = false;
        }
        for (a, &k) in members.iter().enumerate() {
            per_mode.push(ModeOverlap {
                index: k + 1,
                lambda: modes[k].lambda,
                overlap,
                diagonal: gram[(a, a)],
                cluster: ci,
            });
        }
    }
    Ok(StabilizationReport { decays, threshold, cluster_count: clusters.len(), per_mode })
}

enum SchurFactor {
    Real(SparseCholesky),
    Complex(SparseComplexLu),
}

/// Factorization of `S(z) = z²B + zD + K` for repeated resolvent solves.
pub struct SchurSolver<'g> {
    gen: &'g Generator,
    z: c64,
    factor: SchurFactor,
}

impl<'g> SchurSolver<'g> {
    /// Factors S(z): Cholesky when z is real and nonnegative (S is then SPD),
    /// sparse LU otherwise. Fails with `SingularShift` when S(z) is
    /// numerically singular.
    pub fn new(gen: &'g Generator, z: c64) -> Result<Self, SpectralError> {
        let t = gen.triple();
        let factor = if z.im == 0.0 && z.re >= 0.0 {
            let s = t.stiffness.combine(1.0, &t.mass, z.re * z.re).combine(1.0, &t.damping, z.re);
            match SparseCholesky::new(&s) {
                Ok(c) => SchurFactor::Real(c),
                Err(_) => return Err(SpectralError::SingularShift { z }),
            }
        } else {
            let one = c64::new(1.0, 0.0);
            let lu = SparseComplexLu::new(&[(z * z, &t.mass), (z, &t.damping), (one, &t.stiffness)])
                .map_err(|_| SpectralError::SingularShift { z })?;
            SchurFactor::Complex(lu)
        };
        let solver = Self { gen, z, factor };
        if let SchurFactor::Complex(_) = solver.factor {
            solver.check_conditioning()?;
        }
        Ok(solver)
    }

    pub fn shift(&self) -> c64 {
        self.z
    }

    fn schur_solve(&self, rhs: &[c64]) -> Vec<c64> {
        match &self.factor {
            SchurFactor::Real(c) => c.solve_complex(rhs),
            SchurFactor::Complex(lu) => lu.solve(rhs),
        }
    }

    fn schur_apply(&self, x: &[c64]) -> Vec<c64> {
        let t = self.gen.triple();
        let (bx, dx, kx) = (t.mass.mul_cvec(x), t.damping.mul_cvec(x), t.stiffness.mul_cvec(x));
        let z = self.z;
        (0..x.len()).map(|i| z * z * bx[i] + z * dx[i] + kx[i]).collect()
    }

    /// Inverse iteration estimate of `σ_min(S)`, compared with `‖S‖₁`.
    fn check_conditioning(&self) -> Result<(), SpectralError> {
        let t = self.gen.triple();
        let n = t.ndof;
        let z = self.z;
        let s_norm = z.norm_sqr() * t.mass.norm1() + z.norm() * t.damping.norm1() + t.stiffness.norm1();
        let mut x: Vec<c64> =
            (0..n).map(|i| c64::new(1.0 + (i as f64 * 0.37).sin(), (i as f64 * 0.91).cos())).collect();
        let mut sigma_min = f64::INFINITY;
        for _ in 0..6 {
            let nx = cnorm2(&x);
            x.iter_mut().for_each(|a| *a /= nx);
            let y = self.schur_solve(&x);
            let ny = cnorm2(&y);
            if !ny.is_finite() {
                return Err(SpectralError::SingularShift { z });
            }
            sigma_min = sigma_min.min(1.0 / ny);
            x = y;
        }
        // one residual check guards against a silently inaccurate factorization
        let nx = cnorm2(&x);
        x.iter_mut().for_each(|a| *a /= nx);
        let y = self.schur_solve(&x);
        let back = self.schur_apply(&y);
        let err = cnorm2(&back.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
        if sigma_min <= 1e-10 * s_norm || !(err <= 1e-6) {
            return Err(SpectralError::SingularShift { z });
        }
        Ok(())
    }

    /// Solves `(z − G)U = F` through `(z²B + zD + K)w = Bf + zBg + Dg`,
    /// `v = zw − g`.
    pub fn solve(&self, rhs: &HVector) -> HVector {
        let t = self.gen.triple();
        let z = self.z;
        let bf = t.mass.mul_cvec(&rhs.v);
        let bg = t.mass.mul_cvec(&rhs.w);
        let dg = t.damping.mul_cvec(&rhs.w);
        let b: Vec<c64> = (0..bf.len()).map(|i| bf[i] + z * bg[i] + dg[i]).collect();
        let w = self.schur_solve(&b);
        let v = w.iter().zip(&rhs.w).map(|(wi, gi)| z * wi - gi).collect();
        HVector { v, w }
    }

    /// Real solve for a real nonnegative shift.
    pub fn solve_real(&self, f: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let t = self.gen.triple();
        let z = self.z.re;
        let bf = t.mass.mul_vec(f);
        let bg = t.mass.mul_vec(g);
        let dg = t.damping.mul_vec(g);
        let b: Vec<f64> = (0..f.len()).map(|i| bf[i] + z * bg[i] + dg[i]).collect();
        let w = self.schur_solve_real(&b);
        let v = w.iter().zip(g).map(|(wi, gi)| z * wi - gi).collect();
        (v, w)
    }

    /// `S(z)⁻¹ b` for a real right-hand side and a real nonnegative shift.
    pub fn schur_solve_real(&self, b: &[f64]) -> Vec<f64> {
        match &self.factor {
            SchurFactor::Real(c) => c.solve(b),
            SchurFactor::Complex(lu) => lu.solve(&crate::linalg::to_complex(b)).iter().map(|x| x.re).collect(),
        }
    }

    /// `‖(z − G)^{-1}‖_H` by power iteration on `R*R`, using the H-adjoint
    /// `R* = J conj(R conj(J ·))` that holds for real matrices.
    pub fn resolvent_norm(&self, iterations: usize) -> f64 {
        let n = self.gen.ndof();
        let mut x = HVector::from_real(
            &(0..n).map(|i| (i as f64 * 0.71).sin() + 0.3).collect::<Vec<_>>(),
            &(0..n).map(|i| (i as f64 * 1.37).cos() - 0.2).collect::<Vec<_>>(),
        );
        let mut estimate = 0.0;
        for _ in 0..iterations {
            let nx = self.gen.h_norm(&x);
            x = x.scale(c64::new(1.0 / nx, 0.0));
            let y = self.solve(&x);
            let next = self.gen.h_norm(&y);
            x = self.solve(&y.flip().conj()).conj().flip();
            let converged = (next - estimate).abs() <= 1e-6 * next;
            estimate = next;
            if converged {
                break;
            }
        }
        estimate
    }
}

/// Solves `(z − G)U = F`.
pub fn resolvent_apply(gen: &Generator, z: c64, rhs: &HVector) -> Result<HVector, SpectralError> {
    Ok(SchurSolver::new(gen, z)?.solve(rhs))
}

/// `‖(z − G)U − F‖_H`.
pub fn resolvent_residual(gen: &Generator, z: c64, u: &HVector, rhs: &HVector) -> f64 {
    let gu = gen.apply(u);
    let r = u.scale(z).axpy(c64::new(-1.0, 0.0), &gu).axpy(c64::new(-1.0, 0.0), rhs);
    gen.h_norm(&r)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapReport {
    pub has_gap: bool,
    /// `max Re ζ` over the spectrum.
    pub abscissa: f64,
    pub strip_width: f64,
    /// Largest resolvent norm found on the strip grid; `None` when a grid
    /// point is numerically an eigenvalue.
    pub sup_resolvent: Option<f64>,
    /// Grid point realizing the sup, as `[re, im]`.
    pub argmax: Option<[f64; 2]>,
    pub grid_points: usize,
}

/// Spectral abscissa and the resolvent norm sampled on the strip
/// `−A ≤ Re z ≤ 0`: three vertical lines (`Re z = −A, −A/2, 0`), each at the
/// imaginary parts of the computed eigenvalues and at `strip_grid` uniform
/// heights spanning the spectrum.
pub fn gap_report(gen: &Generator, spectrum: &Spectrum, strip_width: f64, strip_grid: usize) -> GapReport {
    let abscissa = spectrum.abscissa();
    let rho = spectrum.pairs.iter().map(|p| p.zeta.im.abs()).fold(0.0, f64::max) + 1.0;
    let mut heights: Vec<f64> = spectrum.pairs.iter().map(|p| p.zeta.im).collect();
    if strip_grid > 1 {
        heights.extend((0..strip_grid).map(|k| -rho + 2.0 * rho * k as f64 / (strip_grid - 1) as f64));
    } else if strip_grid == 1 {
        heights.push(0.0);
    }
    // the resolvent norm is symmetric under conjugation for real matrices
    let mut heights: Vec<f64> = heights.into_iter().map(f64::abs).collect();
    heights.sort_by(f64::total_cmp);
    heights.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * rho);
    let mut sup: Option<f64> = Some(0.0);
    let mut argmax = None;
    let mut count = 0;
    'grid: for re in [-strip_width, -0.5 * strip_width, 0.0] {
        for &im in &heights {
            count += 1;
            let z = c64::new(re, im);
            match SchurSolver::new(gen, z) {
                Ok(solver) => {
                    let r = solver.resolvent_norm(60);
                    if sup.is_some_and(|s| r > s) {
                        sup = Some(r);
                        argmax = Some([re, im]);
                    }
                }
                Err(_) => {
                    sup = None;
                    argmax = Some([re, im]);
                    break 'grid;
                }
            }
        }
    }
    GapReport {
        has_gap: abscissa <= -strip_width,
        abscissa,
        strip_width,
        sup_resolvent: sup,
        argmax,
        grid_points: count,
    }
}
