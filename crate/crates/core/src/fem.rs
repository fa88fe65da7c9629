//! Structured P1 meshes on intervals and rectangles, and assembly of the mass,
//! Dirichlet stiffness and measure-damping matrices on interior dofs.
//!
//! Rectangles use a union-jack triangulation: the cell diagonal alternates
//! with the parity of `i + j`, so the mesh is symmetric under reflection in
//! either midline.

use std::io::Write;
use std::path::{Path, PathBuf};

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::linalg::{
    cholesky_lower, dense_gen_sym_eigen, lanczos_smallest, symmetrize, LinalgError, SparseCholesky, SymAccumulator,
    SymMatrix,
};
use crate::measure::AtomSet;

/// Matrices larger than this are handled by sparse iterative solvers.
pub const DENSE_LIMIT: usize = 2000;

/// Local coordinates this close to a cell face are snapped onto it, so atoms
/// placed at nodes give exact unit basis values.
const SNAP: f64 = 1e-10;

#[derive(Debug, thiserror::Error)]
pub enum FemError {
    #[error("degenerate domain: upper bound must exceed lower bound")]
    DegenerateDomain,
    #[error("mesh with {0} subdivisions has no interior dofs")]
    NoInteriorDofs(usize),
    #[error("atom at {point:?} lies outside the domain")]
    AtomOutsideDomain { point: Vec<f64> },
    #[error("atoms live in dimension {atoms}, mesh in dimension {mesh}")]
    DimensionMismatch { mesh: usize, atoms: usize },
    #[error("requested {count} eigenpairs from a system with {ndof} dofs")]
    InvalidCount { count: usize, ndof: usize },
    #[error("solver failure: {0}")]
    SolverFailure(#[from] LinalgError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Domain {
    Interval { a: f64, b: f64 },
    Rectangle { ax: f64, bx: f64, ay: f64, by: f64 },
}

impl Domain {
    pub fn unit_square() -> Self {
        Domain::Rectangle { ax: 0.0, bx: 1.0, ay: 0.0, by: 1.0 }
    }

    pub fn dimension(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Rectangle { .. } => 2,
        }
    }

    fn diameter(&self) -> f64 {
        match *self {
            Domain::Interval { a, b } => b - a,
            Domain::Rectangle { ax, bx, ay, by } => (bx - ax).hypot(by - ay),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Element {
    Segment([usize; 2]),
    Triangle([usize; 3]),
}

impl Element {
    pub fn vertices(&self) -> &[usize] {
        match self {
            Element::Segment(v) => v,
            Element::Triangle(v) => v,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Mesh {
    domain: Domain,
    n: usize,
    /// 1D meshes store `[x, 0]`.
    vertices: Vec<[f64; 2]>,
    elements: Vec<Element>,
    boundary: Vec<bool>,
    dof_of_vertex: Vec<Option<usize>>,
    ndof: usize,
}

/// Uniform P1 mesh with `n` subdivisions per axis.
pub fn build_mesh(domain: Domain, n: usize) -> Result<Mesh, FemError> {
    match domain {
        Domain::Interval { a, b } => {
            if !(b > a) {
                return Err(FemError::DegenerateDomain);
            }
            if n < 2 {
                return Err(FemError::NoInteriorDofs(n));
            }
            let h = (b - a) / n as f64;
            let vertices = (0..=n).map(|i| [if i == n { b } else { a + i as f64 * h }, 0.0]).collect();
            let elements = (0..n).map(|i| Element::Segment([i, i + 1])).collect();
            let boundary: Vec<bool> = (0..=n).map(|i| i == 0 || i == n).collect();
            let dof_of_vertex = (0..=n).map(|i| (!boundary[i]).then(|| i - 1)).collect();
            Ok(Mesh { domain, n, vertices, elements, boundary, dof_of_vertex, ndof: n - 1 })
        }
        Domain::Rectangle { ax, bx, ay, by } => {
            if !(bx > ax && by > ay) {
                return Err(FemError::DegenerateDomain);
            }
            if n < 2 {
                return Err(FemError::NoInteriorDofs(n));
            }
            let (hx, hy) = ((bx - ax) / n as f64, (by - ay) / n as f64);
            let coord = |lo: f64, hi: f64, h: f64, i: usize| if i == n { hi } else { lo + i as f64 * h };
            let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
            let mut boundary = Vec::with_capacity((n + 1) * (n + 1));
            let mut dof_of_vertex = Vec::with_capacity((n + 1) * (n + 1));
            for j in 0..=n {
                for i in 0..=n {
                    vertices.push([coord(ax, bx, hx, i), coord(ay, by, hy, j)]);
                    let on_boundary = i == 0 || j == 0 || i == n || j == n;
                    boundary.push(on_boundary);
                    dof_of_vertex.push((!on_boundary).then(|| (j - 1) * (n - 1) + (i - 1)));
                }
            }
            let v = |i: usize, j: usize| j * (n + 1) + i;
            let mut elements = Vec::with_capacity(2 * n * n);
            for j in 0..n {
                for i in 0..n {
                    let (v00, v10, v11, v01) = (v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1));
                    if (i + j) % 2 == 0 {
                        elements.push(Element::Triangle([v00, v10, v11]));
                        elements.push(Element::Triangle([v00, v11, v01]));
                    } else {
                        elements.push(Element::Triangle([v00, v10, v01]));
                        elements.push(Element::Triangle([v10, v11, v01]));
                    }
                }
            }
            Ok(Mesh { domain, n, vertices, elements, boundary, dof_of_vertex, ndof: (n - 1) * (n - 1) })
        }
    }
}

impl Mesh {
    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn subdivisions(&self) -> usize {
        self.n
    }

    pub fn dimension(&self) -> usize {
        self.domain.dimension()
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn dof_of_vertex(&self, vertex: usize) -> Option<usize> {
        self.dof_of_vertex[vertex]
    }

    pub fn ndof(&self) -> usize {
        self.ndof
    }

    /// Coordinates of each interior dof, in dof order.
    pub fn dof_coordinates(&self) -> Vec<[f64; 2]> {
        let mut out = vec![[0.0; 2]; self.ndof];
        for (v, d) in self.dof_of_vertex.iter().enumerate() {
            if let Some(d) = d {
                out[*d] = self.vertices[v];
            }
        }
        out
    }

    /// Signed measure (length or area) of an element.
    pub fn element_measure(&self, e: &Element) -> f64 {
        match *e {
            Element::Segment([i, j]) => self.vertices[j][0] - self.vertices[i][0],
            Element::Triangle([i, j, k]) => {
                let (p, q, r) = (self.vertices[i], self.vertices[j], self.vertices[k]);
                0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
            }
        }
    }

    /// Nonzero P1 basis values at a point of the closed domain, as
    /// `(vertex, value)` pairs. Returns `None` outside the domain.
    pub fn basis_at(&self, p: &[f64]) -> Option<Vec<(usize, f64)>> {
        let tol = 1e-12 * self.domain.diameter();
        let n = self.n;
        let locate = |x: f64, lo: f64, hi: f64| -> Option<(usize, f64)> {
            if x < lo - tol || x > hi + tol {
                return None;
            }
            let s = ((x - lo) / (hi - lo) * n as f64).clamp(0.0, n as f64);
            let mut cell = (s.floor() as usize).min(n - 1);
            let mut xi = s - cell as f64;
            if xi > 1.0 - SNAP {
                if cell + 1 < n {
                    cell += 1;
                    xi = 0.0;
                } else {
                    xi = 1.0;
                }
            } else if xi < SNAP {
                xi = 0.0;
            }
            Some((cell, xi))
        };
        let mut out = match self.domain {
            Domain::Interval { a, b } => {
                let (i, xi) = locate(p[0], a, b)?;
                vec![(i, 1.0 - xi), (i + 1, xi)]
            }
            Domain::Rectangle { ax, bx, ay, by } => {
                let (i, xi) = locate(p[0], ax, bx)?;
                let (j, eta) = locate(p[1], ay, by)?;
                let v = |a: usize, b: usize| (j + b) * (n + 1) + (i + a);
                let (v00, v10, v11, v01) = (v(0, 0), v(1, 0), v(1, 1), v(0, 1));
                if (i + j) % 2 == 0 {
                    if xi >= eta {
                        vec![(v00, 1.0 - xi), (v10, xi - eta), (v11, eta)]
                    } else {
                        vec![(v00, 1.0 - eta), (v11, xi), (v01, eta - xi)]
                    }
                } else if xi + eta <= 1.0 {
                    vec![(v00, 1.0 - xi - eta), (v10, xi), (v01, eta)]
                } else {
                    vec![(v10, 1.0 - eta), (v11, xi + eta - 1.0), (v01, 1.0 - xi)]
                }
            }
        };
        out.retain(|&(_, phi)| phi != 0.0);
        Some(out)
    }

    /// Interior basis values at a point: `(dof, value)` pairs.
    pub fn dof_basis_at(&self, p: &[f64]) -> Option<Vec<(usize, f64)>> {
        let all = self.basis_at(p)?;
        Some(all.into_iter().filter_map(|(v, phi)| self.dof_of_vertex[v].map(|d| (d, phi))).collect())
    }

    /// Value at `p` of the P1 interpolant with interior coefficients `coeffs`
    /// (zero on the boundary).
    pub fn evaluate(&self, coeffs: &[f64], p: &[f64]) -> Option<f64> {
        Some(self.dof_basis_at(p)?.into_iter().map(|(d, phi)| coeffs[d] * phi).sum())
    }
}

/// Mass B, Dirichlet stiffness K and damping Gram D on interior dofs.
#[derive(Clone, Debug)]
pub struct OperatorTriple {
    pub mass: SymMatrix,
    pub stiffness: SymMatrix,
    pub damping: SymMatrix,
    pub ndof: usize,
}

impl OperatorTriple {
    /// Same mass and stiffness with a different damping matrix.
    pub fn with_damping(&self, damping: SymMatrix) -> Self {
        assert_eq!(damping.dim(), self.ndof);
        Self { mass: self.mass.clone(), stiffness: self.stiffness.clone(), damping, ndof: self.ndof }
    }
}

/// Assembles B and K by exact P1 element integrals and
/// `D_ij = Σ_k w_k φ_i(p_k) φ_j(p_k)` over the atoms. Atoms on the boundary
/// only touch eliminated dofs and drop out.
pub fn assemble(mesh: &Mesh, atoms: &AtomSet) -> Result<OperatorTriple, FemError> {
    if !atoms.is_empty() && atoms.dimension() != mesh.dimension() {
        return Err(FemError::DimensionMismatch { mesh: mesh.dimension(), atoms: atoms.dimension() });
    }
    let n = mesh.ndof;
    let mut mass = SymAccumulator::new(n);
    let mut stiff = SymAccumulator::new(n);
    for e in &mesh.elements {
        let (me, ke) = element_matrices(mesh, e);
        let verts = e.vertices();
        for a in 0..verts.len() {
            for b in a..verts.len() {
                if let (Some(i), Some(j)) = (mesh.dof_of_vertex[verts[a]], mesh.dof_of_vertex[verts[b]]) {
                    mass.add(i, j, me[a][b]);
                    stiff.add(i, j, ke[a][b]);
                }
            }
        }
    }
    let mut damp = SymAccumulator::new(n);
    for (p, w) in atoms.iter() {
        let local = mesh.dof_basis_at(p).ok_or_else(|| FemError::AtomOutsideDomain { point: p.to_vec() })?;
        if w == 0.0 {
            continue;
        }
        for a in 0..local.len() {
            for b in a..local.len() {
                damp.add(local[a].0, local[b].0, w * local[a].1 * local[b].1);
            }
        }
    }
    Ok(OperatorTriple { mass: mass.finish(), stiffness: stiff.finish(), damping: damp.finish(), ndof: n })
}

/// Element mass and stiffness for P1 (upper triangle is what assembly reads).
fn element_matrices(mesh: &Mesh, e: &Element) -> ([[f64; 3]; 3], [[f64; 3]; 3]) {
    let mut me = [[0.0; 3]; 3];
    let mut ke = [[0.0; 3]; 3];
    match *e {
        Element::Segment(_) => {
            let h = mesh.element_measure(e);
            me[0] = [h / 3.0, h / 6.0, 0.0];
            me[1] = [h / 6.0, h / 3.0, 0.0];
            ke[0] = [1.0 / h, -1.0 / h, 0.0];
            ke[1] = [-1.0 / h, 1.0 / h, 0.0];
        }
        Element::Triangle([i, j, k]) => {
            let (p0, p1, p2) = (mesh.vertices[i], mesh.vertices[j], mesh.vertices[k]);
            let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
            let area = 0.5 * det.abs();
            let grads = [
                [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det],
                [(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det],
                [(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det],
            ];
            for a in 0..3 {
                for b in 0..3 {
                    me[a][b] = area / 12.0 * if a == b { 2.0 } else { 1.0 };
                    ke[a][b] = area * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
                }
            }
        }
    }
    (me, ke)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirichletPair {
    /// Eigenvalue of K ψ = λ B ψ (the square of the frequency).
    pub lambda: f64,
    /// B-normalized eigenvector.
    pub psi: Vec<f64>,
}

/// The `count` smallest eigenpairs of K ψ = λ B ψ, ascending, ψᵀBψ = 1.
pub fn dirichlet_eigs(triple: &OperatorTriple, count: usize) -> Result<Vec<DirichletPair>, FemError> {
    dirichlet_eigs_with_limit(triple, count, DENSE_LIMIT)
}

/// As [`dirichlet_eigs`], switching to shift-invert Lanczos above `dense_limit`.
pub fn dirichlet_eigs_with_limit(
    triple: &OperatorTriple,
    count: usize,
    dense_limit: usize,
) -> Result<Vec<DirichletPair>, FemError> {
    let n = triple.ndof;
    if count > n {
        return Err(FemError::InvalidCount { count, ndof: n });
    }
    if n <= dense_limit {
        let (values, vectors) = dense_gen_sym_eigen(&triple.stiffness.to_dense(), &triple.mass.to_dense())?;
        Ok((0..count)
            .map(|c| DirichletPair { lambda: values[c], psi: (0..n).map(|i| vectors[(i, c)]).collect() })
            .collect())
    } else {
        let chol = SparseCholesky::new(&triple.stiffness)?;
        let (values, vectors) = lanczos_smallest(&triple.stiffness, &triple.mass, &chol, count, 1e-10)?;
        Ok(values.into_iter().zip(vectors).map(|(lambda, psi)| DirichletPair { lambda, psi }).collect())
    }
}

/// Largest eigenvalue of the pencil (D, K): `max_f fᵀDf / fᵀKf`, the discrete
/// constant in `∫|f|² dμ ≤ C ‖∇f‖²`.
///
/// Only the support S of D matters: the nonzero spectrum of K⁻¹D equals that
/// of `D_SS (K⁻¹)_SS`, and the columns of K⁻¹ on S come from sparse solves.
pub fn multiplier_bound_probe(triple: &OperatorTriple) -> Result<f64, FemError> {
    let support = triple.damping.support();
    if support.is_empty() {
        return Ok(0.0);
    }
    let chol = SparseCholesky::new(&triple.stiffness)?;
    if support.len() <= DENSE_LIMIT {
        let n = triple.ndof;
        let s = support.len();
        let rhs = Mat::<f64>::from_fn(n, s, |i, c| if i == support[c] { 1.0 } else { 0.0 });
        let cols = chol.solve_mat(&rhs);
        let mut g = Mat::<f64>::from_fn(s, s, |a, c| cols[(support[a], c)]);
        symmetrize(&mut g);
        let d = triple.damping.dense_block(&support);
        // eig(D G) = eig(Lᵀ D L) with G = L Lᵀ
        let l = cholesky_lower(&g)?;
        let dl = &d * &l;
        let mut m = l.transpose() * &dl;
        symmetrize(&mut m);
        let evd = m.self_adjoint_eigen(faer::Side::Lower).map_err(|_| LinalgError::EigenNoConvergence)?;
        Ok(evd.S()[s - 1].max(0.0))
    } else {
        Ok(power_probe(triple, &chol)?)
    }
}

/// Power iteration on K⁻¹D, which is self-adjoint in the K inner product.
fn power_probe(triple: &OperatorTriple, chol: &SparseCholesky) -> Result<f64, LinalgError> {
    let n = triple.ndof;
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.618_033_988_7).sin()).collect();
    let mut last = 0.0;
    for _ in 0..2000 {
        let y = chol.solve(&triple.damping.mul_vec(&x));
        let ky = triple.stiffness.quad_form(&y);
        if ky <= 0.0 {
            return Ok(0.0);
        }
        let rayleigh = triple.damping.quad_form(&y) / ky;
        let scale = ky.sqrt();
        x = y.into_iter().map(|v| v / scale).collect();
        if (rayleigh - last).abs() <= 1e-12 * rayleigh {
            return Ok(rayleigh);
        }
        last = rayleigh;
    }
    Err(LinalgError::IterativeNoConvergence { wanted: 1, subspace: 1 })
}

/// Sidecar metadata written next to exported matrices.
#[derive(Clone, Debug, Serialize)]
pub struct ExportMetadata {
    pub ndof: usize,
    pub domain: Domain,
    pub subdivisions: usize,
    pub atom_count: usize,
    pub atom_mass: f64,
    pub nnz: [usize; 3],
    pub files: [String; 3],
}

/// Writes `<stem>_{mass,stiffness,damping}.coo` and `<stem>.json` into `dir`.
pub fn export_triple(
    triple: &OperatorTriple,
    mesh: &Mesh,
    atoms: &AtomSet,
    dir: &Path,
    stem: &str,
) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let names = ["mass", "stiffness", "damping"].map(|m| format!("{stem}_{m}.coo"));
    let mut written = Vec::new();
    for (name, mat) in names.iter().zip([&triple.mass, &triple.stiffness, &triple.damping]) {
        let path = dir.join(name);
        mat.write_coo(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
        written.push(path);
    }
    let meta = ExportMetadata {
        ndof: triple.ndof,
        domain: mesh.domain,
        subdivisions: mesh.n,
        atom_count: atoms.len(),
        atom_mass: atoms.total_mass(),
        nnz: [triple.mass.nnz(), triple.stiffness.nnz(), triple.damping.nnz()],
        files: names,
    };
    let path = dir.join(format!("{stem}.json"));
    let mut f = std::fs::File::create(&path)?;
    serde_json::to_writer_pretty(&mut f, &meta)?;
    f.write_all(b"\n")?;
    written.push(path);
    Ok(written)
}

/// Smallest eigenvalue of a dense symmetric matrix (testing aid for PSD checks).
pub fn min_eigenvalue(a: &SymMatrix) -> Result<f64, LinalgError> {
    if a.dim() == 0 {
        return Ok(0.0);
    }
    let evd = a.to_dense().self_adjoint_eigen(faer::Side::Lower).map_err(|_| LinalgError::EigenNoConvergence)?;
    Ok(evd.S()[0])
}
