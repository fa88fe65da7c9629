//! Finite positive measures and their atomic quadratures.
//!
//! A [`MeasureSpec`] is a declarative description (serialized as JSON with a
//! `"variant"` discriminator). [`make_measure`] validates it, [`atomize`] turns
//! it into an [`AtomSet`] of weighted points, and the ball-mass tools estimate
//! the growth exponent α in `μ(B_r(x)) ≤ A r^α`.

use serde::{Deserialize, Serialize};

/// Atom count above which [`atomize`] refuses to expand a measure.
pub const DEFAULT_ATOM_CAP: usize = 4_000_000;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MeasureError {
    #[error("negative weight or density {value} in {context}")]
    NegativeWeight { context: &'static str, value: f64 },
    #[error("flow field points outward on edge {edge}: inward flux {flux}")]
    OutwardFlow { edge: usize, flux: f64 },
    #[error("measure has zero total mass")]
    ZeroMass,
    #[error("cantor ratio theta = {0} is outside (0, 1)")]
    DomainError(f64),
    #[error("malformed measure: {0}")]
    Malformed(String),
    #[error("atomization needs {needed} atoms, cap is {cap}")]
    ResolutionOverflow { needed: usize, cap: usize },
    #[error("degenerate scaling fit: {0}")]
    DegenerateFit(&'static str),
    #[error("invalid radii: {0}")]
    InvalidRadii(&'static str),
    #[error("admissibility needs dimension n >= 2, got {0}")]
    InvalidDimension(usize),
}

fn unit_mass() -> f64 {
    1.0
}

/// Declarative description of a finite positive measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum MeasureSpec {
    /// Point mass `weight · δ_location`.
    Dirac { location: Vec<f64>, weight: f64 },
    /// Polyline with a constant density per segment (arclength measure `h σ_S`).
    Hypersurface { vertices: Vec<Vec<f64>>, density: Vec<f64> },
    /// Self-similar Cantor measure on K(θ) ⊂ [0,1], mapped affinely onto the
    /// embedding segment and carrying total mass `mass`.
    Cantor {
        theta: f64,
        depth: u32,
        embedding: [Vec<f64>; 2],
        #[serde(default = "unit_mass")]
        mass: f64,
    },
    /// Product measure; coordinates are concatenated left then right.
    Product { left: Box<MeasureSpec>, right: Box<MeasureSpec> },
    /// Derivative of the indicator of a planar polygon along a vector field,
    /// sampled as one vector per edge (edge k joins vertex k to k+1).
    Flow { polygon: Vec<[f64; 2]>, field: Vec<[f64; 2]> },
    /// Piecewise-constant density on a uniform cell grid over a box.
    Density { lower: Vec<f64>, upper: Vec<f64>, cells: Vec<usize>, values: Vec<f64> },
    /// Nonnegative combination of measures of equal ambient dimension.
    Sum { terms: Vec<SumTerm> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SumTerm {
    pub coeff: f64,
    pub measure: MeasureSpec,
}

impl MeasureSpec {
    pub fn dirac(location: Vec<f64>, weight: f64) -> Self {
        MeasureSpec::Dirac { location, weight }
    }

    pub fn cantor(theta: f64, depth: u32, from: Vec<f64>, to: Vec<f64>, mass: f64) -> Self {
        MeasureSpec::Cantor { theta, depth, embedding: [from, to], mass }
    }

    pub fn product(left: MeasureSpec, right: MeasureSpec) -> Self {
        MeasureSpec::Product { left: Box::new(left), right: Box::new(right) }
    }

    /// Flow measure with the field evaluated at each edge midpoint.
    pub fn flow_from_fn(polygon: Vec<[f64; 2]>, field: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        let m = polygon.len();
        let field = (0..m)
            .map(|k| {
                let (p, q) = (polygon[k], polygon[(k + 1) % m]);
                field([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])])
            })
            .collect();
        MeasureSpec::Flow { polygon, field }
    }

    /// Constant density `value` on the whole box.
    pub fn uniform_density(lower: Vec<f64>, upper: Vec<f64>, value: f64) -> Self {
        let cells = vec![1; lower.len()];
        MeasureSpec::Density { lower, upper, cells, values: vec![value] }
    }

    /// The empty (zero) measure, useful for undamped controls.
    pub fn zero(dimension: usize) -> Self {
        MeasureSpec::Sum { terms: vec![SumTerm { coeff: 0.0, measure: MeasureSpec::dirac(vec![0.0; dimension], 0.0) }] }
    }
}

/// A validated measure together with derived metadata.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Measure {
    spec: MeasureSpec,
    ambient_dimension: usize,
    support_dimension: f64,
    total_mass: f64,
}

impl Measure {
    pub fn spec(&self) -> &MeasureSpec {
        &self.spec
    }

    pub fn ambient_dimension(&self) -> usize {
        self.ambient_dimension
    }

    /// Dimension of the support: 0 for points, 1 for curves, α for Cantor
    /// sets, additive over products.
    pub fn support_dimension(&self) -> f64 {
        self.support_dimension
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// True when the measure is identically zero (allowed only for controls).
    pub fn is_zero(&self) -> bool {
        self.total_mass == 0.0
    }
}

struct Derived {
    ambient: usize,
    support: f64,
    mass: f64,
}

/// Validates a spec and computes its derived metadata.
///
/// A zero measure is rejected with [`MeasureError::ZeroMass`]; undamped
/// experiments use [`make_measure_allow_zero`].
pub fn make_measure(spec: MeasureSpec) -> Result<Measure, MeasureError> {
    let m = make_measure_allow_zero(spec)?;
    if m.total_mass == 0.0 {
        return Err(MeasureError::ZeroMass);
    }
    Ok(m)
}

/// Like [`make_measure`] but accepts the zero measure.
pub fn make_measure_allow_zero(spec: MeasureSpec) -> Result<Measure, MeasureError> {
    let d = derive(&spec)?;
    Ok(Measure { spec, ambient_dimension: d.ambient, support_dimension: d.support, total_mass: d.mass })
}

fn nonneg(context: &'static str, value: f64) -> Result<(), MeasureError> {
    if value < 0.0 || value.is_nan() {
        Err(MeasureError::NegativeWeight { context, value })
    } else {
        Ok(())
    }
}

fn malformed(msg: impl Into<String>) -> MeasureError {
    MeasureError::Malformed(msg.into())
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn derive(spec: &MeasureSpec) -> Result<Derived, MeasureError> {
    match spec {
        MeasureSpec::Dirac { location, weight } => {
            if location.is_empty() {
                return Err(malformed("dirac location is empty"));
            }
            nonneg("dirac weight", *weight)?;
            Ok(Derived { ambient: location.len(), support: 0.0, mass: *weight })
        }
        MeasureSpec::Hypersurface { vertices, density } => {
            if vertices.len() < 2 {
                return Err(malformed("hypersurface needs at least two vertices"));
            }
            let dim = vertices[0].len();
            if dim == 0 || vertices.iter().any(|v| v.len() != dim) {
                return Err(malformed("hypersurface vertices have inconsistent dimension"));
            }
            if density.len() != vertices.len() - 1 {
                return Err(malformed("hypersurface needs one density per segment"));
            }
            let mut mass = 0.0;
            for (k, &h) in density.iter().enumerate() {
                nonneg("hypersurface density", h)?;
                let len = distance(&vertices[k], &vertices[k + 1]);
                if len == 0.0 {
                    return Err(malformed("hypersurface has a zero-length segment"));
                }
                mass += h * len;
            }
            Ok(Derived { ambient: dim, support: 1.0, mass })
        }
        MeasureSpec::Cantor { theta, depth, embedding, mass } => {
            let dim = cantor_dimension(*theta)?;
            if *depth == 0 || *depth > 40 {
                return Err(malformed("cantor depth must be in 1..=40"));
            }
            let [a, b] = embedding;
            if a.is_empty() || a.len() != b.len() {
                return Err(malformed("cantor embedding endpoints have inconsistent dimension"));
            }
            if distance(a, b) == 0.0 {
                return Err(malformed("cantor embedding segment is degenerate"));
            }
            nonneg("cantor mass", *mass)?;
            Ok(Derived { ambient: a.len(), support: dim.alpha, mass: *mass })
        }
        MeasureSpec::Product { left, right } => {
            let l = derive(left)?;
            let r = derive(right)?;
            Ok(Derived { ambient: l.ambient + r.ambient, support: l.support + r.support, mass: l.mass * r.mass })
        }
        MeasureSpec::Flow { polygon, field } => {
            let flux = inward_flux(polygon, field)?;
            let m = polygon.len();
            let mass = (0..m).map(|k| flux[k] * edge_length(polygon, k)).sum();
            Ok(Derived { ambient: 2, support: 1.0, mass })
        }
        MeasureSpec::Density { lower, upper, cells, values } => {
            let dim = lower.len();
            if dim == 0 || upper.len() != dim || cells.len() != dim {
                return Err(malformed("density box has inconsistent dimension"));
            }
            if lower.iter().zip(upper).any(|(l, u)| u <= l) {
                return Err(malformed("density box has nonpositive extent"));
            }
            if cells.contains(&0) {
                return Err(malformed("density grid needs at least one cell per axis"));
            }
            let count: usize = cells.iter().product();
            if values.len() != count {
                return Err(malformed(format!("density needs {count} cell values, got {}", values.len())));
            }
            let cell_volume: f64 = (0..dim).map(|i| (upper[i] - lower[i]) / cells[i] as f64).product();
            let mut mass = 0.0;
            for &v in values {
                nonneg("density value", v)?;
                mass += v * cell_volume;
            }
            Ok(Derived { ambient: dim, support: dim as f64, mass })
        }
        MeasureSpec::Sum { terms } => {
            if terms.is_empty() {
                return Err(malformed("sum has no terms"));
            }
            let mut ambient = None;
            let mut support: f64 = 0.0;
            let mut mass = 0.0;
            for t in terms {
                nonneg("sum coefficient", t.coeff)?;
                let d = derive(&t.measure)?;
                match ambient {
                    None => ambient = Some(d.ambient),
                    Some(a) if a != d.ambient => return Err(malformed("sum terms have different dimensions")),
                    _ => {}
                }
                if t.coeff > 0.0 && d.mass > 0.0 {
                    support = support.max(d.support);
                }
                mass += t.coeff * d.mass;
            }
            Ok(Derived { ambient: ambient.unwrap_or(0), support, mass })
        }
    }
}

fn edge_length(polygon: &[[f64; 2]], k: usize) -> f64 {
    let (p, q) = (polygon[k], polygon[(k + 1) % polygon.len()]);
    ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt()
}

/// Per-edge inward flux −X·ν (ν the outward unit normal) of an edge-constant
/// field on a simple polygon of either orientation. Every value must be
/// strictly positive.
pub fn inward_flux(polygon: &[[f64; 2]], field: &[[f64; 2]]) -> Result<Vec<f64>, MeasureError> {
    let m = polygon.len();
    if m < 3 {
        return Err(malformed("flow polygon needs at least three vertices"));
    }
    if field.len() != m {
        return Err(malformed("flow needs one field vector per edge"));
    }
    let signed_area: f64 = (0..m)
        .map(|k| {
            let (p, q) = (polygon[k], polygon[(k + 1) % m]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
        * 0.5;
    if signed_area == 0.0 {
        return Err(malformed("flow polygon has zero area"));
    }
    let orientation = signed_area.signum();
    (0..m)
        .map(|k| {
            let (p, q) = (polygon[k], polygon[(k + 1) % m]);
            let len = edge_length(polygon, k);
            if len == 0.0 {
                return Err(malformed("flow polygon has a zero-length edge"));
            }
            // outward normal of a counter-clockwise boundary is (dy, -dx)/len
            let nu = [orientation * (q[1] - p[1]) / len, -orientation * (q[0] - p[0]) / len];
            let flux = -(field[k][0] * nu[0] + field[k][1] * nu[1]);
            if flux > 0.0 {
                Ok(flux)
            } else {
                Err(MeasureError::OutwardFlow { edge: k, flux })
            }
        })
        .collect()
}

/// Finite atomic quadrature `Σ w_k δ_{p_k}` of a measure.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AtomSet {
    dimension: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
    resolution: usize,
    total_mass: f64,
}

impl AtomSet {
    pub fn from_atoms(dimension: usize, atoms: impl IntoIterator<Item = (Vec<f64>, f64)>, resolution: usize) -> Self {
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for (p, w) in atoms {
            assert_eq!(p.len(), dimension);
            coords.extend_from_slice(&p);
            weights.push(w);
        }
        let total_mass = weights.iter().sum();
        Self { dimension, coords, weights, resolution, total_mass }
    }

    pub fn empty(dimension: usize) -> Self {
        Self { dimension, coords: Vec::new(), weights: Vec::new(), resolution: 1, total_mass: 0.0 }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.coords[k * self.dimension..(k + 1) * self.dimension]
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.coords.chunks_exact(self.dimension.max(1)).zip(self.weights.iter().copied())
    }
}

struct AtomSink {
    dimension: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl AtomSink {
    fn push(&mut self, p: &[f64], w: f64) {
        debug_assert_eq!(p.len(), self.dimension);
        self.coords.extend_from_slice(p);
        self.weights.push(w);
    }
}

/// Expands a validated measure into atoms with the default cap.
pub fn atomize(measure: &Measure, resolution: usize) -> Result<AtomSet, MeasureError> {
    atomize_with_cap(measure, resolution, DEFAULT_ATOM_CAP)
}

/// Expands a validated measure into atoms.
///
/// Dirac gives one atom; Cantor gives the 2^depth construction-interval
/// midpoints with equal weights. Curves, flow edges and density cells use a
/// composite two-point Gauss rule on `resolution` equal pieces per segment
/// (per axis for densities), which integrates the piecewise-constant
/// densities exactly.
pub fn atomize_with_cap(measure: &Measure, resolution: usize, cap: usize) -> Result<AtomSet, MeasureError> {
    if resolution == 0 {
        return Err(malformed("resolution must be positive"));
    }
    let needed = atom_count(&measure.spec, resolution);
    if needed > cap {
        return Err(MeasureError::ResolutionOverflow { needed, cap });
    }
    let mut sink = AtomSink {
        dimension: measure.ambient_dimension,
        coords: Vec::with_capacity(needed * measure.ambient_dimension),
        weights: Vec::with_capacity(needed),
    };
    emit_atoms(&measure.spec, resolution, 1.0, &mut sink)?;
    let total_mass = sink.weights.iter().sum();
    Ok(AtomSet { dimension: sink.dimension, coords: sink.coords, weights: sink.weights, resolution, total_mass })
}

fn atom_count(spec: &MeasureSpec, res: usize) -> usize {
    match spec {
        MeasureSpec::Dirac { .. } => 1,
        MeasureSpec::Hypersurface { density, .. } => density.len().saturating_mul(2 * res),
        MeasureSpec::Cantor { depth, .. } => 1usize.checked_shl(*depth).unwrap_or(usize::MAX),
        MeasureSpec::Product { left, right } => atom_count(left, res).saturating_mul(atom_count(right, res)),
        MeasureSpec::Flow { polygon, .. } => polygon.len().saturating_mul(2 * res),
        MeasureSpec::Density { values, lower, .. } => {
            let per_cell = (2 * res).checked_pow(lower.len() as u32).unwrap_or(usize::MAX);
            values.len().saturating_mul(per_cell)
        }
        MeasureSpec::Sum { terms } => {
            terms.iter().fold(0usize, |acc, t| acc.saturating_add(atom_count(&t.measure, res)))
        }
    }
}

const GAUSS2: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

/// Composite two-point Gauss nodes on [0,1] with equal weights 1/(2·pieces).
fn composite_nodes(pieces: usize) -> impl Iterator<Item = f64> {
    (0..pieces).flat_map(move |i| GAUSS2.iter().map(move |g| (i as f64 + g) / pieces as f64))
}

fn emit_atoms(spec: &MeasureSpec, res: usize, scale: f64, sink: &mut AtomSink) -> Result<(), MeasureError> {
    match spec {
        MeasureSpec::Dirac { location, weight } => sink.push(location, scale * weight),
        MeasureSpec::Hypersurface { vertices, density } => {
            for (k, &h) in density.iter().enumerate() {
                let (a, b) = (&vertices[k], &vertices[k + 1]);
                let w = scale * h * distance(a, b) / (2 * res) as f64;
                let mut p = vec![0.0; a.len()];
                for t in composite_nodes(res) {
                    p.iter_mut().enumerate().for_each(|(i, x)| *x = a[i] + t * (b[i] - a[i]));
                    sink.push(&p, w);
                }
            }
        }
        MeasureSpec::Cantor { theta, depth, embedding, mass } => {
            let [a, b] = embedding;
            let w = scale * mass / 2f64.powi(*depth as i32);
            let mut p = vec![0.0; a.len()];
            for t in cantor_midpoints(*theta, *depth) {
                p.iter_mut().enumerate().for_each(|(i, x)| *x = a[i] + t * (b[i] - a[i]));
                sink.push(&p, w);
            }
        }
        MeasureSpec::Product { left, right } => {
            let l = atomize_unscaled(left, res)?;
            let r = atomize_unscaled(right, res)?;
            let mut p = Vec::with_capacity(l.dimension + r.dimension);
            for (pl, wl) in l.iter() {
                for (pr, wr) in r.iter() {
                    p.clear();
                    p.extend_from_slice(pl);
                    p.extend_from_slice(pr);
                    sink.push(&p, scale * wl * wr);
                }
            }
        }
        MeasureSpec::Flow { polygon, field } => {
            let flux = inward_flux(polygon, field)?;
            let m = polygon.len();
            for k in 0..m {
                let (a, b) = (polygon[k], polygon[(k + 1) % m]);
                let w = scale * flux[k] * edge_length(polygon, k) / (2 * res) as f64;
                for t in composite_nodes(res) {
                    sink.push(&[a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])], w);
                }
            }
        }
        MeasureSpec::Density { lower, upper, cells, values } => {
            let dim = lower.len();
            let widths: Vec<f64> = (0..dim).map(|i| (upper[i] - lower[i]) / cells[i] as f64).collect();
            let cell_volume: f64 = widths.iter().product();
            let nodes: Vec<f64> = composite_nodes(res).collect();
            let per_cell = nodes.len().pow(dim as u32);
            let mut p = vec![0.0; dim];
            for (flat, &value) in values.iter().enumerate() {
                let w = scale * value * cell_volume / per_cell as f64;
                // cell multi-index, first axis fastest
                let mut rem = flat;
                let origin: Vec<f64> = (0..dim)
                    .map(|i| {
                        let c = rem % cells[i];
                        rem /= cells[i];
                        lower[i] + c as f64 * widths[i]
                    })
                    .collect();
                for q in 0..per_cell {
                    let mut r = q;
                    for i in 0..dim {
                        p[i] = origin[i] + nodes[r % nodes.len()] * widths[i];
                        r /= nodes.len();
                    }
                    sink.push(&p, w);
                }
            }
        }
        MeasureSpec::Sum { terms } => {
            for t in terms {
                emit_atoms(&t.measure, res, scale * t.coeff, sink)?;
            }
        }
    }
    Ok(())
}

fn atomize_unscaled(spec: &MeasureSpec, res: usize) -> Result<AtomSet, MeasureError> {
    let d = derive(spec)?;
    let mut sink = AtomSink { dimension: d.ambient, coords: Vec::new(), weights: Vec::new() };
    emit_atoms(spec, res, 1.0, &mut sink)?;
    let total_mass = sink.weights.iter().sum();
    Ok(AtomSet { dimension: d.ambient, coords: sink.coords, weights: sink.weights, resolution: res, total_mass })
}

/// Left endpoints of the 2^depth construction intervals of K(θ), ascending,
/// together with the common interval length.
pub fn cantor_intervals(theta: f64, depth: u32) -> (Vec<f64>, f64) {
    let ratio = 0.5 * (1.0 - theta);
    let mut lefts = vec![0.0];
    let mut len = 1.0;
    for _ in 0..depth {
        let child = len * ratio;
        let shift = len - child;
        lefts = lefts.iter().flat_map(|&a| [a, a + shift]).collect();
        len = child;
    }
    (lefts, len)
}

fn cantor_midpoints(theta: f64, depth: u32) -> Vec<f64> {
    let (lefts, len) = cantor_intervals(theta, depth);
    lefts.into_iter().map(|a| a + 0.5 * len).collect()
}

/// μ(B_r(center)): total weight of atoms within closed distance `radius`.
pub fn ball_mass(atoms: &AtomSet, center: &[f64], radius: f64) -> f64 {
    let r2 = radius * radius;
    atoms
        .iter()
        .filter(|(p, _)| p.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= r2)
        .map(|(_, w)| w)
        .sum()
}

/// Power-law fit of the maximal ball mass against the radius.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingFit {
    /// Least-squares slope of log max_x μ(B_r(x)) against log r.
    pub alpha_hat: f64,
    /// Smallest A with masses[i] ≤ A·radii[i]^alpha_hat for every sample.
    pub a_hat: f64,
    /// Coefficient of determination of the log-log fit (1 for exact power laws).
    pub r_squared: f64,
    pub radii: Vec<f64>,
    pub masses: Vec<f64>,
}

/// Fits `max_c μ(B_r(c)) ≈ A r^α` over the given radii.
///
/// Radii with zero maximal mass are skipped; constant masses give α = 0.
pub fn scaling_exponent_fit(atoms: &AtomSet, centers: &[Vec<f64>], radii: &[f64]) -> Result<ScalingFit, MeasureError> {
    if radii.iter().any(|&r| r <= 0.0 || !r.is_finite()) {
        return Err(MeasureError::InvalidRadii("radii must be positive"));
    }
    let (rmin, rmax) = radii.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &r| (lo.min(r), hi.max(r)));
    if radii.len() < 2 || rmax == rmin {
        return Err(MeasureError::InvalidRadii("need at least two distinct radii"));
    }
    if rmax < 10.0 * rmin * (1.0 - 1e-12) {
        return Err(MeasureError::InvalidRadii("radii must span at least one decade"));
    }
    if centers.is_empty() {
        return Err(MeasureError::DegenerateFit("no centers"));
    }
    let masses: Vec<f64> =
        radii.iter().map(|&r| centers.iter().map(|c| ball_mass(atoms, c, r)).fold(0.0, f64::max)).collect();
    let samples: Vec<(f64, f64)> =
        radii.iter().zip(&masses).filter(|(_, &m)| m > 0.0).map(|(&r, &m)| (r.ln(), m.ln())).collect();
    if samples.is_empty() {
        return Err(MeasureError::DegenerateFit("all ball masses are zero"));
    }
    let distinct = samples.iter().any(|s| s.0 != samples[0].0);
    if samples.len() < 2 || !distinct {
        return Err(MeasureError::DegenerateFit("fewer than two radii carry mass"));
    }
    let n = samples.len() as f64;
    let mx = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let my = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|s| (s.0 - mx).powi(2)).sum();
    let sxy: f64 = samples.iter().map(|s| (s.0 - mx) * (s.1 - my)).sum();
    let syy: f64 = samples.iter().map(|s| (s.1 - my).powi(2)).sum();
    let alpha_hat = sxy / sxx;
    let r_squared = if syy <= 1e-28 * (1.0 + my * my) { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    let a_hat = radii.iter().zip(&masses).map(|(&r, &m)| m / r.powf(alpha_hat)).fold(0.0, f64::max);
    Ok(ScalingFit { alpha_hat, a_hat, r_squared, radii: radii.to_vec(), masses })
}

/// Deterministic probe centers: construction endpoints for Cantor factors,
/// vertices and uniform samples for curves and polygons, cell centers for
/// densities, Cartesian products for products, and a thinned subset of the
/// atoms themselves.
pub fn probe_centers(measure: &Measure, atoms: &AtomSet) -> Vec<Vec<f64>> {
    let mut centers = structural_centers(&measure.spec);
    let stride = (atoms.len() / 64).max(1);
    centers.extend((0..atoms.len()).step_by(stride).map(|k| atoms.point(k).to_vec()));
    centers
}

fn structural_centers(spec: &MeasureSpec) -> Vec<Vec<f64>> {
    let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect() };
    match spec {
        MeasureSpec::Dirac { location, .. } => vec![location.clone()],
        MeasureSpec::Hypersurface { vertices, .. } => {
            let mut out = vertices.clone();
            for seg in vertices.windows(2) {
                out.extend((1..16).map(|i| lerp(&seg[0], &seg[1], i as f64 / 16.0)));
            }
            out
        }
        MeasureSpec::Cantor { theta, depth, embedding, .. } => {
            let mut out = Vec::new();
            for level in 0..=(*depth).min(8) {
                let (lefts, len) = cantor_intervals(*theta, level);
                for a in lefts {
                    out.push(lerp(&embedding[0], &embedding[1], a));
                    out.push(lerp(&embedding[0], &embedding[1], a + len));
                }
            }
            out.sort_by(|p, q| p.partial_cmp(q).unwrap_or(std::cmp::Ordering::Equal));
            out.dedup();
            out
        }
        MeasureSpec::Product { left, right } => {
            let l = thin(structural_centers(left), 48);
            let r = thin(structural_centers(right), 48);
            l.iter().flat_map(|a| r.iter().map(move |b| [a.as_slice(), b.as_slice()].concat())).collect()
        }
        MeasureSpec::Flow { polygon, .. } => {
            let m = polygon.len();
            let mut out = Vec::new();
            for k in 0..m {
                let (a, b) = (polygon[k], polygon[(k + 1) % m]);
                out.extend((0..8).map(|i| lerp(&a, &b, i as f64 / 8.0)));
            }
            out
        }
        MeasureSpec::Density { lower, upper, .. } => {
            let dim = lower.len();
            let per_axis = 5usize;
            (0..per_axis.pow(dim as u32))
                .map(|q| {
                    let mut r = q;
                    (0..dim)
                        .map(|i| {
                            let t = (r % per_axis) as f64 / (per_axis - 1) as f64;
                            r /= per_axis;
                            lower[i] + t * (upper[i] - lower[i])
                        })
                        .collect()
                })
                .collect()
        }
        MeasureSpec::Sum { terms } => terms.iter().flat_map(|t| structural_centers(&t.measure)).collect(),
    }
}

fn thin(mut v: Vec<Vec<f64>>, max: usize) -> Vec<Vec<f64>> {
    if v.len() <= max {
        return v;
    }
    let stride = v.len().div_ceil(max);
    v = v.into_iter().step_by(stride).collect();
    v
}

/// Hausdorff dimension data of the Cantor set K(θ).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CantorDimension {
    /// α = log 2 / log b.
    pub alpha: f64,
    /// b = 2 / (1 − θ), the inverse scaling ratio of each generation.
    pub b: f64,
    /// Normalizer γ_α = π^{α/2} 2^{−α} / Γ(α/2 + 1) of α-dimensional
    /// Hausdorff measure. Informational only.
    pub gamma_alpha: f64,
}

pub fn cantor_dimension(theta: f64) -> Result<CantorDimension, MeasureError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(MeasureError::DomainError(theta));
    }
    let b = 2.0 / (1.0 - theta);
    let alpha = std::f64::consts::LN_2 / b.ln();
    let gamma_alpha = std::f64::consts::PI.powf(alpha / 2.0) * 2f64.powf(-alpha) / libm::tgamma(alpha / 2.0 + 1.0);
    Ok(CantorDimension { alpha, b, gamma_alpha })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Admissibility {
    pub admissible: bool,
    /// n − 1 − 1/(n − 1).
    pub threshold: f64,
    /// alpha − threshold.
    pub margin: f64,
}

/// Whether the growth exponent `alpha` clears `n − 1 − 1/(n − 1)`, the
/// condition under which `μ(B_r) ≤ A r^α` makes μ a bounded multiplier
/// H¹ → H⁻¹ in dimension n. Product measures pass the summed exponent.
pub fn admissibility_check(n: usize, alpha: f64) -> Result<Admissibility, MeasureError> {
    if n < 2 {
        return Err(MeasureError::InvalidDimension(n));
    }
    let threshold = (n - 1) as f64 - 1.0 / (n - 1) as f64;
    let margin = alpha - threshold;
    Ok(Admissibility { admissible: margin > 0.0, threshold, margin })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, LN_2};

    #[test]
    fn dirac_is_valid_with_unit_mass() {
        let m = make_measure(MeasureSpec::dirac(vec![FRAC_PI_2], 1.0)).unwrap();
        assert_eq!(m.total_mass(), 1.0);
        assert_eq!(m.support_dimension(), 0.0);
        let atoms = atomize(&m, 7).unwrap();
        assert_eq!(atoms.len(), 1);
        assert_eq!(atoms.total_mass(), 1.0);
    }

    #[test]
    fn flow_into_square_center() {
        let square = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let spec = MeasureSpec::flow_from_fn(square.clone(), |x| [0.5 - x[0], 0.5 - x[1]]);
        // by hand: the midpoint field is (0, .5), (-.5, 0), (0, -.5), (.5, 0) and
        // the outward normals are (0,-1), (1,0), (0,1), (-1,0): flux 0.5 each
        if let MeasureSpec::Flow { polygon, field } = &spec {
            assert_eq!(inward_flux(polygon, field).unwrap(), vec![0.5; 4]);
        }
        let m = make_measure(spec).unwrap();
        assert!((m.total_mass() - 2.0).abs() < 1e-15);
        // clockwise orientation gives the same fluxes
        let mut cw = square;
        cw.reverse();
        let spec_cw = MeasureSpec::flow_from_fn(cw, |x| [0.5 - x[0], 0.5 - x[1]]);
        assert!((make_measure(spec_cw).unwrap().total_mass() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn constant_flow_is_outward_somewhere() {
        let square = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let spec = MeasureSpec::Flow { polygon: square, field: vec![[1.0, 0.0]; 4] };
        match make_measure(spec) {
            Err(MeasureError::OutwardFlow { edge, flux }) => {
                assert_eq!(edge, 0); // bottom edge: tangential field, zero flux
                assert_eq!(flux, 0.0);
            }
            other => panic!("expected OutwardFlow, got {other:?}"),
        }
        // with a vertical component the right edge (k=1) carries flux -1
        let spec = MeasureSpec::Flow {
            polygon: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            field: vec![[0.0, 1.0], [1.0, 0.0], [0.0, -1.0], [1.0, 0.0]],
        };
        assert_eq!(make_measure(spec), Err(MeasureError::OutwardFlow { edge: 1, flux: -1.0 }));
    }

    #[test]
    fn rejects_negative_and_zero() {
        assert!(matches!(make_measure(MeasureSpec::dirac(vec![0.0], -1.0)), Err(MeasureError::NegativeWeight { .. })));
        assert_eq!(make_measure(MeasureSpec::dirac(vec![0.0], 0.0)), Err(MeasureError::ZeroMass));
        assert!(make_measure_allow_zero(MeasureSpec::zero(2)).unwrap().is_zero());
        assert_eq!(
            make_measure(MeasureSpec::cantor(1.0, 3, vec![0.0], vec![1.0], 1.0)),
            Err(MeasureError::DomainError(1.0))
        );
    }

    #[test]
    fn cantor_atoms_have_equal_dyadic_weights() {
        let m = make_measure(MeasureSpec::cantor(1.0 / 3.0, 3, vec![0.0], vec![1.0], 1.0)).unwrap();
        let atoms = atomize(&m, 1).unwrap();
        assert_eq!(atoms.len(), 8);
        assert!(atoms.iter().all(|(_, w)| w == 0.125));
        assert_eq!(atoms.total_mass(), 1.0);
        // first midpoint is the center of [0, 1/27]
        assert!((atoms.point(0)[0] - 1.0 / 54.0).abs() < 1e-15);
    }

    #[test]
    fn product_of_cantors() {
        let c = MeasureSpec::cantor(1.0 / 3.0, 2, vec![0.0], vec![1.0], 1.0);
        let m = make_measure(MeasureSpec::product(c.clone(), c)).unwrap();
        assert_eq!(m.ambient_dimension(), 2);
        let atoms = atomize(&m, 1).unwrap();
        assert_eq!(atoms.len(), 16);
        assert!(atoms.iter().all(|(_, w)| w == 1.0 / 16.0));
    }

    #[test]
    fn segment_density_mass_by_hand() {
        // ∫ h dσ = 2 · 0.5
        let spec = MeasureSpec::Hypersurface { vertices: vec![vec![0.25, 0.0], vec![0.75, 0.0]], density: vec![2.0] };
        let m = make_measure(spec).unwrap();
        for res in [1, 3, 10] {
            let atoms = atomize(&m, res).unwrap();
            assert!((atoms.total_mass() - 1.0).abs() < 1e-15);
            assert_eq!(atoms.len(), 2 * res);
        }
    }

    #[test]
    fn density_mass_is_exact() {
        let spec = MeasureSpec::Density {
            lower: vec![0.0, 0.0],
            upper: vec![2.0, 1.0],
            cells: vec![2, 1],
            values: vec![1.0, 3.0],
        };
        let m = make_measure(spec).unwrap();
        assert_eq!(m.total_mass(), 4.0);
        let atoms = atomize(&m, 2).unwrap();
        assert_eq!(atoms.len(), 2 * 16);
        assert!((atoms.total_mass() - 4.0).abs() < 1e-14);
        assert!(atoms.iter().all(|(p, _)| p[0] > 0.0 && p[0] < 2.0 && p[1] > 0.0 && p[1] < 1.0));
    }

    #[test]
    fn overflow_is_reported() {
        let m = make_measure(MeasureSpec::cantor(0.5, 20, vec![0.0], vec![1.0], 1.0)).unwrap();
        assert_eq!(atomize_with_cap(&m, 1, 1000), Err(MeasureError::ResolutionOverflow { needed: 1 << 20, cap: 1000 }));
    }

    #[test]
    fn sum_scales_weights() {
        let spec = MeasureSpec::Sum {
            terms: vec![
                SumTerm { coeff: 2.0, measure: MeasureSpec::dirac(vec![0.1], 1.5) },
                SumTerm { coeff: 0.5, measure: MeasureSpec::cantor(0.5, 2, vec![0.2], vec![0.8], 1.0) },
            ],
        };
        let m = make_measure(spec).unwrap();
        assert_eq!(m.total_mass(), 3.5);
        let atoms = atomize(&m, 1).unwrap();
        assert_eq!(atoms.len(), 5);
        assert_eq!(atoms.total_mass(), 3.5);
    }

    #[test]
    fn ball_mass_edge_cases() {
        let m = make_measure(MeasureSpec::dirac(vec![0.3, 0.4], 2.0)).unwrap();
        let atoms = atomize(&m, 1).unwrap();
        assert_eq!(ball_mass(&atoms, &[0.3, 0.4], 1e-9), 2.0);
        assert_eq!(ball_mass(&atoms, &[0.0, 0.0], 0.49), 0.0);
        assert_eq!(ball_mass(&atoms, &[0.0, 0.0], 0.5), 2.0);
    }

    #[test]
    fn cantor_ball_mass_at_left_endpoint_is_dyadic() {
        let m = make_measure(MeasureSpec::cantor(1.0 / 3.0, 12, vec![0.0], vec![1.0], 1.0)).unwrap();
        let atoms = atomize(&m, 1).unwrap();
        for k in 0..=12 {
            let r = 3f64.powi(-k);
            assert_eq!(ball_mass(&atoms, &[0.0], r), 2f64.powi(-k), "k = {k}");
        }
        assert_eq!(ball_mass(&atoms, &[0.5], 2.0), 1.0);
    }

    #[test]
    fn cantor_scaling_exponent() {
        let m = make_measure(MeasureSpec::cantor(1.0 / 3.0, 12, vec![0.0], vec![1.0], 1.0)).unwrap();
        let atoms = atomize(&m, 1).unwrap();
        let radii: Vec<f64> = (2..=8).map(|k| 3f64.powi(-k)).collect();
        let fit = scaling_exponent_fit(&atoms, &probe_centers(&m, &atoms), &radii).unwrap();
        assert!((fit.alpha_hat - LN_2 / 3f64.ln()).abs() < 0.05, "{fit:?}");
        for (r, mass) in fit.radii.iter().zip(&fit.masses) {
            assert!(*mass <= fit.a_hat * r.powf(fit.alpha_hat) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn dirac_scaling_exponent_is_zero() {
        let m = make_measure(MeasureSpec::dirac(vec![0.5, 0.5], 1.0)).unwrap();
        let atoms = atomize(&m, 1).unwrap();
        let radii = [1e-3, 1e-2, 1e-1];
        let fit = scaling_exponent_fit(&atoms, &probe_centers(&m, &atoms), &radii).unwrap();
        assert!(fit.alpha_hat.abs() < 0.05);
        assert_eq!(fit.a_hat, 1.0);
    }

    #[test]
    fn uniform_segment_scaling_exponent_is_one() {
        // μ(B_r) = 2r·h at interior centers
        let spec = MeasureSpec::Hypersurface { vertices: vec![vec![0.0, 0.5], vec![1.0, 0.5]], density: vec![1.0] };
        let m = make_measure(spec).unwrap();
        let atoms = atomize(&m, 4000).unwrap();
        let radii = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1];
        let fit = scaling_exponent_fit(&atoms, &probe_centers(&m, &atoms), &radii).unwrap();
        assert!((fit.alpha_hat - 1.0).abs() < 0.05, "{fit:?}");
    }

    #[test]
    fn fit_rejects_bad_input() {
        let m = make_measure(MeasureSpec::dirac(vec![0.5], 1.0)).unwrap();
        let atoms = atomize(&m, 1).unwrap();
        assert!(matches!(scaling_exponent_fit(&atoms, &[vec![0.5]], &[0.1, 0.1]), Err(MeasureError::InvalidRadii(_))));
        assert!(matches!(
            scaling_exponent_fit(&atoms, &[vec![10.0]], &[0.01, 0.1, 1.0]),
            Err(MeasureError::DegenerateFit(_))
        ));
    }

    #[test]
    fn cantor_dimension_values() {
        let d = cantor_dimension(1.0 / 3.0).unwrap();
        assert!((d.alpha - 0.630_929_753_571_457_4).abs() < 1e-12);
        assert!((d.b - 3.0).abs() < 1e-15);
        let d = cantor_dimension(0.1).unwrap();
        assert!((d.alpha - LN_2 / (LN_2 - 0.9f64.ln())).abs() < 1e-14);
        assert!(cantor_dimension(1e-9).unwrap().alpha > 0.999_999);
        assert!(cantor_dimension(1.0 - 1e-9).unwrap().alpha < 0.04);
        assert!(cantor_dimension(0.0).is_err());
        // γ_α at α = 1 would be 1; at α = log2/log3 compute the closed form directly
        let a = d.alpha;
        let g = std::f64::consts::PI.powf(a / 2.0) / 2f64.powf(a) / libm::tgamma(a / 2.0 + 1.0);
        assert_eq!(d.gamma_alpha, g);
    }

    #[test]
    fn admissibility_thresholds() {
        let a = cantor_dimension(1.0 / 3.0).unwrap().alpha;
        let r = admissibility_check(3, 2.0 * a).unwrap();
        assert!(!r.admissible);
        assert_eq!(r.threshold, 1.5);
        let a15 = cantor_dimension(0.15).unwrap().alpha;
        assert!(admissibility_check(3, 2.0 * a15).unwrap().admissible);
        assert!(admissibility_check(2, 1e-6).unwrap().admissible);
        assert_eq!(admissibility_check(2, 0.3).unwrap().threshold, 0.0);
        assert!(admissibility_check(1, 0.3).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = MeasureSpec::Sum {
            terms: vec![SumTerm {
                coeff: 1.0,
                measure: MeasureSpec::product(
                    MeasureSpec::cantor(0.2, 3, vec![0.0, 0.0], vec![1.0, 0.0], 1.0),
                    MeasureSpec::dirac(vec![0.5], 2.0),
                ),
            }],
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"variant\":\"sum\""));
        let back: MeasureSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        let parsed: MeasureSpec =
            serde_json::from_str(r#"{"variant":"cantor","theta":0.5,"depth":2,"embedding":[[0],[1]]}"#).unwrap();
        assert!(matches!(parsed, MeasureSpec::Cantor { mass, .. } if mass == 1.0));
    }
}
