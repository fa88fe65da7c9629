//! Implicit midpoint time stepping of `U′ = GU`, the energy balance it
//! preserves, dense semigroup norms and decay-rate fits.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fem::dirichlet_eigs;
use crate::linalg::{expm, spectral_norm};
use crate::spectral::{Generator, SchurSolver, SpectralError};
use faer::c64;

/// Largest system for which [`semigroup_norm`] forms a dense exponential.
pub const SEMIGROUP_DENSE_CAP: usize = 500;

#[derive(Debug, thiserror::Error)]
pub enum EvolutionError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("invalid time step: dt = {dt}, final time = {t_final}")]
    InvalidStep { dt: f64, t_final: f64 },
    #[error("state has {got} dofs, generator has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{ndof} dofs exceed the dense semigroup cap of {cap}")]
    TooLarge { ndof: usize, cap: usize },
    #[error("degenerate decay fit: {0}")]
    DegenerateFit(&'static str),
    #[error("invalid initial condition: {0}")]
    InvalidInit(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// `U = (v, w)` at time `t`: velocity and displacement coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    #[serde(default)]
    pub t: f64,
}

impl State {
    pub fn new(v: Vec<f64>, w: Vec<f64>) -> Self {
        Self { v, w, t: 0.0 }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { v: self.v.iter().map(|x| c * x).collect(), w: self.w.iter().map(|x| c * x).collect(), t: self.t }
    }
}

/// `vᵀBv + wᵀKw`, the squared H-norm.
pub fn energy(state: &State, gen: &Generator) -> f64 {
    let t = gen.triple();
    t.mass.quad_form(&state.v) + t.stiffness.quad_form(&state.w)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyRow {
    pub t: f64,
    pub energy: f64,
    /// `2·dt·v_midᵀ D v_mid` for the step ending at `t` (0 on the first row).
    pub dissipation: f64,
    /// `‖U‖_H`.
    pub norm: f64,
    /// `|E_{n+1} − E_n + dissipation| / E_n` for the step ending at `t`.
    pub balance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyTrace {
    pub rows: Vec<EnergyRow>,
    pub dt: f64,
}

impl EnergyTrace {
    pub fn max_balance_defect(&self) -> f64 {
        self.rows.iter().map(|r| r.balance).fold(0.0, f64::max)
    }

    /// Largest relative energy increase between consecutive rows (0 when
    /// the energy never grows).
    pub fn max_energy_increase(&self) -> f64 {
        self.rows
            .windows(2)
            .map(|w| (w[1].energy - w[0].energy) / w[0].energy.max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,energy,dissipation,norm,balance")?;
        for r in &self.rows {
            writeln!(out, "{:e},{:e},{:e},{:e},{:e}", r.t, r.energy, r.dissipation, r.norm, r.balance)?;
        }
        Ok(())
    }

    /// Plot of log₁₀ E against t as a standalone SVG document.
    pub fn write_svg<W: std::io::Write>(&self, mut out: W, title: &str) -> std::io::Result<()> {
        let (width, height, pad) = (640.0, 400.0, 48.0);
        let pts: Vec<(f64, f64)> =
            self.rows.iter().filter(|r| r.energy > 0.0).map(|r| (r.t, r.energy.log10())).collect();
        let (t0, t1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
        let (y0, y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
        let (y0, y1) = if y1 - y0 < 1e-9 { (y0 - 0.5, y1 + 0.5) } else { (y0, y1) };
        let span_t = if t1 > t0 { t1 - t0 } else { 1.0 };
        let sx = |t: f64| pad + (t - t0) / span_t * (width - 2.0 * pad);
        let sy = |y: f64| height - pad - (y - y0) / (y1 - y0) * (height - 2.0 * pad);
        writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
        )?;
        writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
        writeln!(
            out,
            r#"<text x="{pad}" y="24" font-family="sans-serif" font-size="14">{}</text>"#,
            xml_escape(title)
        )?;
        writeln!(
            out,
            r#"<line x1="{pad}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{b}" stroke="black"/>"#,
            b = height - pad,
            r = width - pad
        )?;
        writeln!(
            out,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">t = {:.3}</text><text x="4" y="{}" font-family="sans-serif" font-size="11">{:.3}</text><text x="4" y="{}" font-family="sans-serif" font-size="11">{:.3}</text>"#,
            width - pad - 40.0,
            height - pad + 16.0,
            t1,
            sy(y1) + 4.0,
            y1,
            sy(y0) + 4.0,
            y0
        )?;
        // thin long traces to at most ~2000 vertices
        let stride = (pts.len() / 2000).max(1);
        let mut path = String::new();
        for (k, &(t, y)) in pts.iter().enumerate().filter(|(k, _)| k % stride == 0 || *k + 1 == pts.len()) {
            path.push_str(&format!("{}{:.2},{:.2}", if k == 0 { "" } else { " " }, sx(t), sy(y)));
        }
        writeln!(out, r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{path}"/>"#)?;
        writeln!(out, r#"<text x="{pad}" y="{}" font-family="sans-serif" font-size="11">log10 E</text>"#, pad - 6.0)?;
        writeln!(out, "</svg>")
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Clone, Debug)]
pub struct Evolution {
    pub trace: EnergyTrace,
    pub final_state: State,
}

/// Integrates from `init` to `t_final` with the implicit midpoint rule.
///
/// Each step solves `(z − G)U_mid = z U_n` with `z = 2/dt` (written for the
/// increment `U_mid − U_n`) through one Schur factorization reused for the
/// whole run, then sets `U_{n+1} = 2U_mid − U_n`. The number of steps is `round(t_final/dt)`.
pub fn evolve(gen: &Generator, init: &State, t_final: f64, dt: f64) -> Result<Evolution, EvolutionError> {
    let n = gen.ndof();
    if init.v.len() != n || init.w.len() != n {
        return Err(EvolutionError::DimensionMismatch { expected: n, got: init.v.len().max(init.w.len()) });
    }
    if !(dt > 0.0) || !(t_final >= dt * (1.0 - 1e-12)) || !t_final.is_finite() {
        return Err(EvolutionError::InvalidStep { dt, t_final });
    }
    let steps = (t_final / dt).round() as usize;
    let z = 2.0 / dt;
    let solver = SchurSolver::new(gen, c64::new(z, 0.0))?;
    let damping = &gen.triple().damping;
    let mut state = init.clone();
    let mut e = energy(&state, gen);
    let mut rows = Vec::with_capacity(steps + 1);
    rows.push(EnergyRow { t: state.t, energy: e, dissipation: 0.0, norm: e.sqrt(), balance: 0.0 });
    let (mass, stiffness) = (&gen.triple().mass, &gen.triple().stiffness);
    let mut vm = vec![0.0; n];
    for step in 1..=steps {
        // increment form: (z − G)δ = G U_n, whose Schur right-hand side is
        // zBv − Kw; avoids the cancellation in z·w_mid − z·w
        let bv = mass.mul_vec(&state.v);
        let kw = stiffness.mul_vec(&state.w);
        let b: Vec<f64> = (0..n).map(|i| z * bv[i] - kw[i]).collect();
        let mut dw = solver.schur_solve_real(&b);
        // one refinement step against the unassembled operator z²B + zD + K;
        // rounding in the assembled Schur matrix otherwise biases the energy
        let (bw, dmw, kdw) = (mass.mul_vec(&dw), damping.mul_vec(&dw), stiffness.mul_vec(&dw));
        let r: Vec<f64> = (0..n).map(|i| b[i] - (z * z * bw[i] + z * dmw[i] + kdw[i])).collect();
        let corr = solver.schur_solve_real(&r);
        dw.iter_mut().zip(&corr).for_each(|(x, c)| *x += c);
        for i in 0..n {
            let dv = z * dw[i] - state.v[i];
            vm[i] = state.v[i] + dv;
            state.v[i] += 2.0 * dv;
            state.w[i] += 2.0 * dw[i];
        }
        state.t = init.t + step as f64 * dt;
        let e_next = energy(&state, gen);
        let dissipation = 2.0 * dt * damping.quad_form(&vm);
        let balance = if e > 0.0 { (e_next - e + dissipation).abs() / e } else { (e_next + dissipation).abs() };
        rows.push(EnergyRow { t: state.t, energy: e_next, dissipation, norm: e_next.sqrt(), balance });
        e = e_next;
    }
    Ok(Evolution { trace: EnergyTrace { rows, dt }, final_state: state })
}

/// `‖e^{tG}‖_{H→H}` from the dense exponential of G in Cholesky coordinates.
pub fn semigroup_norm(gen: &Generator, t: f64) -> Result<f64, EvolutionError> {
    let n = gen.ndof();
    if n > SEMIGROUP_DENSE_CAP {
        return Err(EvolutionError::TooLarge { ndof: n, cap: SEMIGROUP_DENSE_CAP });
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    let c = gen.companion()?;
    let e = expm(&(c * faer::Scale(t)));
    Ok(spectral_norm(&e).map_err(SpectralError::from)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    /// Minus the least-squares slope of log E against t.
    pub beta_hat: f64,
    /// R² of the fit; 1 for constant energy.
    pub quality: f64,
    pub samples: usize,
    pub window: (f64, f64),
}

/// Fits `E(t) ≈ C e^{−βt}` on the rows with `t_lo ≤ t ≤ t_hi`.
pub fn decay_rate_fit(trace: &EnergyTrace, window: (f64, f64)) -> Result<DecayFit, EvolutionError> {
    let (lo, hi) = window;
    let pts: Vec<(f64, f64)> = trace.rows.iter().filter(|r| r.t >= lo && r.t <= hi).map(|r| (r.t, r.energy)).collect();
    if pts.len() < 2 {
        return Err(EvolutionError::DegenerateFit("fewer than two samples in the window"));
    }
    let e0 = trace.rows.first().map_or(0.0, |r| r.energy);
    if pts.iter().any(|p| !(p.1 > 1e-300 && p.1 > 1e-28 * e0)) {
        return Err(EvolutionError::DegenerateFit("energy reaches numerical zero"));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for &(t, e) in &pts {
        let (dt, dy) = (t - mt, e.ln() - my);
        stt += dt * dt;
        sty += dt * dy;
        syy += dy * dy;
    }
    if stt == 0.0 {
        return Err(EvolutionError::DegenerateFit("window holds a single time"));
    }
    let slope = sty / stt;
    // variation at roundoff level counts as constant energy
    let quality = if syy <= 1e-24 * n { 1.0 } else { sty * sty / (stt * syy) };
    Ok(DecayFit { beta_hat: -slope, quality, samples: pts.len(), window })
}

/// Builds an initial state from a named preset:
///
/// * `mode:k`: `w = ψ_k` (k-th Dirichlet eigenvector, B-normalized), `v = 0`;
/// * `random:seed`: entries uniform in (−1, 1) from a seeded ChaCha8
///   stream, rescaled to unit energy;
/// * `file:path`: a JSON document `{"v": [...], "w": [...]}`.
pub fn initial_state(gen: &Generator, spec: &str) -> Result<State, EvolutionError> {
    let n = gen.ndof();
    let (kind, arg) = spec.split_once(':').ok_or_else(|| EvolutionError::InvalidInit(spec.to_string()))?;
    match kind {
        "mode" => {
            let k: usize = arg.parse().map_err(|_| EvolutionError::InvalidInit(spec.to_string()))?;
            if k == 0 || k > n {
                return Err(EvolutionError::InvalidInit(format!("mode index {k} outside 1..={n}")));
            }
            let mut modes = dirichlet_eigs(gen.triple(), k).map_err(SpectralError::from)?;
            Ok(State::new(vec![0.0; n], modes.remove(k - 1).psi))
        }
        "random" => {
            let seed: u64 = arg.parse().map_err(|_| EvolutionError::InvalidInit(spec.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s = State::new(v, w);
            let e = energy(&s, gen);
            Ok(s.scaled(1.0 / e.sqrt()))
        }
        "file" => {
            let state = load_state(Path::new(arg))?;
            if state.v.len() != n || state.w.len() != n {
                return Err(EvolutionError::DimensionMismatch { expected: n, got: state.v.len().max(state.w.len()) });
            }
            Ok(state)
        }
        _ => Err(EvolutionError::InvalidInit(spec.to_string())),
    }
}

pub fn load_state(path: &Path) -> Result<State, EvolutionError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| EvolutionError::InvalidInit(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble, build_mesh, Domain};
    use crate::measure::{atomize, make_measure, AtomSet, MeasureSpec};
    use std::f64::consts::PI;

    fn interval_generator(n: usize, atoms: &AtomSet) -> Generator {
        let m = build_mesh(Domain::Interval { a: 0.0, b: PI }, n).unwrap();
        Generator::new(assemble(&m, atoms).unwrap()).unwrap()
    }

    fn dirac(x: f64) -> AtomSet {
        atomize(&make_measure(MeasureSpec::dirac(vec![x], 1.0)).unwrap(), 1).unwrap()
    }

    #[test]
    fn energy_basics() {
        let gen = interval_generator(16, &AtomSet::empty(1));
        assert_eq!(energy(&State::new(vec![0.0; 15], vec![0.0; 15]), &gen), 0.0);
        let s = initial_state(&gen, "mode:3").unwrap();
        let lam = dirichlet_eigs(gen.triple(), 3).unwrap()[2].lambda;
        assert!((energy(&s, &gen) - lam).abs() < 1e-12 * lam);
        assert!((energy(&s.scaled(3.0), &gen) - 9.0 * energy(&s, &gen)).abs() < 1e-12 * lam);
        let r = initial_state(&gen, "random:7").unwrap();
        assert!((energy(&r, &gen) - 1.0).abs() < 1e-14);
        assert_eq!(r, initial_state(&gen, "random:7").unwrap());
        assert!(initial_state(&gen, "mode:0").is_err());
        assert!(initial_state(&gen, "bogus").is_err());
    }

    #[test]
    fn undamped_mode_conserves_energy() {
        let gen = interval_generator(12, &AtomSet::empty(1));
        let init = initial_state(&gen, "mode:2").unwrap();
        let run = evolve(&gen, &init, 100.0, 1e-2).unwrap();
        assert_eq!(run.trace.rows.len(), 10_001);
        let e0 = run.trace.rows[0].energy;
        for r in &run.trace.rows {
            assert!((r.energy - e0).abs() <= 1e-12 * e0, "{} at t={}", (r.energy - e0) / e0, r.t);
        }
        let fit = decay_rate_fit(&run.trace, (10.0, 100.0)).unwrap();
        assert!(fit.beta_hat.abs() < 1e-12);
        assert_eq!(fit.quality, 1.0);
    }

    #[test]
    fn midpoint_dirac_keeps_even_mode_energy() {
        let gen = interval_generator(64, &dirac(PI / 2.0));
        let init = initial_state(&gen, "mode:4").unwrap();
        let run = evolve(&gen, &init, 20.0, 1e-2).unwrap();
        let e0 = run.trace.rows[0].energy;
        assert!(run.trace.rows.iter().all(|r| (r.energy - e0).abs() <= 1e-10 * e0));
    }

    #[test]
    fn generic_dirac_loses_energy_with_exact_balance() {
        let gen = interval_generator(67, &dirac(23.0 * PI / 67.0));
        let init = initial_state(&gen, "random:1").unwrap();
        let run = evolve(&gen, &init, 10.0, 5e-3).unwrap();
        let last = run.trace.rows.last().unwrap();
        assert!(last.energy < run.trace.rows[0].energy);
        assert!(run.trace.max_balance_defect() < 1e-10);
        assert_eq!(run.trace.max_energy_increase(), 0.0);
    }

    #[test]
    fn single_dof_decay_rate() {
        // one mode decays at 2|Re ζ| with Re ζ = −a/(2b), b = 2h/3
        let a = 0.2;
        let gen =
            interval_generator(2, &atomize(&make_measure(MeasureSpec::dirac(vec![PI / 2.0], a)).unwrap(), 1).unwrap());
        let b = 2.0 * (PI / 2.0) / 3.0;
        let expected = a / b;
        let run = evolve(&gen, &State::new(vec![0.0], vec![1.0]), 60.0, 1e-3).unwrap();
        let fit = decay_rate_fit(&run.trace, (5.0, 60.0)).unwrap();
        assert!((fit.beta_hat - expected).abs() < 0.05 * expected, "{} vs {expected}", fit.beta_hat);
    }

    #[test]
    fn semigroup_norm_values() {
        let gen = interval_generator(10, &AtomSet::empty(1));
        assert_eq!(semigroup_norm(&gen, 0.0).unwrap(), 1.0);
        for t in [0.5, 3.0, 10.0] {
            assert!((semigroup_norm(&gen, t).unwrap() - 1.0).abs() < 1e-10);
        }
        let damped = interval_generator(
            10,
            &atomize(&make_measure(MeasureSpec::uniform_density(vec![0.0], vec![PI], 1.0)).unwrap(), 2).unwrap(),
        );
        let s = semigroup_norm(&damped, 5.0).unwrap();
        assert!(s < 0.5, "{s}");
        let big = interval_generator(600, &AtomSet::empty(1));
        assert!(matches!(semigroup_norm(&big, 1.0), Err(EvolutionError::TooLarge { .. })));
    }

    #[test]
    fn fit_errors() {
        let trace = EnergyTrace {
            rows: vec![EnergyRow { t: 0.0, energy: 1.0, dissipation: 0.0, norm: 1.0, balance: 0.0 }],
            dt: 1.0,
        };
        assert!(matches!(decay_rate_fit(&trace, (0.0, 1.0)), Err(EvolutionError::DegenerateFit(_))));
        let rows = (0..5)
            .map(|k| EnergyRow {
                t: k as f64,
                energy: if k < 3 { 1.0 } else { 0.0 },
                dissipation: 0.0,
                norm: 0.0,
                balance: 0.0,
            })
            .collect();
        assert!(matches!(
            decay_rate_fit(&EnergyTrace { rows, dt: 1.0 }, (0.0, 5.0)),
            Err(EvolutionError::DegenerateFit(_))
        ));
    }

    #[test]
    fn invalid_steps() {
        let gen = interval_generator(4, &AtomSet::empty(1));
        let s = State::new(vec![0.0; 3], vec![1.0; 3]);
        assert!(matches!(evolve(&gen, &s, 1.0, 0.0), Err(EvolutionError::InvalidStep { .. })));
        assert!(matches!(evolve(&gen, &s, 0.01, 0.1), Err(EvolutionError::InvalidStep { .. })));
        assert!(matches!(
            evolve(&gen, &State::new(vec![0.0; 2], vec![0.0; 2]), 1.0, 0.1),
            Err(EvolutionError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn csv_and_svg_output() {
        let gen = interval_generator(8, &dirac(1.0));
        let run = evolve(&gen, &initial_state(&gen, "random:3").unwrap(), 1.0, 0.1).unwrap();
        let mut csv = Vec::new();
        run.trace.write_csv(&mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert_eq!(csv.lines().count(), 12);
        assert!(csv.starts_with("t,energy,dissipation,norm,balance\n"));
        let mut svg = Vec::new();
        run.trace.write_svg(&mut svg, "a < b").unwrap();
        let svg = String::from_utf8(svg).unwrap();
        assert!(svg.contains("<polyline") && svg.contains("a &lt; b") && svg.trim_end().ends_with("</svg>"));
    }
}
