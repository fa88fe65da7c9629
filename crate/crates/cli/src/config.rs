use std::path::{Path, PathBuf};

use damplab_core::fem::Domain;
use damplab_core::measure::MeasureSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// One experiment: a domain, a mesh size, a damping measure and the tasks
/// to run on them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub domain: Domain,
    /// Subdivisions per side.
    pub n: usize,
    pub measure: MeasureSpec,
    /// Atomization resolution.
    #[serde(default = "one")]
    pub resolution: usize,
    pub tasks: Vec<String>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub expect: Expectations,
    /// Output root; `DAMPLAB_OUTPUT_ROOT` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Normalized pencil residual accepted from the eigensolver.
    pub residual: f64,
    /// |Re ζ + f*Df| on simple pairs.
    pub identity: f64,
    /// Relative cut (times the spectral radius) for purely imaginary ζ.
    pub imaginary: f64,
    /// Relative eigenvalue spacing that counts as a multiplicity.
    pub cluster: f64,
    /// Overlaps at or below this are zero.
    pub overlap_zero: f64,
    /// Relative defect in Re⟨GU,U⟩_H = −v*Dv.
    pub dissipativity: f64,
    /// Per-step relative defect of the discrete energy balance.
    pub balance: f64,
    /// Largest relative energy increase still counted as monotone.
    pub monotone: f64,
    /// Distance of the semigroup norm from 1 for unitary runs.
    pub semigroup: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            residual: 1e-8,
            identity: 1e-8,
            imaginary: 1e-8,
            cluster: 1e-6,
            overlap_zero: 1e-14,
            dissipativity: 1e-12,
            balance: 1e-10,
            monotone: 1e-12,
            semigroup: 1e-8,
        }
    }
}

impl Tolerances {
    fn entries(&self) -> [(&'static str, f64); 9] {
        [
            ("residual", self.residual),
            ("identity", self.identity),
            ("imaginary", self.imaginary),
            ("cluster", self.cluster),
            ("overlap_zero", self.overlap_zero),
            ("dissipativity", self.dissipativity),
            ("balance", self.balance),
            ("monotone", self.monotone),
            ("semigroup", self.semigroup),
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub spectrum: SpectrumParams,
    pub stabilization: StabilizationParams,
    pub evolve: EvolveParams,
    pub gap: GapParams,
    pub measure_probe: MeasureProbeParams,
    pub capacity_probe: CapacityProbeParams,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumParams {
    /// Number of eigenvalues; all 2·ndof when absent.
    pub count: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilizationParams {
    /// Dirichlet modes to test; all of them when absent.
    pub modes: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveParams {
    /// `mode:k`, `random:seed` or `file:path`; `random:<seed>` when absent.
    pub init: Option<String>,
    pub t_final: f64,
    pub dt: f64,
    /// Decay-fit window; the second half of the run when absent.
    pub fit_window: Option<[f64; 2]>,
}

impl Default for EvolveParams {
    fn default() -> Self {
        Self { init: None, t_final: 10.0, dt: 1e-2, fit_window: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GapParams {
    /// Strip width A; `|abscissa|/2` when absent and the abscissa is negative.
    pub strip_width: Option<f64>,
    pub strip_grid: usize,
    /// Times at which the dense semigroup norm is evaluated.
    pub times: Vec<f64>,
}

impl Default for GapParams {
    fn default() -> Self {
        Self { strip_width: None, strip_grid: 32, times: vec![1.0, 5.0, 10.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureProbeParams {
    /// Ball radii for the scaling fit; two decades below a third of the
    /// support diameter when empty.
    pub radii: Vec<f64>,
    /// Ambient dimension for the growth-exponent threshold.
    pub dimension: Option<usize>,
    /// The threshold is applied to the `factors`-fold product of the measure
    /// (exponent times `factors`).
    pub factors: usize,
    /// Also locate the θ where the equal-θ Cantor product changes verdict.
    pub scan: bool,
}

impl Default for MeasureProbeParams {
    fn default() -> Self {
        Self { radii: Vec::new(), dimension: None, factors: 1, scan: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CapacityProbeParams {
    pub refinements: Vec<usize>,
}

impl Default for CapacityProbeParams {
    fn default() -> Self {
        Self { refinements: vec![8, 16, 32, 64] }
    }
}

/// Claims a preset makes about its outcome; each present entry becomes a
/// verdict.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Expectations {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decays: Option<bool>,
    /// 1-based mode indices whose cluster overlap must vanish.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zero_modes: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abscissa_negative: Option<bool>,
    /// Semigroup norm equal to 1 at every sampled time.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unitary: Option<bool>,
    /// Semigroup norm at most `e^{−|abscissa| t / 2}` at every sampled time.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub envelope: Option<bool>,
    /// Upper bound on E(T)/E(0).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_energy_ratio: Option<f64>,
    /// Upper bound on max |E(t) − E(0)| / E(0).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy_drift: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<Target>,
    /// Relative tolerance between the fitted rate and 2·|abscissa|.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_vs_abscissa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Target>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub admissible: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_star: Option<Target>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capacity: Option<CapacityTrend>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub value: f64,
    pub tol: f64,
}

impl Target {
    pub fn holds(&self, x: f64) -> bool {
        (x - self.value).abs() <= self.tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapacityTrend {
    /// Relative spread below 5% across refinements.
    Bounded,
    /// Strictly growing with successive ratios above 1.05.
    Growing,
}

pub const TASK_NAMES: [&str; 7] =
    ["assemble", "spectrum", "stabilization", "gap", "evolve", "measure-probe", "capacity-probe"];

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let config: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
        Self::from_json(&text)
    }

    /// Range checks that the serde types cannot express.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return bad(format!("name {:?} is not a plain file name", self.name));
        }
        if self.tasks.is_empty() {
            return bad("tasks must be nonempty".into());
        }
        for t in &self.tasks {
            if !TASK_NAMES.contains(&t.as_str()) {
                return bad(format!("unknown task {t:?}; expected one of {TASK_NAMES:?}"));
            }
        }
        if self.n < 2 {
            return bad(format!("n = {} must be at least 2", self.n));
        }
        if self.resolution == 0 {
            return bad("resolution must be positive".into());
        }
        for (name, v) in self.tolerances.entries() {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("tolerance {name} = {v} must be positive"));
            }
        }
        let ev = &self.params.evolve;
        if !(ev.dt > 0.0 && ev.t_final >= ev.dt && ev.t_final.is_finite()) {
            return bad(format!("evolve needs 0 < dt ≤ t_final, got dt = {}, t_final = {}", ev.dt, ev.t_final));
        }
        if let Some([lo, hi]) = ev.fit_window {
            if !(lo < hi) {
                return bad(format!("fit window [{lo}, {hi}] is empty"));
            }
        }
        let gap = &self.params.gap;
        if gap.strip_width.is_some_and(|a| !(a > 0.0)) {
            return bad("strip_width must be positive".into());
        }
        if gap.times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return bad("semigroup times must be nonnegative".into());
        }
        if self.params.capacity_probe.refinements.iter().any(|&n| n < 2) {
            return bad("refinements must be at least 2".into());
        }
        let mp = &self.params.measure_probe;
        if mp.radii.iter().any(|r| !(*r > 0.0)) {
            return bad("radii must be positive".into());
        }
        if mp.factors == 0 {
            return bad("factors must be positive".into());
        }
        if mp.scan && mp.dimension.is_none() {
            return bad("the threshold scan needs a dimension".into());
        }
        if self.expect.beta_vs_abscissa.is_some() && !self.wants("spectrum") {
            return bad("expect.beta_vs_abscissa needs the spectrum task".into());
        }
        Ok(())
    }

    pub fn wants(&self, task: &str) -> bool {
        self.tasks.iter().any(|t| t == task)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
