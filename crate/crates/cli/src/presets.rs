use std::f64::consts::PI;

use damplab_core::fem::Domain;
use damplab_core::measure::MeasureSpec;

use crate::config::{CapacityTrend, Expectations, ExperimentConfig, Params, Target, Tolerances};
use crate::CliError;

pub struct PresetInfo {
    pub name: &'static str,
    pub summary: &'static str,
}

pub const PRESETS: [PresetInfo; 11] = [
    PresetInfo { name: "dirac-rational", summary: "Dirac at π/2 on (0,π); even modes never see the damping" },
    PresetInfo { name: "dirac-generic", summary: "Dirac at node 23 of 67 on (0,π); every mode is damped" },
    PresetInfo { name: "dirac-offnode", summary: "Dirac at x = 1 on (0,π), between mesh nodes" },
    PresetInfo { name: "hypersurface-line-2d", summary: "line y = 1/2 across the unit square" },
    PresetInfo { name: "cantor-dimension", summary: "middle-third Cantor exponent and the equal-θ threshold in 3D" },
    PresetInfo { name: "cantor-damped-interval", summary: "Cantor damping on (0,π), energy balance over T = 20" },
    PresetInfo { name: "product-cantor-3d-check", summary: "product of two middle-third Cantor sets against n = 3" },
    PresetInfo { name: "flow-square", summary: "flow measure on a quadrilateral inside the unit square" },
    PresetInfo { name: "capacity-probe-2d", summary: "multiplier bound of a 2D point mass under refinement" },
    PresetInfo { name: "gap-vs-decay", summary: "fitted energy decay rate against the spectral abscissa" },
    PresetInfo { name: "undamped-control", summary: "zero damping: unitary group, no decay" },
];

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

fn interval_pi() -> Domain {
    Domain::Interval { a: 0.0, b: PI }
}

fn base(name: &str, domain: Domain, n: usize, measure: MeasureSpec, tasks: &[&str]) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        domain,
        n,
        measure,
        resolution: 1,
        tasks: tasks.iter().map(|t| t.to_string()).collect(),
        tolerances: Tolerances::default(),
        params: Params::default(),
        expect: Expectations::default(),
        output: None,
        seed: 0,
    }
}

const DYNAMICS: [&str; 5] = ["assemble", "spectrum", "stabilization", "gap", "evolve"];

pub fn preset(name: &str) -> Result<ExperimentConfig, CliError> {
    let third_powers = |from: i32, to: i32| (from..=to).map(|k| 3f64.powi(-k)).collect::<Vec<_>>();
    let c = match name {
        "dirac-rational" => {
            let mut c = base(name, interval_pi(), 64, MeasureSpec::dirac(vec![PI / 2.0], 1.0), &DYNAMICS);
            c.params.evolve.init = Some("mode:2".into());
            c.params.evolve.t_final = 10.0;
            c.expect.decays = Some(false);
            c.expect.zero_modes = Some(vec![2]);
            c.expect.unitary = Some(true);
            c.expect.abscissa_negative = Some(false);
            c.expect.energy_drift = Some(1e-10);
            c
        }
        "dirac-generic" => {
            let x0 = 23.0 * PI / 67.0;
            let mut c = base(name, interval_pi(), 67, MeasureSpec::dirac(vec![x0], 1.0), &DYNAMICS);
            c.params.evolve.init = Some("mode:1".into());
            c.params.evolve.t_final = 20.0;
            c.expect.decays = Some(true);
            c.expect.abscissa_negative = Some(true);
            c.expect.max_energy_ratio = Some(1e-3);
            c
        }
        "dirac-offnode" => {
            let mut c = base(name, interval_pi(), 64, MeasureSpec::dirac(vec![1.0], 1.0), &DYNAMICS);
            c.params.evolve.init = Some("mode:1".into());
            c.params.evolve.t_final = 20.0;
            c.expect.decays = Some(true);
            c.expect.abscissa_negative = Some(true);
            c
        }
        "hypersurface-line-2d" => {
            let line = MeasureSpec::Hypersurface { vertices: vec![vec![0.0, 0.5], vec![1.0, 0.5]], density: vec![1.0] };
            let mut c = base(name, Domain::unit_square(), 16, line, &["assemble", "spectrum", "stabilization"]);
            c.resolution = 4;
            c.expect.decays = Some(false);
            c.expect.zero_modes = Some(vec![2]);
            c
        }
        "cantor-dimension" => {
            let cantor = MeasureSpec::cantor(1.0 / 3.0, 12, vec![0.0], vec![1.0], 1.0);
            let mut c = base(name, Domain::Interval { a: 0.0, b: 1.0 }, 8, cantor, &["measure-probe"]);
            c.params.measure_probe.radii = third_powers(2, 8);
            c.params.measure_probe.dimension = Some(3);
            c.params.measure_probe.factors = 2;
            c.params.measure_probe.scan = true;
            c.expect.alpha = Some(Target { value: 2f64.ln() / 3f64.ln(), tol: 0.05 });
            c.expect.admissible = Some(false);
            c.expect.theta_star = Some(Target { value: 1.0 - 2f64.powf(-1.0 / 3.0), tol: 1e-4 });
            c
        }
        "cantor-damped-interval" => {
            let cantor = MeasureSpec::cantor(1.0 / 3.0, 10, vec![0.0], vec![PI], 1.0);
            let mut c = base(name, interval_pi(), 128, cantor, &["assemble", "spectrum", "stabilization", "evolve"]);
            c.params.evolve.t_final = 20.0;
            c.params.evolve.dt = 1e-2;
            c.expect.decays = Some(true);
            c
        }
        "product-cantor-3d-check" => {
            let f = || MeasureSpec::cantor(1.0 / 3.0, 7, vec![0.0], vec![1.0], 1.0);
            let mut c = base(name, Domain::unit_square(), 8, MeasureSpec::product(f(), f()), &["measure-probe"]);
            c.params.measure_probe.radii = third_powers(1, 6);
            c.params.measure_probe.dimension = Some(3);
            c.expect.alpha = Some(Target { value: 2.0 * 2f64.ln() / 3f64.ln(), tol: 0.1 });
            c.expect.admissible = Some(false);
            c
        }
        "flow-square" => {
            let polygon = vec![[0.3, 0.2], [0.8, 0.35], [0.7, 0.75], [0.25, 0.6]];
            let (cx, cy) = (0.5125, 0.475);
            let flow = MeasureSpec::flow_from_fn(polygon, |x| [cx - x[0], cy - x[1]]);
            let mut c =
                base(name, Domain::unit_square(), 12, flow, &["assemble", "spectrum", "stabilization", "evolve"]);
            c.resolution = 3;
            c.params.evolve.t_final = 5.0;
            c.expect.decays = Some(true);
            c
        }
        "capacity-probe-2d" => {
            let mut c =
                base(name, Domain::unit_square(), 8, MeasureSpec::dirac(vec![0.5, 0.5], 1.0), &["capacity-probe"]);
            c.params.capacity_probe.refinements = vec![8, 16, 32, 64];
            c.expect.capacity = Some(CapacityTrend::Growing);
            c
        }
        "gap-vs-decay" => {
            let density =
                MeasureSpec::Density { lower: vec![0.4], upper: vec![1.9], cells: vec![1], values: vec![0.6] };
            let mut c = base(name, interval_pi(), 8, density, &["assemble", "spectrum", "gap", "evolve"]);
            c.resolution = 4;
            c.params.evolve.t_final = 60.0;
            c.params.evolve.fit_window = Some([30.0, 60.0]);
            c.expect.abscissa_negative = Some(true);
            c.expect.beta_vs_abscissa = Some(0.1);
            c
        }
        "undamped-control" => {
            let mut c = base(name, interval_pi(), 32, MeasureSpec::zero(1), &DYNAMICS);
            c.params.evolve.t_final = 10.0;
            c.expect.decays = Some(false);
            c.expect.unitary = Some(true);
            c.expect.abscissa_negative = Some(false);
            c.expect.energy_drift = Some(1e-10);
            c.expect.beta = Some(Target { value: 0.0, tol: 1e-8 });
            c
        }
        _ => return Err(CliError::UnknownPreset(name.to_string())),
    };
    Ok(c)
}
