use std::f64::consts::PI;

use damplab_core::c64;
use damplab_core::evolution::{decay_rate_fit, energy, evolve, initial_state, semigroup_norm, State};
use damplab_core::fem::{assemble, build_mesh, dirichlet_eigs, multiplier_bound_probe, Domain};
use damplab_core::measure::{atomize, make_measure, AtomSet, MeasureSpec};
use damplab_core::spectral::{
    compute_spectrum, imaginary_modes, stabilization_predicate, Generator, HVector, SpectrumOptions, SpectrumTarget,
};

fn dirac_on_interval(n: usize, x0: f64, weight: f64) -> Generator {
    let mesh = build_mesh(Domain::Interval { a: 0.0, b: PI }, n).unwrap();
    let atoms = atomize(&make_measure(MeasureSpec::dirac(vec![x0], weight)).unwrap(), 1).unwrap();
    Generator::new(assemble(&mesh, &atoms).unwrap()).unwrap()
}

fn rational() -> Generator {
    dirac_on_interval(64, PI / 2.0, 1.0)
}

fn generic() -> Generator {
    dirac_on_interval(67, 23.0 * PI / 67.0, 1.0)
}

fn h_dot(gen: &Generator, a: &State, b: &State) -> f64 {
    gen.h_inner(&HVector::from_real(&a.v, &a.w), &HVector::from_real(&b.v, &b.w)).re
}

/// H-orthonormal real basis of the span of the imaginary modes.
fn imaginary_basis(gen: &Generator) -> Vec<State> {
    let mut basis: Vec<State> = Vec::new();
    for m in imaginary_modes(gen, 1e-8).unwrap() {
        for part in [|c: &c64| c.re, |c: &c64| c.im] {
            let mut s = State::new(m.v.iter().map(part).collect(), m.w.iter().map(part).collect());
            for _ in 0..2 {
                for b in &basis {
                    let c = h_dot(gen, &s, b);
                    s.v.iter_mut().zip(&b.v).for_each(|(x, y)| *x -= c * y);
                    s.w.iter_mut().zip(&b.w).for_each(|(x, y)| *x -= c * y);
                }
            }
            let e = energy(&s, gen);
            if e > 1e-16 {
                basis.push(s.scaled(1.0 / e.sqrt()));
            }
        }
    }
    basis
}

fn project_out(gen: &Generator, mut s: State, basis: &[State]) -> State {
    for _ in 0..2 {
        for b in basis {
            let c = h_dot(gen, &s, b);
            s.v.iter_mut().zip(&b.v).for_each(|(x, y)| *x -= c * y);
            s.w.iter_mut().zip(&b.w).for_each(|(x, y)| *x -= c * y);
        }
    }
    s
}

#[test]
fn interval_eigenvalues_match_closed_form() {
    let gen = generic();
    let n = 67;
    let h = PI / n as f64;
    for p in dirichlet_eigs(gen.triple(), 20).unwrap().iter().enumerate() {
        let th = (p.0 + 1) as f64 * PI / n as f64;
        let exact = 6.0 / (h * h) * (1.0 - th.cos()) / (2.0 + th.cos());
        assert!((p.1.lambda - exact).abs() <= 1e-11 * exact, "k = {}: {} vs {exact}", p.0 + 1, p.1.lambda);
    }
}

#[test]
fn even_sines_vanish_at_the_midpoint_node() {
    let gen = rational();
    let report = stabilization_predicate(&gen, gen.ndof(), 1e-6).unwrap();
    assert!(!report.decays);
    for m in &report.per_mode {
        if m.index % 2 == 0 {
            assert!(m.overlap.abs() <= 1e-14, "mode {}: {}", m.index, m.overlap);
        } else {
            assert!(m.overlap > 0.1, "mode {}: {}", m.index, m.overlap);
        }
    }
    assert_eq!(report.first_zero_mode().map(|m| m.index), Some(2));
    // one imaginary pair ±iλ per even mode
    let modes = imaginary_modes(&gen, 1e-8).unwrap();
    assert_eq!(modes.len(), 2 * (gen.ndof() / 2));
}

#[test]
fn prime_grid_overlaps_match_brute_force() {
    // ψ_k(x_j) = c_k sin(kπj/67) with c_k² = 6 / (π (2 + cos(kπ/67)))
    let gen = generic();
    let (n, j0) = (67usize, 23usize);
    let report = stabilization_predicate(&gen, gen.ndof(), 1e-6).unwrap();
    assert!(report.decays);
    assert_eq!(report.cluster_count, gen.ndof());
    for m in &report.per_mode {
        let th = m.index as f64 * PI / n as f64;
        let c2 = 6.0 / (PI * (2.0 + th.cos()));
        let expect = c2 * (m.index as f64 * j0 as f64 * PI / n as f64).sin().powi(2);
        assert!((m.diagonal - expect).abs() <= 1e-10 * c2, "mode {}: {} vs {expect}", m.index, m.diagonal);
        assert!(m.overlap > report.threshold);
    }
    assert!(imaginary_modes(&gen, 1e-8).unwrap().is_empty());
}

#[test]
fn composite_grid_has_zero_overlaps_at_multiples() {
    // n = 66 with the atom at node 22: sin(kπ/3) vanishes for k ≡ 0 mod 3
    let gen = dirac_on_interval(66, PI / 3.0, 1.0);
    let report = stabilization_predicate(&gen, gen.ndof(), 1e-6).unwrap();
    assert!(!report.decays);
    let zero: Vec<usize> = report.per_mode.iter().filter(|m| m.overlap <= report.threshold).map(|m| m.index).collect();
    assert_eq!(zero, (1..=21).map(|k| 3 * k).collect::<Vec<_>>());
}

#[test]
fn midline_on_square_misses_antisymmetric_modes() {
    let mesh = build_mesh(Domain::unit_square(), 8).unwrap();
    let line = MeasureSpec::Hypersurface { vertices: vec![vec![0.0, 0.5], vec![1.0, 0.5]], density: vec![1.0] };
    let atoms = atomize(&make_measure(line).unwrap(), 4).unwrap();
    let gen = Generator::new(assemble(&mesh, &atoms).unwrap()).unwrap();
    let report = stabilization_predicate(&gen, 6, 1e-6).unwrap();
    assert!(!report.decays);
    // modes 2 and 3 are the degenerate pair (1,2), (2,1); one combination is odd in y
    let first = report.first_zero_mode().unwrap();
    assert_eq!(first.index, 2);
    let pair: Vec<_> = report.per_mode.iter().filter(|m| m.cluster == first.cluster).collect();
    assert_eq!(pair.len(), 2);
    assert!(first.overlap.abs() <= 1e-12);
    assert!(report.per_mode[0].overlap > 0.1);
}

#[test]
fn diagonal_on_square_misses_modes_odd_under_reflection() {
    let mesh = build_mesh(Domain::unit_square(), 8).unwrap();
    let diag = MeasureSpec::Hypersurface { vertices: vec![vec![0.0, 0.0], vec![1.0, 1.0]], density: vec![1.0] };
    let atoms = atomize(&make_measure(diag).unwrap(), 4).unwrap();
    let gen = Generator::new(assemble(&mesh, &atoms).unwrap()).unwrap();
    let report = stabilization_predicate(&gen, 6, 1e-6).unwrap();
    assert!(!report.decays);
    assert_eq!(report.first_zero_mode().unwrap().index, 2);
}

#[test]
fn interior_node_multiplier_bound_is_green_function() {
    // P1 Green's function of −d²/dx² is nodally exact: G(x0, x0) = x0 (L − x0) / L
    for (n, j0, w) in [(32usize, 5usize, 1.0), (64, 40, 2.5), (67, 23, 0.5)] {
        let x0 = j0 as f64 * PI / n as f64;
        let gen = dirac_on_interval(n, x0, w);
        let c = multiplier_bound_probe(gen.triple()).unwrap();
        let exact = w * x0 * (PI - x0) / PI;
        assert!((c - exact).abs() <= 1e-12 * exact, "n = {n}: {c} vs {exact}");
    }
}

#[test]
fn imaginary_mode_data_keeps_its_energy() {
    let gen = rational();
    let basis = imaginary_basis(&gen);
    assert_eq!(basis.len(), 2 * (gen.ndof() / 2));
    let mut init = State::new(vec![0.0; gen.ndof()], vec![0.0; gen.ndof()]);
    for (k, b) in basis.iter().enumerate() {
        let c = 1.0 / (1.0 + k as f64);
        init.v.iter_mut().zip(&b.v).for_each(|(x, y)| *x += c * y);
        init.w.iter_mut().zip(&b.w).for_each(|(x, y)| *x += c * y);
    }
    let run = evolve(&gen, &init, 10.0, 1e-2).unwrap();
    let e0 = run.trace.rows[0].energy;
    for r in &run.trace.rows {
        assert!((r.energy - e0).abs() <= 1e-10 * e0, "t = {}: {}", r.t, r.energy / e0 - 1.0);
    }
}

#[test]
fn data_orthogonal_to_imaginary_modes_stays_orthogonal_and_decays() {
    let gen = rational();
    let basis = imaginary_basis(&gen);
    let init = project_out(&gen, initial_state(&gen, "random:7").unwrap(), &basis);
    let norm0 = energy(&init, &gen).sqrt();
    let probe = evolve(&gen, &init, 40.0, 1e-2).unwrap();
    let worst = basis.iter().map(|b| h_dot(&gen, &probe.final_state, b).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-8 * norm0, "leak {worst}");

    // the slowest damped modes sit at the top of the discrete spectrum, so
    // the rate is fitted after the low modes have gone
    let fit = decay_rate_fit(&probe.trace, (20.0, 40.0)).unwrap();
    assert!(fit.beta_hat > 0.0);
    let t_final = (1e4f64.ln() / fit.beta_hat).ceil();
    let run = evolve(&gen, &init, t_final, 1e-2).unwrap();
    let ratio = run.trace.rows.last().unwrap().energy / run.trace.rows[0].energy;
    assert!(ratio <= 1e-3, "E(T)/E(0) = {ratio} at T = {t_final}");
    let worst = basis.iter().map(|b| h_dot(&gen, &run.final_state, b).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-8 * norm0);
}

#[test]
fn single_dof_energy_decays_at_twice_the_modal_rate() {
    // n = 2 on (0, π): one hat function at π/2, so B, D, K are scalars
    let gen = dirac_on_interval(2, PI / 2.0, 0.3);
    let t = gen.triple();
    let (b, d, k) = (t.mass.get(0, 0), t.damping.get(0, 0), t.stiffness.get(0, 0));
    let disc = d * d - 4.0 * b * k;
    assert!(disc < 0.0);
    let re = -d / (2.0 * b);
    let init = State::new(vec![0.0], vec![1.0]);
    let run = evolve(&gen, &init, 40.0, 1e-3).unwrap();
    let fit = decay_rate_fit(&run.trace, (5.0, 40.0)).unwrap();
    assert!((fit.beta_hat - 2.0 * re.abs()).abs() <= 0.05 * 2.0 * re.abs(), "{} vs {}", fit.beta_hat, 2.0 * re.abs());

    let spectrum = compute_spectrum(&gen, 2, SpectrumTarget::ImaginaryAxis, &SpectrumOptions::default()).unwrap();
    for p in &spectrum.pairs {
        assert!((p.zeta.re - re).abs() <= 1e-12 * re.abs());
        assert!((p.zeta.im.abs() - (-disc).sqrt() / (2.0 * b)).abs() <= 1e-10);
    }
}

#[test]
fn semigroup_norm_trivial_cases() {
    let gen = rational();
    assert_eq!(semigroup_norm(&gen, 0.0).unwrap(), 1.0);
    let mesh = build_mesh(Domain::Interval { a: 0.0, b: PI }, 40).unwrap();
    let free = Generator::new(assemble(&mesh, &AtomSet::empty(1)).unwrap()).unwrap();
    for t in [0.5, 3.0, 17.0] {
        assert!((semigroup_norm(&free, t).unwrap() - 1.0).abs() <= 1e-10);
    }
}

#[test]
fn midpoint_rule_is_second_order() {
    let gen = generic();
    let init = initial_state(&gen, "mode:1").unwrap();
    let dt = 2e-3;
    let reference = evolve(&gen, &init, 1.0, dt / 16.0).unwrap().final_state;
    let err = |step: f64| {
        let s = evolve(&gen, &init, 1.0, step).unwrap().final_state;
        let diff = State::new(
            s.v.iter().zip(&reference.v).map(|(a, b)| a - b).collect(),
            s.w.iter().zip(&reference.w).map(|(a, b)| a - b).collect(),
        );
        energy(&diff, &gen).sqrt()
    };
    let order = (err(dt) / err(dt / 2.0)).log2();
    assert!((1.8..=2.2).contains(&order), "observed order {order}");
}
