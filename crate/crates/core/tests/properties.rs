use damplab_core::c64;
use damplab_core::evolution::{energy, evolve, State};
use damplab_core::fem::{assemble, build_mesh, min_eigenvalue, Domain};
use damplab_core::measure::{
    atomize, ball_mass, make_measure, probe_centers, scaling_exponent_fit, MeasureSpec, SumTerm,
};
use damplab_core::spectral::{resolvent_apply, resolvent_residual, Generator, HVector};
use proptest::prelude::*;

fn cantor(theta: f64, depth: u32, mass: f64) -> MeasureSpec {
    MeasureSpec::cantor(theta, depth, vec![0.1], vec![0.9], mass)
}

fn spec_strategy_1d() -> impl Strategy<Value = MeasureSpec> {
    prop_oneof![
        (0.01f64..0.99, 0.0f64..3.0).prop_map(|(x, w)| MeasureSpec::dirac(vec![x], w)),
        (0.05f64..0.95, 1u32..9, 0.1f64..2.0).prop_map(|(t, d, m)| cantor(t, d, m)),
        (0.0f64..0.5, 0.5f64..1.0, 0.0f64..4.0).prop_map(|(a, b, v)| MeasureSpec::uniform_density(vec![a], vec![b], v)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn atom_weights_are_nonnegative(spec in spec_strategy_1d(), res in 1usize..6) {
        let m = make_measure(spec).unwrap_or_else(|_| {
            make_measure(MeasureSpec::dirac(vec![0.5], 1.0)).unwrap()
        });
        let atoms = atomize(&m, res).unwrap();
        prop_assert!(atoms.iter().all(|(_, w)| w >= 0.0));
    }

    #[test]
    fn dirac_cantor_sum_preserve_mass_exactly(
        w in 0.1f64..5.0, theta in 0.05f64..0.95, depth in 1u32..12, c1 in 0.0f64..3.0, c2 in 0.1f64..3.0,
    ) {
        let d = make_measure(MeasureSpec::dirac(vec![0.3], w)).unwrap();
        prop_assert_eq!(atomize(&d, 1).unwrap().total_mass(), w);
        // dyadic masses keep the equal-weight sum exact
        let c = make_measure(cantor(theta, depth, 1.0)).unwrap();
        prop_assert_eq!(atomize(&c, 1).unwrap().total_mass(), 1.0);
        let s = make_measure(MeasureSpec::Sum { terms: vec![
            SumTerm { coeff: c1, measure: MeasureSpec::dirac(vec![0.2], 1.0) },
            SumTerm { coeff: c2, measure: MeasureSpec::dirac(vec![0.7], 1.0) },
        ]}).unwrap();
        let atoms = atomize(&s, 1).unwrap();
        prop_assert_eq!(atoms.total_mass(), c1 + c2);
        prop_assert_eq!(s.total_mass(), c1 + c2);
    }

    #[test]
    fn curve_and_density_mass_is_resolution_independent(
        x0 in 0.0f64..0.4, y0 in 0.0f64..1.0, x1 in 0.6f64..1.0, y1 in 0.0f64..1.0,
        h in 0.1f64..3.0, r1 in 1usize..8, r2 in 8usize..20,
    ) {
        let curve = make_measure(MeasureSpec::Hypersurface {
            vertices: vec![vec![x0, y0], vec![x1, y1], vec![0.5, 0.5]],
            density: vec![h, 2.0 * h],
        }).unwrap();
        let (a, b) = (atomize(&curve, r1).unwrap().total_mass(), atomize(&curve, r2).unwrap().total_mass());
        prop_assert!((a - b).abs() <= 1e-10 * a);
        prop_assert!((a - curve.total_mass()).abs() <= 1e-10 * a);
        let dens = make_measure(MeasureSpec::Density {
            lower: vec![x0, 0.0], upper: vec![x1, 1.0], cells: vec![2, 3], values: vec![h, 0.0, 1.0, 2.0, h, 0.5],
        }).unwrap();
        let (a, b) = (atomize(&dens, r1).unwrap().total_mass(), atomize(&dens, r2).unwrap().total_mass());
        prop_assert!((a - b).abs() <= 1e-10 * a);
    }

    #[test]
    fn ball_mass_is_monotone_and_bounded(
        theta in 0.05f64..0.9, c in 0.0f64..1.0, r1 in 1e-4f64..0.5, dr in 0.0f64..0.5,
    ) {
        let atoms = atomize(&make_measure(cantor(theta, 8, 1.0)).unwrap(), 1).unwrap();
        let m1 = ball_mass(&atoms, &[c], r1);
        let m2 = ball_mass(&atoms, &[c], r1 + dr);
        prop_assert!(m1 <= m2);
        prop_assert!(m2 <= atoms.total_mass());
        prop_assert_eq!(ball_mass(&atoms, &[c], 2.0), atoms.total_mass());
    }

    #[test]
    fn cantor_left_endpoint_self_similarity(depth in 1u32..13, mass in 0.25f64..4.0) {
        let atoms = atomize(&make_measure(MeasureSpec::cantor(1.0 / 3.0, depth, vec![0.0], vec![1.0], mass)).unwrap(), 1).unwrap();
        for k in 0..=depth as i32 {
            let expect = 2f64.powi(-k) * mass;
            prop_assert!((ball_mass(&atoms, &[0.0], 3f64.powi(-k)) - expect).abs() <= 1e-12 * expect);
        }
    }

    #[test]
    fn flow_atoms_are_positive(
        cx in 0.3f64..0.7, cy in 0.3f64..0.7, rx in 0.1f64..0.25, ry in 0.1f64..0.25, sides in 3usize..9, res in 1usize..4,
    ) {
        // convex polygon around (cx, cy), field pointing to its center
        let poly: Vec<[f64; 2]> = (0..sides)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / sides as f64;
                [cx + rx * a.cos(), cy + ry * a.sin()]
            })
            .collect();
        let m = make_measure(MeasureSpec::flow_from_fn(poly, |x| [cx - x[0], cy - x[1]])).unwrap();
        let atoms = atomize(&m, res).unwrap();
        prop_assert!(atoms.iter().all(|(_, w)| w > 0.0));
    }

    #[test]
    fn assembled_matrices_are_symmetric_and_semidefinite(
        n in 2usize..9, two_d in any::<bool>(), x in 0.0f64..1.0, y in 0.0f64..1.0, w in 0.0f64..3.0,
    ) {
        let (domain, p) = if two_d { (Domain::unit_square(), vec![x, y]) } else { (Domain::Interval { a: 0.0, b: 1.0 }, vec![x]) };
        let mesh = build_mesh(domain, n).unwrap();
        let spec = MeasureSpec::Sum { terms: vec![
            SumTerm { coeff: 1.0, measure: MeasureSpec::dirac(p.clone(), w) },
            SumTerm { coeff: 0.5, measure: MeasureSpec::dirac(p.iter().map(|c| 1.0 - c).collect(), 1.0) },
        ]};
        let atoms = atomize(&make_measure(spec).unwrap(), 1).unwrap();
        let t = assemble(&mesh, &atoms).unwrap();
        for m in [&t.mass, &t.stiffness, &t.damping] {
            prop_assert_eq!(m.asymmetry(), 0.0);
        }
        prop_assert!(min_eigenvalue(&t.mass).unwrap() > 0.0);
        prop_assert!(min_eigenvalue(&t.stiffness).unwrap() > 0.0);
        prop_assert!(min_eigenvalue(&t.damping).unwrap() >= -1e-12 * t.damping.norm1());
        // rank(D) ≤ number of atoms times nodes per element
        let rank_bound = atoms.len() * if two_d { 3 } else { 2 };
        prop_assert!(t.damping.support().len() <= rank_bound);
    }

    #[test]
    fn partition_of_unity_everywhere(x in 0.0f64..=2.0, y in -1.0f64..=0.5, n in 2usize..12) {
        let mesh = build_mesh(Domain::Rectangle { ax: 0.0, bx: 2.0, ay: -1.0, by: 0.5 }, n).unwrap();
        let s: f64 = mesh.basis_at(&[x, y]).unwrap().iter().map(|p| p.1).sum();
        prop_assert!((s - 1.0).abs() < 1e-13);
    }

    #[test]
    fn midpoint_steps_never_increase_energy(dt in 1e-3f64..2.0, seed in 0u64..1000, x0 in 0.1f64..3.0) {
        let mesh = build_mesh(Domain::Interval { a: 0.0, b: std::f64::consts::PI }, 24).unwrap();
        let atoms = atomize(&make_measure(MeasureSpec::dirac(vec![x0], 1.0)).unwrap(), 1).unwrap();
        let gen = Generator::new(assemble(&mesh, &atoms).unwrap()).unwrap();
        let init = damplab_core::evolution::initial_state(&gen, &format!("random:{seed}")).unwrap();
        let run = evolve(&gen, &init, 10.0 * dt, dt).unwrap();
        for w in run.trace.rows.windows(2) {
            prop_assert!(w[1].norm <= w[0].norm * (1.0 + 1e-12));
        }
        prop_assert!(run.trace.max_balance_defect() < 1e-10);
    }

    #[test]
    fn resolvent_is_self_consistent(re in 0.05f64..3.0, im in -20.0f64..20.0, seed in 0usize..50) {
        let mesh = build_mesh(Domain::unit_square(), 6).unwrap();
        let atoms = atomize(&make_measure(MeasureSpec::dirac(vec![0.3, 0.6], 2.0)).unwrap(), 1).unwrap();
        let gen = Generator::new(assemble(&mesh, &atoms).unwrap()).unwrap();
        let n = gen.ndof();
        let f = HVector::from_real(
            &(0..n).map(|i| ((i + seed) as f64 * 0.37).sin()).collect::<Vec<_>>(),
            &(0..n).map(|i| ((i * seed) as f64 * 0.11).cos()).collect::<Vec<_>>(),
        );
        // Re z > 0 lies in the resolvent set of a dissipative generator
        let z = c64::new(re, im);
        let u = resolvent_apply(&gen, z, &f).unwrap();
        prop_assert!(resolvent_residual(&gen, z, &u, &f) <= 1e-10 * gen.h_norm(&f));
    }
}

#[test]
fn product_exponent_is_additive() {
    let radii: Vec<f64> = (2..=6).map(|k| 3f64.powi(-k)).collect();
    let fit_of = |spec: MeasureSpec| {
        let m = make_measure(spec).unwrap();
        let atoms = atomize(&m, 1).unwrap();
        scaling_exponent_fit(&atoms, &probe_centers(&m, &atoms), &radii).unwrap().alpha_hat
    };
    for (t1, t2) in [(1.0 / 3.0, 1.0 / 3.0), (1.0 / 3.0, 0.2), (0.5, 0.15)] {
        let c1 = MeasureSpec::cantor(t1, 9, vec![0.0], vec![1.0], 1.0);
        let c2 = MeasureSpec::cantor(t2, 9, vec![0.0], vec![1.0], 1.0);
        let a1 = fit_of(c1.clone());
        let a2 = fit_of(c2.clone());
        let a12 = fit_of(MeasureSpec::product(c1, c2));
        assert!((a12 - (a1 + a2)).abs() < 0.1, "θ = ({t1}, {t2}): {a12} vs {a1} + {a2}");
    }
}

#[test]
fn energy_of_random_states_is_positive() {
    let mesh = build_mesh(Domain::unit_square(), 5).unwrap();
    let gen = Generator::new(assemble(&mesh, &damplab_core::measure::AtomSet::empty(2)).unwrap()).unwrap();
    for seed in 0..10 {
        let s = damplab_core::evolution::initial_state(&gen, &format!("random:{seed}")).unwrap();
        assert!(energy(&s, &gen) > 0.0);
        assert!(energy(&State::new(s.v.clone(), vec![0.0; s.w.len()]), &gen) > 0.0);
    }
}
