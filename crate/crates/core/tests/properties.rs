//! Property tests of the discrete conservation and dissipation identities,
//! plus end-to-end determinism of the driver.

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use varlag_core::cases::CaseName;
use varlag_core::driver::{run, RunConfig};
use varlag_core::hydro::{assemble_stress, compute_av_field, entropy_production, totals, FlowState, HydroProblem};
use varlag_core::integrator::{be_step, midpoint_step};
use varlag_core::linalg::dot;
use varlag_core::mesh::markers;
use varlag_core::newton::NewtonOptions;
use varlag_core::thermo::GasParams;
use varlag_core::{build_cartesian_mesh, BoundaryCondition, BoxDomain, Constraints, KinematicSpace, QuadField, Shape};

fn problem(shape: Shape, k: usize, bc: BoundaryCondition, g: GasParams) -> HydroProblem {
    let m = build_cartesian_mesh(2, 2, &BoxDomain::unit_square(), shape).unwrap();
    let s = KinematicSpace::new(&m, k).unwrap();
    let bcs: BTreeMap<u32, BoundaryCondition> =
        [markers::LEFT, markers::RIGHT, markers::BOTTOM, markers::TOP].iter().map(|&m| (m, bc)).collect();
    let c = Constraints::build(&s, &bcs).unwrap();
    let rho0 = QuadField::from_fn(&s, |x| 1.0 + 0.5 * x[0] * x[1]);
    let ne = s.n_elements;
    HydroProblem::new(s, rho0, vec![g], vec![0; ne], c).unwrap()
}

fn state(p: &HydroProblem, seed: u64, amp: f64) -> FlowState {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut u: Vec<f64> = (0..p.space.n_dofs()).map(|_| rng.random_range(-amp..amp)).collect();
    p.constraints.impose(&mut u);
    let theta = QuadField::new(
        (0..p.space.n_quad_total()).map(|_| rng.random_range(0.5..2.0)).collect(),
        p.space.n_quad(),
    );
    p.initial_state(u, theta)
}

fn shape_strategy() -> impl Strategy<Value = Shape> {
    prop_oneof![Just(Shape::Quad), Just(Shape::Triangle)]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn one_step_identities(
        shape in shape_strategy(),
        k in 1usize..=3,
        seed in any::<u64>(),
        amp in 0.01f64..0.3,
        dt in 0.005f64..0.05,
        walls in any::<bool>(),
        eta in 0.0f64..0.05,
    ) {
        let bc = if walls { BoundaryCondition::Wall } else { BoundaryCondition::Free };
        let g = GasParams::ideal(1.4).with_av(0.5, 2.0).with_viscosity(eta, eta);
        let p = problem(shape, k, bc, g);
        let s = state(&p, seed, amp);
        let opts = NewtonOptions::default();
        let t0 = totals(&p, &s).unwrap();
        let slack = 10.0 * opts.tol * t0.total_energy().abs().max(1.0);

        let be = be_step(&p, &s, dt, &opts).unwrap();
        let t1 = totals(&p, &be.state).unwrap();
        prop_assert_eq!(t1.mass, t0.mass);
        prop_assert!(t1.total_energy() <= t0.total_energy() + slack);
        let du: Vec<f64> = be.state.u.iter().zip(&s.u).map(|(a, b)| a - b).collect();
        let kick = 0.5 * dot(&du, &p.mass.matvec(&du));
        prop_assert!((t0.total_energy() - t1.total_energy() - kick).abs() <= slack);

        let mid = midpoint_step(&p, &s, dt, &opts).unwrap();
        let t2 = totals(&p, &mid.state).unwrap();
        prop_assert_eq!(t2.mass, t0.mass);
        prop_assert!((t2.total_energy() - t0.total_energy()).abs() <= slack);

        if !walls {
            for t in [&t1, &t2] {
                for c in 0..2 {
                    prop_assert!((t.momentum[c] - t0.momentum[c]).abs() <= 10.0 * opts.tol);
                }
            }
        }

        // η = ξ keeps ξ − 2η/3 ≥ 0, so production is pointwise non-negative.
        let mu = compute_av_field(&p, &s).unwrap();
        let stress = assemble_stress(&p, &be.state, &mu).unwrap();
        let (prod, _) = entropy_production(&p, &be.state, &stress).unwrap();
        prop_assert!(prod.values.iter().all(|&v| v >= -1e-12));
    }
}

fn sod_config(dir: &std::path::Path, threads: usize) -> RunConfig {
    let text = format!(
        "case = \"sod\"\nthreads = {threads}\n[mesh]\ndegree = 2\nnx = 10\n[time]\nt_final = 0.5\n[output]\ndir = \"{}\"\nevery = 10\n",
        dir.display()
    );
    RunConfig::from_toml(&text).unwrap()
}

#[test]
fn diagnostics_are_reproducible_across_runs_and_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (i, threads) in [1, 1, 4].into_iter().enumerate() {
        let dir = tmp.path().join(format!("run{i}"));
        let summary = run(&sod_config(&dir, threads)).unwrap();
        assert!(summary.steps > 0);
        outputs.push((
            std::fs::read(dir.join("diagnostics.csv")).unwrap(),
            std::fs::read(dir.join("final.csv")).unwrap(),
        ));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn every_case_runs_a_few_steps_through_the_driver() {
    let tmp = tempfile::tempdir().unwrap();
    for name in CaseName::ALL {
        let (nx, ny) = if name == CaseName::Sod { (6, 1) } else { (3, 3) };
        let dir = tmp.path().join(name.as_str());
        let text = format!(
            "case = \"{name}\"\n[mesh]\ndegree = 2\nnx = {nx}\nny = {ny}\n[time]\nt_final = 0.02\n[output]\ndir = \"{}\"\nformat = \"both\"\n",
            dir.display()
        );
        let summary = run(&RunConfig::from_toml(&text).unwrap()).unwrap();
        assert!((summary.t_final - 0.02).abs() < 1e-12, "{name}");
        let d = &summary.diagnostics;
        assert!(d.len() >= 2);
        assert!(d.iter().all(|r| r.mass == d[0].mass), "{name}");
        assert!(dir.join("final.vtk").exists() && dir.join("final.csv").exists());
    }
}
