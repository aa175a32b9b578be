use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use tignn_core::fem::material::strain_energy;
use tignn_core::fem::{pk2_stress, prony_update, simulate, stability_dt, MaterialParams, Simulation, SolverOptions};
use tignn_core::mesh::build_beam_mesh;
use tignn_core::state::LoadCase;

#[derive(Deserialize)]
struct Oracle {
    materials: std::collections::BTreeMap<String, Coeffs>,
    cases: Vec<OracleCase>,
}

#[derive(Deserialize)]
struct Coeffs {
    c10: f64,
    c01: f64,
    d1: f64,
}

#[derive(Deserialize)]
struct OracleCase {
    f: [[f64; 3]; 3],
    s: std::collections::BTreeMap<String, [[f64; 3]; 3]>,
}

fn mat3(rows: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| rows[i][j])
}

fn max_abs(m: &Matrix3<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

fn elastic(c10: f64, c01: f64, d1: f64) -> MaterialParams {
    MaterialParams {
        c10,
        c01,
        d1,
        prony: Vec::new(),
        density: 1.0,
    }
}

// Reference values come from tests/fixtures/gen_pk2_oracle.py (sympy, 40 digits).
#[test]
fn pk2_matches_symbolic_derivative() {
    let oracle: Oracle = serde_json::from_str(include_str!("fixtures/pk2_oracle.json")).unwrap();
    assert_eq!(oracle.cases.len(), 50);
    for (name, k) in &oracle.materials {
        let mat = elastic(k.c10, k.c01, k.d1);
        for (i, case) in oracle.cases.iter().enumerate() {
            let f = mat3(&case.f);
            let det = f.determinant();
            assert!((0.5..=2.0).contains(&det));
            let expected = mat3(&case.s[name]);
            let got = pk2_stress(&f, &mat).unwrap();
            let rel = max_abs(&(got - expected)) / max_abs(&expected);
            assert!(rel <= 1e-8, "{name} case {i}: relative error {rel:e}");
        }
    }
}

// P = F S must equal dPsi/dF; checked with a Richardson-extrapolated central difference.
#[test]
fn pk2_is_the_energy_gradient() {
    let mat = elastic(1.0, 0.5, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut done = 0;
    while done < 20 {
        let f = Matrix3::from_fn(|i, j| if i == j { 1.0 } else { 0.0 } + rng.random_range(-0.3..0.3));
        if !(0.5..=2.0).contains(&f.determinant()) {
            continue;
        }
        let p = f * pk2_stress(&f, &mat).unwrap();
        let diff = |h: f64, i: usize, j: usize| {
            let mut a = f;
            let mut b = f;
            a[(i, j)] += h;
            b[(i, j)] -= h;
            (strain_energy(&a, &mat) - strain_energy(&b, &mat)) / (2.0 * h)
        };
        let fd = Matrix3::from_fn(|i, j| (4.0 * diff(5e-4, i, j) - diff(1e-3, i, j)) / 3.0);
        let rel = max_abs(&(fd - p)) / max_abs(&p);
        assert!(rel < 1e-7, "relative error {rel:e}");
        done += 1;
    }
}

#[test]
fn pk2_is_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for mat in [MaterialParams::beam(), elastic(1.0, 0.5, 0.5)] {
        let f = Matrix3::new(1.1, 0.05, -0.02, 0.03, 0.95, 0.04, -0.01, 0.02, 1.02);
        let s = pk2_stress(&f, &mat).unwrap();
        for _ in 0..100 {
            let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let r = Rotation3::new(axis.normalize() * rng.random_range(0.0..std::f64::consts::PI));
            let rotated = pk2_stress(&(r.matrix() * f), &mat).unwrap();
            assert!(max_abs(&(rotated - s)) <= 1e-10 * max_abs(&s));
        }
    }
}

#[test]
fn prony_relaxes_to_the_long_time_modulus() {
    let mat = MaterialParams::beam();
    let s = [1.0, -0.5, -0.5, 0.2, 0.1, -0.3];
    let mut h = vec![[0.0; 6]; mat.prony.len()];
    // Sudden step, then hold.
    let mut up = prony_update(&s, &[0.0; 6], &h, 0.0, &mat.prony);
    h = up.history;
    for _ in 0..20_000 {
        up = prony_update(&s, &s, &h, 1e-3, &mat.prony);
        h = up.history;
    }
    let g_inf = 1.0 - mat.prony_sum();
    for k in 0..6 {
        assert!((up.total_dev[k] - g_inf * s[k]).abs() <= 1e-6 * s[k].abs().max(1.0));
    }
}

#[test]
fn unloaded_beam_stays_at_rest() {
    let mesh = build_beam_mesh(10.0, 10.0, 40.0, 2, 2, 4, MaterialParams::beam()).unwrap();
    let traj = simulate(&mesh, &LoadCase::unloaded(), 5, 0.05, &SolverOptions::default()).unwrap();
    for snap in &traj.snapshots {
        for (node, rest) in snap.nodes.iter().zip(&mesh.rest_positions) {
            assert_eq!(&node.q, rest);
            assert_eq!(node.v, [0.0; 3]);
            assert_eq!(node.sigma, [0.0; 6]);
        }
    }
}

#[test]
fn tip_deflection_grows_with_load_and_clamp_holds() {
    let mesh = build_beam_mesh(10.0, 10.0, 40.0, 2, 2, 4, MaterialParams::beam()).unwrap();
    let tip: Vec<usize> = (0..mesh.n_nodes()).filter(|&i| mesh.rest_positions[i][2] == 40.0).collect();
    let deflection = |force: f64| {
        let load = LoadCase::new(tip.clone(), [force / tip.len() as f64, 0.0, 0.0], (0, 20));
        let traj = simulate(&mesh, &load, 20, 0.05, &SolverOptions::default()).unwrap();
        for snap in &traj.snapshots {
            for &i in &mesh.fixed_nodes {
                assert_eq!(snap.nodes[i].q, mesh.rest_positions[i]);
                assert_eq!(snap.nodes[i].v, [0.0; 3]);
            }
        }
        let last = traj.snapshots.last().unwrap();
        tip.iter().map(|&i| last.nodes[i].q[0] - mesh.rest_positions[i][0]).sum::<f64>() / tip.len() as f64
    };
    let (d1, d2) = (deflection(1e5), deflection(2e5));
    assert!(d1 > 0.0 && d2 > d1, "{d1} {d2}");
}

#[test]
fn stability_step_scales_with_mesh_and_density() {
    let mat = MaterialParams::beam();
    let coarse = build_beam_mesh(10.0, 10.0, 40.0, 2, 2, 8, mat.clone()).unwrap();
    let fine = build_beam_mesh(10.0, 10.0, 40.0, 4, 4, 16, mat.clone()).unwrap();
    let ratio = stability_dt(&coarse, &mat) / stability_dt(&fine, &mat);
    assert!((ratio - 2.0).abs() < 1e-12);
    let heavy = MaterialParams {
        density: 4.0 * mat.density,
        ..mat.clone()
    };
    let ratio = stability_dt(&coarse, &heavy) / stability_dt(&coarse, &mat);
    assert!((ratio - 2.0).abs() < 1e-12);
    // 0.5 * 5 / sqrt((2e7 + 4/3 * 3.1e5) / 1)
    let expected = 0.5 * 5.0 / (2e7f64 + 4.0 / 3.0 * 3.1e5).sqrt();
    assert!((stability_dt(&coarse, &mat) - expected).abs() < 1e-15);
}

#[test]
fn undamped_elastic_beam_conserves_energy() {
    let mat = elastic(1.5e5, 5e3, 1e-5);
    let mesh = build_beam_mesh(10.0, 10.0, 40.0, 2, 2, 4, mat.clone()).unwrap();
    let mut sim = Simulation::new(&mesh, &mat, SolverOptions::undamped()).unwrap();
    let v = mesh
        .rest_positions
        .iter()
        .map(|p| [3.0 * (p[2] / 40.0).powi(2), 0.0, 0.0])
        .collect();
    sim.set_velocity(v).unwrap();
    let e0 = sim.kinetic_energy() + sim.strain_energy();
    let h = 0.5 * stability_dt(&mesh, &mat);
    let mut worst = 0.0f64;
    for _ in 0..2000 {
        sim.advance(h).unwrap();
        let e = sim.kinetic_energy() + sim.strain_energy();
        worst = worst.max((e - e0).abs() / e0);
    }
    assert!(worst < 1e-2, "energy drift {worst:e}");
}

#[test]
fn viscoelastic_beam_does_not_gain_energy() {
    let mat = MaterialParams {
        d1: 1e-5,
        ..MaterialParams::beam()
    };
    let mesh = build_beam_mesh(10.0, 10.0, 40.0, 2, 2, 4, mat.clone()).unwrap();
    let mut sim = Simulation::new(&mesh, &mat, SolverOptions::undamped()).unwrap();
    let v = mesh
        .rest_positions
        .iter()
        .map(|p| [3.0 * (p[2] / 40.0).powi(2), 0.0, 0.0])
        .collect();
    sim.set_velocity(v).unwrap();
    let e0 = sim.kinetic_energy() + sim.strain_energy();
    let h = 0.5 * stability_dt(&mesh, &mat);
    for _ in 0..4000 {
        sim.advance(h).unwrap();
    }
    let e = sim.kinetic_energy() + sim.strain_energy();
    assert!(e < e0, "{e} >= {e0}");
}
