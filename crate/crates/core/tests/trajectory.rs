use std::path::Path;

use volfill::scenario::{parse_scenario, reference_text};
use volfill::scheme::run_simulation;

fn short(alpha: f64, extra: &[(&str, &str)]) -> volfill::Scenario {
    let mut text = reference_text("short", alpha).replace("T = 50", "T = 2");
    for (from, to) in extra {
        text = text.replace(from, to);
    }
    parse_scenario(&text, Path::new(".")).expect("scenario")
}

#[test]
fn each_step_satisfies_the_discrete_entropy_inequality() {
    let traj = run_simulation(&short(2.0, &[])).unwrap();
    assert!(!traj.steps.is_empty());
    for s in &traj.steps {
        assert!(
            s.entropy - s.entropy_old + s.dissipation <= 1e-10,
            "t = {}: {} -> {} with dissipation {}",
            s.t,
            s.entropy_old,
            s.entropy,
            s.dissipation
        );
        assert!(s.dissipation >= 0.0);
        assert!(s.interior_margin > 0.0);
    }
}

#[test]
fn mass_is_conserved_for_every_mobility_mean_and_jacobian() {
    for mean in ["arithmetic", "geometric", "upwind-max"] {
        for jac in ["frozen", "exact"] {
            let line = format!("seed = 0\nmobility_mean = {mean}\njacobian = {jac}");
            let scenario = short(2.0, &[("seed = 0", &line)]);
            let traj = run_simulation(&scenario).unwrap_or_else(|e| panic!("{mean}/{jac}: {e}"));
            let m0 = &traj.records[0].mass;
            for s in &traj.steps {
                for (m, a) in s.mass.iter().zip(m0) {
                    assert!((m - a).abs() <= 1e-10 * a, "{mean}/{jac}: {m} vs {a}");
                }
            }
        }
    }
}

#[test]
fn uniform_state_is_stationary() {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/uniform.scn")).unwrap();
    let scenario = parse_scenario(&text, Path::new(".")).unwrap();
    let traj = run_simulation(&scenario).unwrap();
    let last = traj.final_state();
    for k in 0..last.cells() {
        for (a, b) in last.cell(k).iter().zip(traj.uinf.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
    assert!(traj.records.iter().all(|r| r.hstar.abs() < 1e-14));
}

#[test]
fn output_cadence_controls_records() {
    let by_time = run_simulation(&short(2.0, &[])).unwrap();
    assert_eq!(by_time.records.len(), 21);
    for (i, r) in by_time.records.iter().enumerate() {
        assert!((r.t - 0.1 * i as f64).abs() < 1e-9, "record {i} at {}", r.t);
    }

    let by_steps = run_simulation(&short(2.0, &[("output_dt = 0.1", "output_every = 7")])).unwrap();
    let steps = by_steps.steps.len();
    assert!(by_steps.records.len() >= steps / 7);
}

#[test]
fn runs_are_reproducible() {
    let a = run_simulation(&short(1.5, &[])).unwrap();
    let b = run_simulation(&short(1.5, &[])).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.final_state(), b.final_state());
}

#[test]
fn larger_alpha_decays_more_slowly() {
    let h = |alpha| run_simulation(&short(alpha, &[])).unwrap().records.last().unwrap().hstar;
    let (h1, h3) = (h(1.0), h(3.0));
    assert!(h1 < h3, "{h1} vs {h3}");
}
