use proptest::prelude::*;
use robustmdp::formats::{parse_trace_csv, read_json, to_json_bytes, trace_csv};
use robustmdp::{GenerateSpec, Instance};
use robustmdp_core::solvers::IterRecord;
use robustmdp_core::{KernelBasis, SolverConfig, TabularMdp, UncertaintySet};

fn spec(set: &str) -> GenerateSpec {
    GenerateSpec {
        n_states: 5,
        n_actions: 3,
        branching: 2,
        seed: 7,
        bases: 4,
        set: set.into(),
        lambda_pmin: 0.0,
        discount: None,
    }
}

#[test]
fn instance_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for set in ["simplex-ball:0.3", "vertices:3", "srect:0.05", "simplex-ball:inf"] {
        let inst = spec(set).build().unwrap();
        let [m, b, s] = inst.write(dir.path()).unwrap();
        let back = Instance::read(&m, &b, &s).unwrap();
        assert_eq!(back, inst, "{set}");
        assert_eq!(back.digest(), inst.digest());
    }
}

#[test]
fn srect_spec_gives_a_rectangular_set() {
    let inst = spec("srect:0.05").build().unwrap();
    assert!(inst.set.is_s_rectangular());
    assert_eq!(inst.basis.dim, 5 * 4);
    assert!(!spec("vertices:3").build().unwrap().set.is_s_rectangular());
}

#[test]
fn pmin_mixing_bounds_every_entry() {
    let mut s = spec("simplex-ball:0.3");
    s.lambda_pmin = 0.5;
    let inst = s.build().unwrap();
    for i in 0..inst.basis.dim {
        assert!(inst.basis.component(i).probs.iter().all(|&p| p >= 0.5 / 5.0 - 1e-12));
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let mut s = spec("simplex-ball:0.3");
    s.branching = 9;
    assert!(s.build().is_err());
    assert!(spec("cube:1").build().is_err());
    let mut s = spec("simplex-ball:0.3");
    s.lambda_pmin = 1.0;
    assert!(s.build().is_err());
    let mut s = spec("simplex-ball:0.3");
    s.bases = 0;
    assert!(s.build().is_err());
}

#[test]
fn tampered_files_fail_validation() {
    let dir = tempfile::tempdir().unwrap();
    let inst = spec("simplex-ball:0.3").build().unwrap();
    let [m, b, s] = inst.write(dir.path()).unwrap();
    let mut mdp: TabularMdp = read_json(&m).unwrap();
    mdp.reward[0] = 2.0;
    std::fs::write(&m, to_json_bytes(&mdp)).unwrap();
    assert!(Instance::read(&m, &b, &s).is_err());
    std::fs::write(&m, "{").unwrap();
    assert!(Instance::read(&m, &b, &s).is_err());
}

#[test]
fn solver_config_defaults_from_json() {
    let c: SolverConfig = serde_json::from_str(
        r#"{"max_iters": 5, "tau": 0.1, "eps": 0.05, "eps_grad": 0, "eps_theta": 1e-8, "gradient_mode": "exact"}"#,
    )
    .unwrap();
    assert_eq!(c, SolverConfig::exact(5, 0.1, 1e-8));
    let set: UncertaintySet =
        serde_json::from_str(r#"{"kind": "simplex_ball", "center": [0.5, 0.5], "radius": null}"#).unwrap();
    assert_eq!(set, UncertaintySet::simplex_ball(vec![0.5, 0.5], f64::INFINITY));
    let _: KernelBasis = serde_json::from_slice(&to_json_bytes(&spec("vertices:2").build().unwrap().basis)).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generated_instances_validate_and_round_trip(
        ns in 2usize..6, na in 1usize..4, seed in 0u64..10_000, bases in 1usize..4, kind in 0usize..3, r in 0.0f64..0.5,
    ) {
        let set = match kind {
            0 => format!("simplex-ball:{r}"),
            1 => format!("vertices:{}", bases + 1),
            _ => format!("srect:{r}"),
        };
        let s = GenerateSpec { n_states: ns, n_actions: na, branching: ns.min(2), seed, bases, set, lambda_pmin: 0.2, discount: Some(0.8) };
        let inst = s.build().unwrap();
        inst.validate().unwrap();
        let again = s.build().unwrap();
        prop_assert_eq!(inst.to_files(), again.to_files());
        let back: TabularMdp = serde_json::from_slice(&inst.to_files()[0]).unwrap();
        prop_assert_eq!(back, inst.mdp);
    }

    #[test]
    fn trace_rows_round_trip(rows in prop::collection::vec((-1e3f64..1e3, 0.0f64..10.0, 0u64..1_000_000), 0..20)) {
        let recs: Vec<IterRecord> = rows.iter().enumerate().map(|(i, &(f, g, e))| IterRecord {
            iter: i, f_value: f, grad_norm: 0.0, gap: g, env_steps: e, xi: None,
        }).collect();
        let parsed = parse_trace_csv(&trace_csv(&recs, None)).unwrap();
        prop_assert_eq!(parsed.len(), recs.len());
        for (p, r) in parsed.iter().zip(&recs) {
            prop_assert_eq!(p.f_value, r.f_value);
            prop_assert_eq!(p.gap, r.gap);
            prop_assert_eq!(p.env_steps, r.env_steps);
        }
    }
}
