use std::path::Path;
use std::process::{Command, Output};

use robustmdp::formats::{parse_trace_csv, read_json, TRACE_HEADER};
use robustmdp::run::{InstanceSource, RunConfig, SolverChoice, Summary};
use robustmdp::{GenerateSpec, Instance};
use robustmdp_core::policy_oracle;
use robustmdp_core::verify::{worst_kernel_value, WorstKernelMode};
use robustmdp_core::{KernelParams, MixCoefficient, MlmcConfig, RngSeed, SolverConfig};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robustmdp")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn spec(set: &str) -> GenerateSpec {
    GenerateSpec {
        n_states: 4,
        n_actions: 2,
        branching: 2,
        seed: 11,
        bases: 3,
        set: set.into(),
        lambda_pmin: 0.3,
        discount: None,
    }
}

fn write_config(dir: &Path, cfg: &RunConfig) -> String {
    let p = dir.join("run.json");
    std::fs::write(&p, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
    p.to_str().unwrap().to_owned()
}

fn fw_config(set: &str, iters: usize) -> RunConfig {
    let mut c = SolverConfig::exact(iters, 0.1, 1e-8);
    c.curvature = Some(1.0);
    c.tol = 1e-9;
    RunConfig {
        instance: InstanceSource::Generate(spec(set)),
        solver: SolverChoice::Fw,
        config: c,
        avg: None,
        probe_resolution: None,
    }
}

fn solve(cfg: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["solve", "--config", cfg, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    bin(&args)
}

#[test]
fn generate_is_deterministic_and_valid() {
    let dir = tempfile::tempdir().unwrap();
    let mut digests = Vec::new();
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        let o = bin(&[
            "generate",
            "--garnet",
            "6",
            "3",
            "2",
            "--seed",
            "5",
            "--bases",
            "4",
            "--set",
            "vertices:3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        digests.push(stdout(&o));
        let inst = Instance::read(&out.join("mdp.json"), &out.join("basis.json"), &out.join("set.json")).unwrap();
        assert_eq!((inst.mdp.n_states, inst.mdp.n_actions, inst.basis.dim), (6, 3, 4));
        assert_eq!(format!("digest {}\n", inst.digest()), digests[digests.len() - 1]);
    }
    assert_eq!(digests[0], digests[1]);
    for f in ["mdp.json", "basis.json", "set.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn generate_rejects_bad_specs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for args in [
        vec!["generate", "--garnet", "3", "2", "5", "--out", out],
        vec!["generate", "--garnet", "3", "2", "2", "--set", "cube:1", "--out", out],
        vec!["generate", "--garnet", "3", "2", "2", "--set", "simplex-ball:-1", "--out", out],
        vec!["generate", "--garnet", "3", "2", "2", "--pmin", "1.5", "--out", out],
        vec!["generate", "--garnet", "3", "2"],
    ] {
        let o = bin(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn singleton_set_stops_at_once_with_zero_gap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &fw_config("simplex-ball:0", 50));
    let out = dir.path().join("out");
    let o = solve(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = parse_trace_csv(&std::fs::read_to_string(out.join("trace.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].gap.abs() < 1e-12);
    let s: Summary = read_json(&out.join("summary.json")).unwrap();
    assert_eq!(s.nash_gap.kernel_gap, Some(0.0));
    assert!(s.nash_gap.policy_gap < 1e-6, "{}", s.nash_gap.policy_gap);
}

#[test]
fn repeated_solves_give_identical_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &fw_config("simplex-ball:0.2", 30));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(solve(&cfg, &a, &[]).status.success());
    assert!(solve(&cfg, &b, &[]).status.success());
    let ta = std::fs::read(a.join("trace.csv")).unwrap();
    assert_eq!(ta, std::fs::read(b.join("trace.csv")).unwrap());
    assert!(String::from_utf8(ta).unwrap().starts_with(TRACE_HEADER));
    let s: Summary = read_json(&a.join("summary.json")).unwrap();
    assert_eq!(s.config, fw_config("simplex-ball:0.2", 30));
    assert_eq!(s.seeds.instance, Some(11));
}

#[test]
fn trace_replays_against_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let mut rc = fw_config("simplex-ball:0.3", 20);
    rc.config.record_xi = true;
    let inst = spec("simplex-ball:0.3").build().unwrap();
    let cfg = write_config(dir.path(), &rc);
    let out = dir.path().join("out");
    assert!(solve(&cfg, &out, &[]).status.success());
    let rows = parse_trace_csv(&std::fs::read_to_string(out.join("trace.csv")).unwrap()).unwrap();
    let s: Summary = read_json(&out.join("summary.json")).unwrap();
    let snaps = s.snapshots.unwrap();
    assert_eq!(snaps.len(), rows.len());
    let tau = rc.config.tau;
    for (row, xi) in rows.iter().zip(&snaps) {
        let xi = KernelParams::new(xi.clone());
        let f = worst_kernel_value(&inst.mdp, &inst.basis, &xi, WorstKernelMode::Robust, tau).unwrap();
        assert!((f - row.f_value).abs() < 1e-9, "iter {}: {f} vs {}", row.iter, row.f_value);
    }
}

#[test]
fn wall_clock_column_is_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &fw_config("simplex-ball:0.2", 5));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(solve(&cfg, &a, &[]).status.success());
    assert!(solve(&cfg, &b, &["--wall-clock"]).status.success());
    let ra = parse_trace_csv(&std::fs::read_to_string(a.join("trace.csv")).unwrap()).unwrap();
    let rb = parse_trace_csv(&std::fs::read_to_string(b.join("trace.csv")).unwrap()).unwrap();
    assert!(ra.iter().all(|r| r.wall_ms.is_none()));
    assert!(rb.iter().all(|r| r.wall_ms.is_some_and(|w| w >= 0.0)));
}

#[test]
fn invalid_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut rc = fw_config("simplex-ball:0.2", 5);
    rc.solver = SolverChoice::Pgd;
    let cfg = write_config(dir.path(), &rc);
    let o = solve(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error:"));
    let o = solve(dir.path().join("missing.json").to_str().unwrap(), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solver_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut rc = fw_config("simplex-ball:0.2", 5);
    let InstanceSource::Generate(g) = &mut rc.instance else { unreachable!() };
    g.lambda_pmin = 0.0;
    g.branching = 1;
    rc.config.gradient_mode = robustmdp_core::GradientMode::Mlmc;
    rc.config.mlmc = Some(MlmcConfig {
        t_max: 16,
        n_samples: 8,
        n_blocks: 2,
        eps: 0.1,
        beta: 0.1,
        lambda_pmin: MixCoefficient::new(0.5).unwrap(),
        seed: RngSeed(1),
        value_noise: 0.0,
    });
    let cfg = write_config(dir.path(), &rc);
    let o = solve(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn grad_dump_matches_exact_gradient() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &fw_config("simplex-ball:0.2", 5));
    let o = bin(&["grad", "--config", &cfg, "--xi", "0.45,0.3,0.25"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["xi"], serde_json::json!([0.45, 0.3, 0.25]));
    let inst = spec("simplex-ball:0.2").build().unwrap();
    let xi = KernelParams::new(vec![0.45, 0.3, 0.25]);
    let (pi, _) = policy_oracle(&inst.mdp, &inst.basis, &xi, 0.1, 1e-8).unwrap();
    let g = robustmdp_core::exact_grad_xi(&inst.mdp, &inst.basis, &xi, pi.policy(), 0.1).unwrap();
    for (a, b) in g.iter().zip(v["exact"].as_array().unwrap()) {
        assert!((a - b.as_f64().unwrap()).abs() < 1e-6);
    }
    assert!(v["mlmc"].is_null());
}

#[test]
fn verify_only_selects_a_tag() {
    let o = bin(&["verify", "--only", "identity"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<String> = stdout(&o).lines().filter(|l| l.starts_with("criterion")).map(String::from).collect();
    let ids: Vec<u8> = lines.iter().map(|l| l[9..12].trim().parse().unwrap()).collect();
    assert_eq!(ids, vec![2, 3, 5, 6]);
    assert!(lines.iter().all(|l| l.contains("PASS")));
    let o = bin(&["verify", "--only", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
}
