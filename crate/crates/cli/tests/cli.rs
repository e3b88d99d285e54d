use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hybrid_avoid::policy_net::{PolicyNetConfig, QNetwork};

fn bin(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybrid-avoid")).args(args).env("HYBRID_AVOID_OUT", out).output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("hybrid-avoid-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn prints_and_reads_config() {
    let d = scratch("config");
    let o = bin(&d, &["config"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("[arbiter]"));
    std::fs::write(d.join("c.toml"), text.replace("threshold = 0.5", "threshold = 0.8")).unwrap();
    let o = bin(&d, &["--config", d.join("c.toml").to_str().unwrap(), "config"]);
    assert!(String::from_utf8(o.stdout).unwrap().contains("threshold = 0.8"));
    std::fs::write(d.join("bad.toml"), "[arbiter]\nthreshold = 2.0\n").unwrap();
    let o = bin(&d, &["--config", d.join("bad.toml").to_str().unwrap(), "config"]);
    assert!(!o.status.success());
}

#[test]
fn missing_checkpoint_fails_with_path() {
    let d = scratch("missing");
    let o = bin(&d, &["evaluate", "--controller", "hybrid-expert", "--episodes", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stderr).unwrap().contains("net.bin"));
    let o = bin(&d, &["evaluate", "--controller", "sideways"]);
    assert!(!o.status.success());
}

#[test]
fn evaluate_then_replay() {
    let d = scratch("replay");
    let q = QNetwork::new(PolicyNetConfig::default(), 3).unwrap();
    std::fs::create_dir_all(d.join("policy")).unwrap();
    q.params.save(&d.join("policy/net.bin")).unwrap();
    let o = bin(&d, &["evaluate", "--controller", "rl-only", "--episodes", "2", "--seed", "40"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let eval = d.join("evaluation");
    for f in ["results.csv", "report.json", "episodes-rl-only.csv", "outcomes.svg", "traces-rl-only.svg"] {
        assert!(eval.join(f).exists(), "{f}");
    }
    let rec = eval.join("records/rl-only-40.json");
    let o = bin(&d, &["replay", "--record", rec.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(String::from_utf8(o.stdout).unwrap().contains("PASS replay identical"));

    let text = std::fs::read_to_string(&rec).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["steps"][3]["action"] = serde_json::json!((v["steps"][3]["action"].as_u64().unwrap() + 1) % 4);
    let bad = d.join("tampered.json");
    std::fs::write(&bad, serde_json::to_string(&v).unwrap()).unwrap();
    let o = bin(&d, &["replay", "--record", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8(o.stdout).unwrap().contains("first divergence at step 4"));
}
