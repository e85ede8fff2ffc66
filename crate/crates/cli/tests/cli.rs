use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "data.n_train=40",
    "data.n_val=6",
    "data.n_test=8",
    "lm.d_model=16",
    "lm.n_layers=1",
    "lm.n_heads=2",
    "adapter.prefix_len=3",
    "style.epochs=1",
    "ppo.batch_size=8",
    "ppo.ppo_epochs=1",
    "ppo.max_epochs=2",
    "ppo.learning_rate=0.001",
    "finetune.epochs=1",
];

fn esper(args: &[&str], extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esper"))
        .args(args)
        .args(extra)
        .output()
        .unwrap()
}

fn ok(args: &[&str], extra: &[&str]) -> String {
    let out = esper(args, extra);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn prepared(dir: &Path, exec: &str) {
    let d = dir.to_str().unwrap();
    let cfg = dir.join("seed.toml");
    std::fs::write(&cfg, format!("[run]\nexec = \"{exec}\"\nseed = 3\n")).unwrap();
    ok(
        &[
            "gen-data",
            "--config",
            cfg.to_str().unwrap(),
            "--run-dir",
            d,
        ],
        TINY,
    );
    ok(&["cache-features", "--run-dir", d], &[]);
    ok(&["pretrain-style", "--run-dir", d], &[]);
    ok(&["train-rl", "--run-dir", d], &[]);
}

#[test]
fn config_dump_has_defaults_and_round_trips() {
    let text = ok(&["config"], &[]);
    assert!(text.contains("clip_epsilon = 0.2"));
    assert!(text.contains("pairing_gain = 50.0"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    ok(
        &["config", "--out", path.to_str().unwrap()],
        &["ppo.batch_size=32"],
    );
    let again = ok(&["config", "--config", path.to_str().unwrap()], &[]);
    assert!(again.contains("batch_size = 32"));
}

#[test]
fn invalid_config_exits_nonzero_with_field_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "").unwrap();
    let out = esper(
        &[
            "gen-data",
            "--config",
            cfg.to_str().unwrap(),
            "--run-dir",
            d,
        ],
        &["ppo.clip_epsilon=1.5", "data.n_train=0"],
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("ppo.clip_epsilon"), "{err}");
    assert!(err.contains("data.n_train"), "{err}");
    let out = esper(
        &[
            "gen-data",
            "--config",
            cfg.to_str().unwrap(),
            "--run-dir",
            d,
        ],
        &["ppo.no_such_key=1"],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
}

#[test]
fn pipeline_is_deterministic_and_reports_are_traceable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    prepared(a.path(), "parallel");
    prepared(b.path(), "sequential");
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(
        read(a.path(), "rl/metrics.jsonl"),
        read(b.path(), "rl/metrics.jsonl")
    );
    assert_eq!(
        read(a.path(), "rl/adapter_best.ckpt"),
        read(b.path(), "rl/adapter_best.ckpt")
    );

    let d = a.path().to_str().unwrap();
    ok(&["generate", "--run-dir", d, "--split", "test"], &[]);
    let tsv = String::from_utf8(read(a.path(), "generate/test.tsv")).unwrap();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines.len(), 8);
    for l in &lines {
        let (id, text) = l.split_once('\t').expect("id<TAB>text");
        id.parse::<u64>().unwrap();
        assert!(!text.contains('\t'));
    }

    ok(&["evaluate", "--run-dir", d, "--split", "test"], &[]);
    let first = read(a.path(), "reports/eval-test.json");
    ok(&["evaluate", "--run-dir", d, "--split", "test"], &[]);
    assert_eq!(first, read(a.path(), "reports/eval-test.json"));
    let report: serde_json::Value = serde_json::from_slice(&first).unwrap();
    let summary: serde_json::Value =
        serde_json::from_slice(&read(a.path(), "rl/summary.json")).unwrap();
    assert_eq!(report["checkpoint_hash"], summary["best_checkpoint_hash"]);
    let fp = String::from_utf8(read(a.path(), "backbone.fingerprint")).unwrap();
    assert_eq!(report["backbone_fingerprint"].as_str().unwrap(), fp.trim());
    assert_eq!(report["count"], 8);

    ok(&["rank", "--run-dir", d, "--split", "val"], &[]);
    ok(
        &[
            "finetune",
            "--run-dir",
            d,
            "--regime",
            "full",
            "--init",
            "rl",
        ],
        &[],
    );
    let ft = a.path().join("finetune-full-rl/adapter.ckpt");
    let out = ok(
        &[
            "evaluate",
            "--run-dir",
            d,
            "--split",
            "val",
            "--checkpoint",
            ft.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.contains("mean cosine"));
    let plots = ok(&["plot", "--run-dir", d], &[]);
    assert_eq!(plots.lines().count(), 4);
}

#[test]
fn checkpoint_from_another_backbone_is_refused() {
    let a = tempfile::tempdir().unwrap();
    prepared(a.path(), "parallel");
    let d = a.path().to_str().unwrap();
    ok(
        &[
            "finetune",
            "--run-dir",
            d,
            "--regime",
            "full",
            "--init",
            "random",
        ],
        &[],
    );
    // The full-finetune adapter expects the finetuned backbone; pairing it
    // with the pretrained one through a copy elsewhere must fail.
    let stray = a.path().join("stray.ckpt");
    std::fs::copy(a.path().join("finetune-full-random/adapter.ckpt"), &stray).unwrap();
    let out = esper(
        &[
            "generate",
            "--run-dir",
            d,
            "--checkpoint",
            stray.to_str().unwrap(),
        ],
        &[],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint"));
}
