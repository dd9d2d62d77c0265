use std::path::Path;
use std::process::{Command, Output};

fn neuroplan(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neuroplan"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Tiny corpus plus a briefly trained model in `dir`.
fn setup(dir: &Path) {
    ok(&neuroplan(
        &[
            "data",
            "gen",
            "--env",
            "simple2d",
            "--seed",
            "7",
            "--out",
            "d",
            "--train-workspaces",
            "2",
            "--demos-per-workspace",
            "4",
            "--seen-workspaces",
            "1",
            "--seen-problems",
            "3",
            "--unseen-workspaces",
            "1",
            "--unseen-problems",
            "2",
            "--expert-budget",
            "1500",
        ],
        dir,
    ));
    ok(&neuroplan(
        &[
            "train",
            "offline",
            "--data",
            "d",
            "--out",
            "m",
            "--epochs",
            "2",
            "--latent",
            "8",
            "--enet-hidden",
            "16",
            "--pnet-hidden",
            "32,32",
        ],
        dir,
    ));
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["--help"][..],
        &["bench", "--help"],
        &["train", "offline", "--help"],
    ] {
        let out = neuroplan(args, dir.path());
        assert_eq!(out.status.code(), Some(0), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    }
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["frobnicate"][..],
        &["bench", "--no-such-flag"],
        &["data", "gen", "--env", "mars", "--out", "x"],
        &["plan"],
        &["bench", "--data", "d", "--planner", "dijkstra"],
        &["data", "gen", "--out", "x", "--seed", "minus-one"],
    ] {
        let out = neuroplan(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(
            String::from_utf8_lossy(&out.stderr).contains("error"),
            "{args:?}"
        );
    }
}

#[test]
fn end_to_end_plan_bench_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    for split in ["train", "seen", "unseen"] {
        assert!(dir.join("d").join(split).join("manifest.json").exists());
    }

    ok(&neuroplan(
        &[
            "data", "problem", "--data", "d", "--index", "1", "--out", "p.json",
        ],
        dir,
    ));
    let out = neuroplan(
        &[
            "plan",
            "--problem",
            "p.json",
            "--model",
            "m",
            "--oracle",
            "--seed",
            "3",
        ],
        dir,
    );
    ok(&out);
    let rec: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rec["success"], true);
    assert_eq!(rec["planner"], "mpnet_hp");
    assert_eq!(rec["seed"], 3);
    for key in [
        "problem_id",
        "cost",
        "states",
        "pnet_calls",
        "oracle_called",
        "wall_ms",
    ] {
        assert!(rec.get(key).is_some(), "missing {key}");
    }

    let bench = |name: &str| {
        neuroplan(
            &[
                "bench",
                "--data",
                "d",
                "--split",
                "seen",
                "--planner",
                "mpnet_np,rrt_star",
                "--model",
                "m",
                "--iters",
                "1500",
                "--stop",
                "match",
                "--reference",
                "mpnet_np",
                "--no-time",
                "--seed",
                "5",
                "--out",
                name,
                "--records",
                "records.jsonl",
            ],
            dir,
        )
    };
    ok(&bench("a.csv"));
    ok(&bench("b.csv"));
    let a = std::fs::read(dir.join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.join("b.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("planner,env,split,success,t_mean,t_std,c_mean,c_std,n")
    );
    assert_eq!(lines.count(), 2);
    let records = std::fs::read_to_string(dir.join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 6);

    let out = neuroplan(&["report", "a.csv", "--format", "json"], dir);
    ok(&out);
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 2);
    assert_eq!(rows[0]["planner"], "mpnet_np");
}

#[test]
fn sealed_goal_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    ok(&neuroplan(
        &["data", "problem", "--data", "d", "--out", "p.json"],
        dir,
    ));
    let mut p: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("p.json")).unwrap()).unwrap();
    let wall = |c: [f64; 2], h: [f64; 2]| serde_json::json!({"center": c, "half_extents": h});
    p["workspace"]["obstacles"] = serde_json::json!([
        wall([12.5, 15.0], [0.5, 3.0]),
        wall([17.5, 15.0], [0.5, 3.0]),
        wall([15.0, 12.5], [3.0, 0.5]),
        wall([15.0, 17.5], [3.0, 0.5]),
    ]);
    p["start"] = serde_json::json!([-15.0, -15.0]);
    p["goal"] = serde_json::json!([15.0, 15.0]);
    std::fs::write(dir.join("sealed.json"), p.to_string()).unwrap();
    let out = neuroplan(
        &[
            "plan",
            "--problem",
            "sealed.json",
            "--model",
            "m",
            "--oracle",
            "--oracle-budget",
            "300",
        ],
        dir,
    );
    assert_eq!(out.status.code(), Some(1));
    let rec: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rec["success"], false);
    assert_eq!(rec["oracle_called"], true);
}
