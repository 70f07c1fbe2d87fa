use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clap::CommandFactory;
use mt_cli::Cli;

fn mt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mt"))
        .args(args)
        .env_remove(mt_cli::CONFIG_ENV)
        .output()
        .expect("spawn mt")
}

fn ok(args: &[&str]) -> String {
    let out = mt(args);
    assert!(
        out.status.success(),
        "mt {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn assert_same_tree(a: &Path, b: &Path) {
    let fa = files(a);
    assert_eq!(fa, files(b));
    assert!(!fa.is_empty());
    for f in &fa {
        assert!(
            std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap(),
            "{} differs",
            f.display()
        );
    }
}

/// Small corpus → dataset via the individual commands.
fn build_dataset(dir: &Path) -> PathBuf {
    let corpus = dir.join("corpus");
    ok(&["synth", "corpus", "--human", "4", "--robot", "3", "-o", s(&corpus)]);
    let cal = dir.join("cal.json");
    ok(&["calibrate", s(&corpus.join("calibration/session.json")), "-o", s(&cal)]);
    let (h, r, ds) = (dir.join("h"), dir.join("r"), dir.join("ds"));
    ok(&["ingest-human", s(&corpus.join("human")), "--cal", s(&cal), "-o", s(&h)]);
    ok(&[
        "ingest-robot",
        s(&corpus.join("robot")),
        "--extrinsic",
        s(&corpus.join("robot/extrinsic.json")),
        "-o",
        s(&r),
    ]);
    ok(&["merge", s(&h), s(&r), "-o", s(&ds)]);
    ds
}

#[test]
fn bundled_index_weights() {
    let out = ok(&["cotrain-weights", "--bundled"]);
    assert!(out.contains("alpha: 0.53066"), "{out}");

    let dir = tempfile::tempdir().unwrap();
    let idx = dir.path().join("index.json");
    ok(&["synth", "index", "-o", s(&idx)]);
    let out = ok(&["cotrain-weights", s(&idx)]);
    assert!(out.contains("alpha: 0.53066"), "{out}");
    assert!(out.contains("human episodes: 1705") && out.contains("robot episodes: 1508"));

    let out = ok(&["cotrain-weights", "--counts", "1705,1508"]);
    assert!(out.contains("alpha: 0.53066"), "{out}");
}

#[test]
fn abs_pose_switches_chunk_check_mode() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(dir.path());
    let (rel, abs) = (dir.path().join("rel"), dir.path().join("abs"));
    ok(&["transform", s(&ds), "-o", s(&rel)]);
    ok(&["transform", s(&ds), "--abs-pose", "-o", s(&abs)]);
    let out = ok(&["replay-check", s(&ds), "--chunk", s(&abs)]);
    assert!(out.contains("PASS: chunk reconstruction (absolute)"), "{out}");
    let out = ok(&["replay-check", s(&ds), "--chunk", s(&rel)]);
    assert!(out.contains("PASS: chunk reconstruction (relative)"), "{out}");
    let json = ok(&["replay-check", s(&ds), "--chunk", s(&abs), "--json"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["chunks"]["mode"], "absolute");
    assert_eq!(v["chunks"]["summary"]["faults"], 0);
}

#[test]
fn step_by_step_commands() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(dir.path());
    assert!(ok(&["validate", s(&ds)]).contains("ok: 7 episodes"));
    let stat = ok(&["stat", s(&ds)]);
    let human = stat.lines().find(|l| l.starts_with("human")).unwrap();
    assert_eq!(human.split_whitespace().nth(2), Some("4"), "{stat}");
    let robot = stat.lines().find(|l| l.starts_with("robot")).unwrap();
    assert_eq!(robot.split_whitespace().nth(2), Some("3"), "{stat}");
    assert!(ok(&["cotrain-weights", s(&ds)]).contains("alpha: 0.57143"));

    let samples = dir.path().join("samples");
    ok(&["transform", s(&ds), "-o", s(&samples)]);
    let (u, p) = (dir.path().join("u.json"), dir.path().join("p.json"));
    ok(&["normalize", s(&samples), "-o", s(&u)]);
    ok(&["normalize", s(&samples), "--per-domain", "-o", s(&p)]);
    let u: serde_json::Value = serde_json::from_slice(&std::fs::read(&u).unwrap()).unwrap();
    let p: serde_json::Value = serde_json::from_slice(&std::fs::read(&p).unwrap()).unwrap();
    assert_eq!(u["mode"], "unified");
    assert!(u["per_domain"].is_null());
    assert_eq!(p["mode"], "per_domain");
    assert!(p["per_domain"].is_object());
}

#[test]
fn replay_check_fails_on_tight_limits() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(dir.path());
    let limits = dir.path().join("tight.toml");
    std::fs::write(
        &limits,
        "workspace_min = [-0.6, -0.5, 0.1]\nworkspace_max = [0.6, 0.6, 1.2]\nvmax = 0.001\nwmax = 1.5\njmax = 2.0\n",
    )
    .unwrap();
    let out = mt(&["replay-check", s(&ds), "--limits", s(&limits)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("LinearSpeed"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("replay check failed"));

    // the same limits through the config directory
    let cfg = dir.path().join("cfg");
    std::fs::create_dir(&cfg).unwrap();
    std::fs::copy(&limits, cfg.join("replay_limits.toml")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mt"))
        .args(["replay-check", s(&ds)])
        .env(mt_cli::CONFIG_ENV, &cfg)
        .output()
        .unwrap();
    assert!(!out.status.success());
    ok(&["replay-check", s(&ds)]);
}

#[test]
fn pipeline_is_deterministic_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    ok(&["--seed", "3", "synth", "corpus", "-o", s(&corpus)]);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["--threads", "1", "pipeline", s(&corpus), "-o", s(&a)]);
    ok(&["--threads", "3", "pipeline", s(&corpus), "-o", s(&b)]);
    assert_same_tree(&a, &b);
    // rerunning into an existing output reproduces it
    ok(&["pipeline", s(&corpus), "-o", s(&b)]);
    assert_same_tree(&a, &b);

    let corpus2 = dir.path().join("corpus2");
    ok(&["--seed", "3", "synth", "corpus", "-o", s(&corpus2)]);
    assert_same_tree(&corpus, &corpus2);
}

#[test]
fn score_prints_success_rates() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("ann");
    std::fs::create_dir(&ann).unwrap();
    let mut text = String::from("task_id = \"close_laptop\"\n");
    for i in 0..10 {
        let _ = write!(text, "\n[[rollouts]]\nsuccess = {}\n", i < 8);
    }
    std::fs::write(ann.join("close_laptop.toml"), text).unwrap();
    let out = ok(&["score", "--annotations", s(&ann)]);
    let row = out.lines().find(|l| l.starts_with("close_laptop")).unwrap();
    assert!(row.contains("80.0"), "{out}");
    let json = ok(&["score", "--annotations", s(&ann), "--json"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["tasks"][0]["success_rate"], 0.8);

    let out = mt(&["score", "--rubrics", s(&dir.path().join("missing")), "--annotations", s(&ann)]);
    assert!(!out.status.success());
}

#[test]
fn toy_mechanism_runs_a_subset() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("mech.json");
    let out = ok(&[
        "--seed",
        "7",
        "toy-mechanism",
        "--subset",
        "h_bucket,r_pad",
        "--seeds",
        "1",
        "--json",
        s(&json),
    ]);
    assert!(out.contains("h_bucket + r_pad"), "{out}");
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    assert_eq!(v["seeds"][0], 7);
    let out = mt(&["toy-mechanism", "--subset", "no_such_task", "--seeds", "1"]);
    assert!(!out.status.success());
}

#[test]
fn bad_invocations_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    for args in [
        vec!["stat", "--bogus", "x"],
        vec!["frobnicate"],
        vec!["stat", s(&missing)],
        vec!["calibrate", s(&missing), "-o", "x.json"],
        vec!["transform", s(&missing), "-o", "x"],
        vec!["normalize", s(&missing), "-o", "x.json"],
        vec!["cotrain-weights", s(&missing)],
        vec!["cotrain-weights", "--counts", "12"],
        vec!["cotrain-weights"],
        vec!["transform", "ds", "--tp", "zero", "-o", "x"],
    ] {
        let out = mt(&args);
        assert!(!out.status.success(), "{args:?} succeeded");
        assert!(!out.stderr.is_empty(), "{args:?} printed no diagnostic");
    }
}

/// `(path, rendered --help)` for every subcommand, depth first.
fn help_pages() -> Vec<(Vec<String>, String)> {
    fn walk(cmd: &clap::Command, path: Vec<String>, out: &mut Vec<(Vec<String>, String)>) {
        for sub in cmd.get_subcommands().filter(|c| c.get_name() != "help") {
            let mut p = path.clone();
            p.push(sub.get_name().to_string());
            let mut args: Vec<&str> = p.iter().map(String::as_str).collect();
            args.push("--help");
            out.push((p.clone(), ok(&args)));
            walk(sub, p, out);
        }
    }
    let mut out = vec![(Vec::new(), ok(&["--help"]))];
    walk(&Cli::command(), Vec::new(), &mut out);
    out
}

#[test]
fn help_lists_every_flag() {
    let root = Cli::command();
    for (path, help) in help_pages() {
        let mut cmd = &root;
        for name in &path {
            cmd = cmd.find_subcommand(name).unwrap();
        }
        for arg in cmd.get_arguments() {
            if let Some(long) = arg.get_long() {
                assert!(help.contains(&format!("--{long}")), "mt {path:?} --help lacks --{long}");
            } else if arg.is_positional() {
                let name = arg.get_id().as_str().to_uppercase();
                assert!(help.contains(&name), "mt {path:?} --help lacks {name}");
            }
        }
    }
}

/// docs/cli.md holds every help page verbatim; regenerate with `MT_BLESS=1`.
#[test]
fn help_matches_reference() {
    let mut doc = String::from("# `mt` command reference\n\nGenerated from `mt <command> --help`.\n");
    for (path, help) in help_pages() {
        let title = if path.is_empty() { "mt".to_string() } else { format!("mt {}", path.join(" ")) };
        let _ = write!(doc, "\n## {title}\n\n```text\n{}```\n", help);
    }
    let file = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/cli.md");
    if std::env::var_os("MT_BLESS").is_some() {
        std::fs::create_dir_all(file.parent().unwrap()).unwrap();
        std::fs::write(&file, &doc).unwrap();
    }
    let reference = std::fs::read_to_string(&file).expect("docs/cli.md missing; run with MT_BLESS=1");
    assert!(reference == doc, "docs/cli.md is stale; rerun with MT_BLESS=1");
}
