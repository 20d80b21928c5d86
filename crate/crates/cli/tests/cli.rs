use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = r#"
seed = 11

[cohort]
size = 40

[ppo]
patients_per_pass = 10
warmup_patients = 0
patience = 3
max_passes = 2
hidden_layers = [16, 16]

[forging]
regularizer_coef = 0.1
action_focus = true

[distill]
cohort_size = 40
min_leaf = 5
"#;

fn wxrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wxrl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = wxrl(args);
    assert!(
        out.status.success(),
        "wxrl {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn setup(text: &str) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, text).unwrap();
    (dir, cfg)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn generate_is_reproducible_and_tagged() {
    let (dir, cfg) = setup(TINY);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&["generate", "-c", s(&cfg), "-o", s(&a)]);
    ok(&["generate", "-c", s(&cfg), "-o", s(&b)]);
    assert_eq!(read(&a), read(&b));
    let text = String::from_utf8(read(&a)).unwrap();
    assert!(text.contains("# config_hash="));
    assert!(text.contains("# seed=11"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 41);
}

#[test]
fn rebalance_flag_shifts_genotypes() {
    let (dir, cfg) = setup("seed = 3\n[cohort]\nsize = 4000\n");
    let natural = dir.path().join("n.csv");
    let rebalanced = dir.path().join("r.csv");
    ok(&["generate", "-c", s(&cfg), "-o", s(&natural)]);
    ok(&["generate", "-c", s(&cfg), "-o", s(&rebalanced), "--rebalance"]);
    let share = |p: &Path, g: &str| {
        let text = String::from_utf8(read(p)).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
        rows.iter().filter(|r| r.split(',').nth(9) == Some(g)).count() as f64 / rows.len() as f64
    };
    // *3/*3 is 0.02% naturally and at least 10% rebalanced.
    assert!(share(&natural, "*3/*3") < 0.01);
    let r = share(&rebalanced, "*3/*3");
    assert!((r - 0.1).abs() < 0.02, "{r}");
}

#[test]
fn config_errors_exit_two() {
    let (dir, cfg) = setup("seed = 1\n");
    let out = wxrl(&["train", "-c", s(&cfg), "--out-dir", s(&dir.path().join("t"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[ppo]"));

    let (dir, cfg) = setup("seed = 1\n[cohort]\nsizes = 3\n");
    let out = wxrl(&["generate", "-c", s(&cfg), "-o", s(&dir.path().join("c.csv"))]);
    assert_eq!(out.status.code(), Some(2));

    let (dir, cfg) = setup(TINY);
    let out = wxrl(&["evaluate", "-c", s(&cfg), "--policy", "nonesuch", "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn builtins_evaluate_without_checkpoint() {
    let (dir, cfg) = setup(TINY);
    let out = dir.path().join("eval");
    for p in ["aurora", "intermountain", "iwpc+fixed"] {
        let stdout = ok(&["evaluate", "-c", s(&cfg), "--policy", p, "--out-dir", s(&out)]).stdout;
        let md = String::from_utf8(stdout).unwrap();
        for row in ["| normal |", "| sensitive |", "| highly sensitive |", "| all |"] {
            assert!(md.contains(row), "{p}: {md}");
        }
        for ext in ["json", "summary.csv", "patients.csv", "md", "trajectories.csv"] {
            assert!(out.join(format!("{p}.{ext}")).exists(), "{p}.{ext}");
        }
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let (dir, cfg) = setup(TINY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["--threads", "1", "evaluate", "-c", s(&cfg), "--policy", "aurora", "--out-dir", s(&a)]);
    ok(&["--threads", "3", "evaluate", "-c", s(&cfg), "--policy", "aurora", "--out-dir", s(&b)]);
    for f in ["aurora.json", "aurora.patients.csv", "aurora.trajectories.csv"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
}

#[test]
fn compare_guards_mismatched_cohorts() {
    let (dir, cfg) = setup(TINY);
    let e = dir.path().join("e");
    ok(&["evaluate", "-c", s(&cfg), "--policy", "aurora", "--out-dir", s(&e)]);
    ok(&["evaluate", "-c", s(&cfg), "--policy", "intermountain", "--out-dir", s(&e)]);
    ok(&[
        "evaluate", "-c", s(&cfg), "--policy", "intermountain", "--name", "other",
        "--cohort-seed", "99", "--out-dir", s(&e),
    ]);
    let md = dir.path().join("cmp.md");
    let stdout = ok(&[
        "compare", s(&e.join("aurora.json")), s(&e.join("intermountain.json")), "-o", s(&md),
    ])
    .stdout;
    let text = String::from_utf8(stdout).unwrap();
    assert!(text.contains("| sensitivity | aurora | intermountain |"));
    assert!(text.contains("| Possible Actions | 8 | 11 |"));

    let out = wxrl(&["compare", s(&e.join("aurora.json")), s(&e.join("other.json")), "-o", s(&md)]);
    assert!(!out.status.success());
    ok(&["compare", s(&e.join("aurora.json")), s(&e.join("other.json")), "-o", s(&md), "--force"]);
}

#[test]
fn distill_a_table_teacher() {
    let (dir, cfg) = setup(TINY);
    let out = dir.path().join("d");
    ok(&["distill", "-c", s(&cfg), "--teacher", "iwpc+fixed", "--out-dir", s(&out)]);
    let eq = String::from_utf8(read(out.join("equivalence.txt"))).unwrap();
    assert!(eq.contains("result=pass"));
    let card = String::from_utf8(read(out.join("card.md"))).unwrap();
    assert!(card.contains("| INR Range | Dose Change |"));
    // A constant teacher distills to one row, and the table evaluates.
    ok(&["evaluate", "-c", s(&cfg), "--policy", s(&out.join("table.csv")), "--name", "distilled",
        "--out-dir", s(&out)]);
    let md = String::from_utf8(read(out.join("distilled.md"))).unwrap();
    assert!(md.contains("possible actions: 1"), "{md}");
}

#[test]
fn train_resume_evaluate_distill() {
    let (dir, cfg) = setup(TINY);
    let run1 = dir.path().join("run1");
    let run2 = dir.path().join("run2");
    ok(&["train", "-c", s(&cfg), "--out-dir", s(&run1)]);
    ok(&["train", "-c", s(&cfg), "--out-dir", s(&run2)]);
    for f in ["checkpoint.wxrl", "train_log.csv", "train_summary.json"] {
        assert_eq!(read(run1.join(f)), read(run2.join(f)), "{f}");
    }
    let log = String::from_utf8(read(run1.join("train_log.csv"))).unwrap();
    assert!(log.starts_with("# config_hash="));
    assert_eq!(log.lines().filter(|l| l.starts_with(|c: char| c.is_ascii_digit())).count(), 2);

    // Two more passes on top of the first two.
    let ck = run1.join("checkpoint.wxrl");
    ok(&["train", "-c", s(&cfg), "--out-dir", s(&run1), "--resume", s(&ck), "--max-passes", "4"]);
    let summary: serde_json::Value =
        serde_json::from_slice(&read(run1.join("train_summary.json"))).unwrap();
    assert_eq!(summary["passes"], 4);
    assert_eq!(summary["patients"], 40);
    let log = String::from_utf8(read(run1.join("train_log.csv"))).unwrap();
    let passes: Vec<&str> = log
        .lines()
        .filter(|l| l.starts_with(|c: char| c.is_ascii_digit()))
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(passes, ["0", "1", "2", "3"]);

    let e = dir.path().join("eval");
    let md = String::from_utf8(
        ok(&["evaluate", "-c", s(&cfg), "--policy", s(&ck), "--name", "ppo", "--out-dir", s(&e)]).stdout,
    )
    .unwrap();
    assert!(md.contains("# PTTR: ppo"));
    let d = dir.path().join("distill");
    ok(&["distill", "-c", s(&cfg), "--teacher", s(&ck), "--out-dir", s(&d)]);
    assert!(String::from_utf8(read(d.join("equivalence.txt"))).unwrap().contains("result=pass"));
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["full.toml", "reduced.toml", "smoke.toml"] {
        let cfg = warfarin_xrl::config::ExperimentConfig::load(&dir.join(name))
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(cfg.ppo().is_ok() && cfg.forging().is_ok(), "{name}");
    }
}
