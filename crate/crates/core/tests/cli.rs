use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
seed = 3
[corpus]
enrolled = 4
stolen_train = 1
stolen_test = 1
samples_per_subject = 4
enroll_samples = 2
[train]
epochs = 2
cross_app_tokens = 2
[protocol]
n_attack = 300
";

fn colorvein(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_colorvein"))
        .current_dir(dir)
        .env("COLORVEIN_THREADS", "1")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = colorvein(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// synth -> train -> enroll -> verify -> evaluate -> attack in `dir`.
fn pipeline(dir: &Path) {
    fs::write(dir.join("tiny.ini"), TINY).unwrap();
    let base = ["--config", "tiny.ini", "--out", "o"];
    let run = |extra: &[&str]| ok(dir, &[&base[..], extra].concat());
    run(&["synth"]);
    run(&["train"]);
    run(&["enroll", "--identity", "subj0000", "o/corpus/subj0000_0.pgm", "o/corpus/subj0000_1.pgm"]);
    run(&["verify", "--identity", "subj0000", "--threshold", "-1", "o/corpus/subj0000_2.pgm"]);
    run(&["evaluate", "--scenario", "all"]);
    run(&["attack", "--kind", "false-accept"]);
    run(&["attack"]);
}

fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let name = p.strip_prefix(dir).unwrap().display().to_string();
                // stamps carry the wall-clock time
                if !name.contains("stamp_") {
                    out.insert(name, fs::read(&p).unwrap());
                }
            }
        }
    }
    out
}

#[test]
fn full_pipeline_is_byte_identical_across_reruns() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path());
    pipeline(b.path());
    let (fa, fb) = (artifacts(&a.path().join("o")), artifacts(&b.path().join("o")));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for name in fa.keys() {
        assert!(fa[name] == fb[name], "{name} differs between runs");
    }
    for report in ["report_normal.json", "report_linkability.json", "attack_brute_force.json", "model.ckpt"] {
        assert!(fa.contains_key(report), "missing {report}");
    }
    let normal: serde_json::Value = serde_json::from_slice(&fa["report_normal.json"]).unwrap();
    assert!(normal["eer"].is_number());
    let stamp: serde_json::Value =
        serde_json::from_slice(&fs::read(a.path().join("o/stamp_evaluate.json")).unwrap()).unwrap();
    for key in ["config_hash", "seed", "token_seed", "version"] {
        assert!(!stamp[key].is_null(), "stamp lacks {key}");
    }
}

#[test]
fn verify_and_revoke_contract() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.ini"), TINY).unwrap();
    let with = |extra: &[&'static str]| -> Vec<&'static str> { [&["--config", "tiny.ini", "--out", "o"][..], extra].concat() };
    ok(d, &with(&["synth"]));
    ok(d, &with(&["train"]));
    let enroll_imgs = ["o/corpus/subj0001_0.pgm", "o/corpus/subj0001_1.pgm"];
    ok(d, &with(&[&["enroll", "--identity", "subj0001"][..], &enroll_imgs[..]].concat()));

    let probe = "o/corpus/subj0001_2.pgm";
    let accept = colorvein(d, &with(&["verify", "--identity", "subj0001", "--threshold", "-1", probe]));
    assert_eq!(accept.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&accept.stdout).starts_with("ACCEPT "));
    let reject = colorvein(d, &with(&["verify", "--identity", "subj0001", "--threshold", "1.01", probe]));
    assert_eq!(reject.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&reject.stdout).starts_with("REJECT "));

    // enrolling the same identity twice is refused
    let again = colorvein(d, &with(&[&["enroll", "--identity", "subj0001"][..], &enroll_imgs[..]].concat()));
    assert_eq!(again.status.code(), Some(1));

    let line = ok(d, &with(&[&["revoke", "--identity", "subj0001", "--new-seed", "beef"][..], &enroll_imgs[..]].concat()));
    let record: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(record["identity_id"], "subj0001");
    let store = fs::read_to_string(d.join("o/store.jsonl")).unwrap();
    assert_eq!(store.lines().filter(|l| l.contains("\"kind\":\"tombstone\"")).count(), 1);
    // verification now runs under the reissued token
    let after = colorvein(d, &with(&["verify", "--identity", "subj0001", "--threshold", "-1", probe]));
    assert_eq!(after.status.code(), Some(0));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(colorvein(d, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(colorvein(d, &["--set", "pipeline.m=0", "synth"]).status.code(), Some(2));
    assert_eq!(colorvein(d, &["--set", "no.such.key=1", "synth"]).status.code(), Some(2));
    assert_eq!(colorvein(d, &["--scenario", "bogus", "synth"]).status.code(), Some(2));
    // runtime failure: no checkpoint to load
    let out = colorvein(d, &["--out", "o", "verify", "--identity", "x", "--threshold", "0.5", "missing.pgm"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn segment_and_colorize_write_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.ini"), TINY).unwrap();
    let base = ["--config", "tiny.ini", "--out", "o"];
    ok(d, &[&base[..], &["synth"]].concat());
    ok(d, &[&base[..], &["segment", "o/corpus/subj0002_0.pgm"]].concat());
    assert!(d.join("o/subj0002_0_mask.pgm").exists());
    let line = ok(d, &[&base[..], &["colorize", "--identity", "subj0002", "o/corpus/subj0002_0.pgm"]].concat());
    let summary: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert!(summary["max_hint_error"].as_f64().unwrap() <= 0.05, "{summary}");
    for f in ["subj0002_0.npz", "subj0002_0_preview.png", "subj0002_0_colorize.json"] {
        assert!(d.join("o").join(f).exists(), "missing {f}");
    }
}
