use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use ratnet_core::datagen::{features_of, load_benchmark, sha256_hex, MANIFEST_FILE};
use ratnet_core::model::{embed, from_bytes};

fn ratnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ratnet"))
        .args(args)
        .arg("--quiet")
        .output()
        .expect("spawn ratnet")
}

fn ok(args: &[&str]) {
    let out = ratnet(args);
    assert!(
        out.status.success(),
        "`ratnet {}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

/// Default benchmark plus a short pretraining run, shared by all tests.
struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn bench(&self) -> PathBuf {
        self.root.join("bench")
    }

    fn ckpt(&self, name: &str) -> PathBuf {
        self.root.join("pre").join(name)
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        ok(&["gen", "--out", s(&root.join("bench")), "--seed", "42"]);
        let cfg = write_config(
            &root,
            "pre.toml",
            &format!("data = {:?}\n[train]\nepochs = 3\n", root.join("bench")),
        );
        ok(&["pretrain", "--config", s(&cfg), "--out", s(&root.join("pre"))]);
        Fixture { _tmp: tmp, root }
    })
}

fn golden(name: &str) -> String {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(p).unwrap().trim().to_string()
}

#[test]
fn unknown_config_key_exits_2_and_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "data = \"x\"\nbogus = 1\n");
    let out = ratnet(&["pretrain", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn missing_config_and_bad_usage_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ratnet(&["pretrain", "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(ratnet(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn missing_checkpoint_exits_1_and_names_path() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere.ckpt");
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        &format!("data = {:?}\ncheckpoint = {:?}\n", f.bench(), missing),
    );
    let out = ratnet(&["zeroshot", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
}

#[test]
fn fewshot_writes_100_rows_per_shot_count() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        &format!("data = {:?}\ncheckpoint = {:?}\n", f.bench(), f.ckpt("teacher.ckpt")),
    );
    let out = tmp.path().join("fs");
    ok(&["fewshot", "--config", s(&cfg), "--out", s(&out)]);
    let runs = std::fs::read_to_string(out.join("runs.csv")).unwrap();
    let mut lines = runs.lines();
    assert_eq!(lines.next(), Some("group,run,auc,f1,ap,mcc"));
    let rows: Vec<&str> = lines.collect();
    for k in ["k1", "k3", "k5"] {
        assert_eq!(rows.iter().filter(|r| r.starts_with(&format!("{k},"))).count(), 100, "{k}");
    }
    assert!(out.join("run.toml").exists());
}

#[test]
fn report_pvalues_only_across_runs() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        &format!("data = {:?}\ncheckpoint = {:?}\nruns = 10\n", f.bench(), f.ckpt("teacher.ckpt")),
    );
    let fs = tmp.path().join("fs");
    ok(&["fewshot", "--config", s(&cfg), "--out", s(&fs)]);

    let single = tmp.path().join("single");
    ok(&["report", s(&fs), "--out", s(&single)]);
    assert!(single.join("summary.csv").exists());
    assert!(!single.join("pvalues.csv").exists());

    let twice = tmp.path().join("twice");
    ok(&["report", s(&fs), s(&fs), "--out", s(&twice)]);
    let pv = std::fs::read_to_string(twice.join("pvalues.csv")).unwrap();
    let rows: Vec<&str> = pv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3 * 4, "three groups, four metrics");
    for r in rows {
        let p: f64 = r.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(p, 1.0, "{r}");
    }
}

#[test]
fn report_rejects_incompatible_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("r");
    std::fs::create_dir(&run).unwrap();
    std::fs::write(run.join("runs.csv"), "group,run,auc,precision\nx,0,0.5,0.5\n").unwrap();
    let out = ratnet(&["report", s(&run), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("precision") && err.contains("mcc"), "{err}");
}

#[test]
fn export_matches_embed_bitwise() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        &format!("data = {:?}\ncheckpoint = {:?}\n", f.bench(), f.ckpt("teacher.ckpt")),
    );
    let out = tmp.path().join("exp");
    ok(&["export-embeddings", "--config", s(&cfg), "--out", s(&out)]);
    let text = std::fs::read_to_string(out.join("embeddings.tsv")).unwrap();

    let data = load_benchmark(&f.bench()).unwrap();
    let state = from_bytes(&std::fs::read(f.ckpt("teacher.ckpt")).unwrap()).unwrap();
    let n_samples: usize = data.tasks.iter().map(|t| t.test.len()).sum();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + n_samples + state.kb.len());
    assert_eq!(lines[0].split('\t').count(), 3 + state.config.knowledge_dim);

    let mut rows = lines[1..].iter();
    for ds in &data.tasks {
        let emb = embed(&state, &features_of(&ds.test)).unwrap();
        for (i, sample) in ds.test.iter().enumerate() {
            let cols: Vec<&str> = rows.next().unwrap().split('\t').collect();
            assert_eq!(cols[0], ds.task_id);
            assert_eq!(cols[1], sample.concept.to_string());
            assert_eq!(cols[2], "sample");
            let vals: Vec<f64> = cols[3..].iter().map(|v| v.parse().unwrap()).collect();
            assert_eq!(vals, emb.row(i));
        }
    }
    for id in state.kb.task_ids() {
        let cols: Vec<&str> = rows.next().unwrap().split('\t').collect();
        assert_eq!((cols[0], cols[1], cols[2]), (id.as_str(), "", "prior"));
    }
}

#[test]
fn golden_gen_manifest() {
    let f = fixture();
    let bytes = std::fs::read(f.bench().join(MANIFEST_FILE)).unwrap();
    assert_eq!(sha256_hex(&bytes), golden("gen_manifest.sha256"));
}

#[test]
fn golden_embeddings_export() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        &format!("data = {:?}\ncheckpoint = {:?}\n", f.bench(), f.ckpt("student.ckpt")),
    );
    let out = tmp.path().join("exp");
    ok(&["export-embeddings", "--config", s(&cfg), "--out", s(&out)]);
    let bytes = std::fs::read(out.join("embeddings.tsv")).unwrap();
    assert_eq!(sha256_hex(&bytes), golden("embeddings.sha256"));
}
