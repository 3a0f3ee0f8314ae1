use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cstag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cstag"))
        .args(args)
        .args(["--log-level", "warn"])
        .output()
        .expect("binary runs")
}

fn synth(dir: &Path) {
    let out = cstag(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--set",
        "train_sentences=40",
        "--set",
        "dev_sentences=10",
        "--set",
        "test_sentences=10",
        "--set",
        "raw_mono_sentences=60",
        "--set",
        "raw_cs_sentences=60",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

const CONFIG: &str = r#"
[experiment]
name = "cli"
output_dir = "out"
condition = "cfm"
seeds = [1]

[data]
train = "train.tsv"
dev = "dev.tsv"
test = "test.tsv"
raw_lang1 = "raw_lang1.txt"
raw_lang2 = "raw_lang2.txt"

[embedding]
dim = 8
epochs = 1
bucket_count = 500

[tagger]
hidden = 6

[schedule]
max_epochs = 2
patience = 1
"#;

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let config = dir.path().join("exp.toml");
    fs::write(&config, CONFIG).unwrap();
    let out = cstag(&["run", "--config", config.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = dir.path().join("out");
    assert!(run_dir.join("manifest.json").exists());
    let out = cstag(&["report", run_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("bilstm_crf"));
    assert!(table.contains('*'));
}

#[test]
fn component_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let ok = |args: &[&str]| {
        let out = cstag(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    let stats = ok(&["prep", &p("train.tsv")]);
    assert!(stats.contains("sentences\t40"));
    let emb = ["--set", "dim=8", "--set", "epochs=1", "--set", "bucket_count=300"];
    for (lang, file) in [("l1", "raw_lang1.txt"), ("l2", "raw_lang2.txt")] {
        let out = format!("{}.csemb", p(lang));
        ok(&[&["embed", "--kind", "mono", &p(file), "--out", &out][..], &emb[..]].concat());
    }
    ok(&[
        "align",
        "--src",
        &p("l1.csemb"),
        "--tgt",
        &p("l2.csemb"),
        "--dictionary",
        &p("dictionary.tsv"),
        "--out",
        &p("w.csprj"),
        "--merged",
        &p("merged.csemb"),
    ]);
    ok(&[
        "train", "--train", &p("train.tsv"), "--dev", &p("dev.tsv"), "--embeddings", &p("merged.csemb"), "--hidden", "6",
        "--max-epochs", "2", "--patience", "1", "--out", &p("model.cstag"),
    ]);
    let report = ok(&["eval", "--model", &p("model.cstag"), "--test", &p("test.tsv"), "--pred", &p("pred.tsv")]);
    assert!(report.contains("pos_accuracy") || report.to_lowercase().contains("accuracy"));
    assert!(Path::new(&p("pred.tsv")).exists());
}

#[test]
fn exit_codes_follow_error_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    fs::write(&config, CONFIG.replace("seeds = [1]", "seeds = [1, 1]")).unwrap();
    assert_eq!(cstag(&["run", "--config", config.to_str().unwrap()]).status.code(), Some(2));
    fs::write(&config, CONFIG).unwrap();
    // valid config, but the corpora do not exist
    assert_eq!(cstag(&["run", "--config", config.to_str().unwrap()]).status.code(), Some(3));
    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "1\tword\tNOTATAG\tLANG1\n").unwrap();
    assert_eq!(cstag(&["prep", bad.to_str().unwrap()]).status.code(), Some(3));
}
