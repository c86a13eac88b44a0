use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctxlm::cli::desk::split_perplexity;
use ctxlm::corpus::{load_corpus, Split};
use ctxlm::embedder::{Embedder, EmbedderConfig};
use ctxlm::model::ModelParameters;
use ctxlm::tokenizer::BpeModel;
use ctxlm::trainer::{ContextSource, Featurizer};
use serde_json::Value;
use tempfile::TempDir;

fn ctxlm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctxlm")).args(args).env_remove("CTXLM_SEED").output().unwrap()
}

fn ok(args: &[&str]) -> Value {
    let out = ctxlm(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap_or(Value::Null)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small corpus, tokenizer and one-epoch config in a fresh directory.
fn fixture() -> (TempDir, PathBuf, PathBuf, PathBuf) {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("c.jsonl");
    let bpe = dir.path().join("bpe.txt");
    let cfg = dir.path().join("cfg.json");
    ok(&["generate-synthetic", "--out", s(&corpus), "--speakers", "4", "--productions", "2", "--lines", "20", "--unseen", "3"]);
    ok(&["train-bpe", "--corpus", s(&corpus), "--out", s(&bpe), "--vocab-cap", "300"]);
    fs::write(&cfg, r#"{"train": {"max_epochs": 1}}"#).unwrap();
    (dir, corpus, bpe, cfg)
}

#[test]
fn exit_codes() {
    assert_eq!(ctxlm(&["--help"]).status.code(), Some(0));
    assert_eq!(ctxlm(&[]).status.code(), Some(1));
    assert_eq!(ctxlm(&["score-ppl", "--bogus"]).status.code(), Some(1));
    let missing = ctxlm(&["score-ppl", "--corpus", "/nonexistent.jsonl", "--bpe", "/x", "--model", "/y"]);
    assert_eq!(missing.status.code(), Some(2));

    let (dir, corpus, bpe, _) = fixture();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"train": {"learning_rate": -1.0}}"#).unwrap();
    let out = dir.path().join("m.ckpt");
    let base = ["finetune", "--corpus", s(&corpus), "--bpe", s(&bpe), "--kind", "base", "--out", s(&out)];
    let code = |cfg: &Path| ctxlm(&[&base[..], &["--config", s(cfg)]].concat()).status.code();
    assert_eq!(code(&bad), Some(1));
    fs::write(&bad, r#"{"train": {"learning_rat": 1.0}}"#).unwrap();
    assert_eq!(code(&bad), Some(1));
    fs::write(&bad, r#"{"train": {"learning_rate": 1e30, "grad_clip": null, "max_epochs": 1}}"#).unwrap();
    assert_eq!(code(&bad), Some(3));
}

#[test]
fn score_ppl_matches_library() {
    let (dir, corpus, bpe, cfg) = fixture();
    let model = dir.path().join("sp.ckpt");
    let keys = ["--keys", "speaker.*", "production.*"];
    let train = ["finetune", "--corpus", s(&corpus), "--bpe", s(&bpe), "--config", s(&cfg), "--out", s(&model)];
    ok(&[&train[..], &keys].concat());
    for f in ["sp.ckpt.manifest.json", "sp.ckpt.run.csv", "sp.ckpt.run.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let out = dir.path().join("ppl.json");
    let score = ["score-ppl", "--corpus", s(&corpus), "--bpe", s(&bpe), "--model", s(&model), "--out", s(&out)];
    let v = ok(&[&score[..], &keys].concat());
    let on_disk: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v, on_disk);

    let params = ModelParameters::load(&model).unwrap();
    let bpe_model = BpeModel::from_text(&fs::read_to_string(&bpe).unwrap()).unwrap();
    let corpus = load_corpus(&corpus).unwrap();
    let embedder = Embedder::new(EmbedderConfig::with_dim(params.arch.d_ctx)).unwrap();
    let feats = Featurizer::new(&bpe_model, &embedder, params.arch.max_seq_len);
    let mask = ctxlm::corpus::KeyRegistry::default().parse_mask(&["speaker.*".to_string(), "production.*".to_string()]).unwrap();
    let want = split_perplexity(&params, &corpus, &feats, ContextSource::Metadata, Some(&mask), Split::Test, None).unwrap();
    assert_eq!(v["ppl"].as_f64().unwrap(), want.ppl);
    assert_eq!(v["n_tokens"].as_u64().unwrap() as usize, want.n_tokens);
}

#[test]
fn smrr_from_score_matrix() {
    let dir = TempDir::new().unwrap();
    let m = dir.path().join("m.csv");
    fs::write(&m, "scorer,a,b,c\na,-1,-5,-2\nb,-3,-4,-2\nc,-2,-6,-1\n").unwrap();
    let v = ok(&["smrr", "--scores", s(&m)]);
    // every speaker's own scorer is strictly best in its column
    assert_eq!(v["smrr"].as_f64().unwrap(), 1.0);
    fs::write(&m, "scorer,a,b\na,-1,-1\nb,-1,-1\n").unwrap();
    let v = ok(&["score-smrr", "--scores", s(&m)]);
    assert_eq!(v["smrr"].as_f64().unwrap(), 0.5);
    assert_eq!(ctxlm(&["score-smrr"]).status.code(), Some(1));
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.clone(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn recipe_reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join("cfg.json"), r#"{"train": {"max_epochs": 1}}"#).unwrap();
    let recipe = serde_json::json!({
        "name": "tiny",
        "seeds": [1, 2],
        "stages": [
            {"args": ["generate-synthetic", "--out", "{dir}/c.jsonl", "--speakers", "4", "--productions", "2", "--lines", "20", "--unseen", "3"]},
            {"args": ["train-bpe", "--corpus", "{dir}/c.jsonl", "--out", "{dir}/bpe.txt", "--vocab-cap", "300"]},
            {"per_seed": true, "args": ["finetune", "--corpus", "{dir}/c.jsonl", "--bpe", "{dir}/bpe.txt", "--config", "{dir}/cfg.json",
                "--kind", "base", "--seed", "{seed}", "--out", "{seed_dir}/base.ckpt"]},
            {"per_seed": true, "args": ["score-ppl", "--corpus", "{dir}/c.jsonl", "--bpe", "{dir}/bpe.txt", "--model", "{seed_dir}/base.ckpt",
                "--out", "{seed_dir}/ppl.json"]}
        ],
        "arms": [{"name": "base", "file": "{seed_dir}/ppl.json", "field": "ppl"}],
        "comparisons": [{"a": "base", "b": "base", "direction": "a_less"}]
    });
    let path = dir.path().join("recipe.json");
    fs::write(&path, recipe.to_string()).unwrap();
    let summary = ok(&["run-recipe", "--recipe", s(&path), "--out-dir", s(&out)]);
    assert_eq!(summary["seeds"], serde_json::json!([1, 2]));
    assert!(summary["comparisons"][0]["note"].as_str().unwrap().contains("5 seeds"));
    assert!(out.join("base.csv").exists() && out.join("summary.json").exists());
    let first = snapshot(&out);
    ok(&["run-recipe", "--recipe", s(&path), "--out-dir", s(&out)]);
    assert_eq!(first, snapshot(&out));

    let env = Command::new(env!("CARGO_BIN_EXE_ctxlm"))
        .args(["run-recipe", "--recipe", s(&path), "--out-dir", s(&out)])
        .env("CTXLM_SEED", "2")
        .output()
        .unwrap();
    let v: Value = serde_json::from_slice(&env.stdout).unwrap();
    assert_eq!(v["seeds"], serde_json::json!([2]));
}

#[test]
fn recipe_with_missing_input_names_the_stage() {
    let dir = TempDir::new().unwrap();
    let recipe = serde_json::json!({
        "name": "broken",
        "seeds": [1],
        "stages": [{"args": ["train-bpe", "--corpus", "{dir}/nope.jsonl", "--out", "{dir}/bpe.txt"]}]
    });
    let path = dir.path().join("r.json");
    fs::write(&path, recipe.to_string()).unwrap();
    let out = ctxlm(&["run-recipe", "--recipe", s(&path), "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage 0"));
}
