//! Multi-seed experiment recipes built from subcommand invocations.
//!
//! Stage arguments may use `{dir}` (the output directory), `{seed}` and
//! `{seed_dir}` (`{dir}/seed-{seed}`). Shared stages run once; per-seed
//! stages run for every seed. Arms name a JSON field in a per-seed output
//! file; comparisons run the paired t-test across seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::metrics::{compare_runs, Direction, RunComparison, REQUIRED_RUNS};

use super::CliError;

pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
pub const SEED_ENV: &str = "CTXLM_SEED";
pub const BUILTIN_RECIPES: [&str; 3] = ["rqa-synthetic", "rqb-synthetic", "rqc-synthetic"];

/// Flags whose value must name an existing file when a stage starts.
const INPUT_FLAGS: &[&str] = &[
    "--in", "--corpus", "--bpe", "--init", "--model", "--ctx-model", "--base-model", "--model-a", "--model-b",
    "--scores", "--hypotheses", "--config",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub args: Vec<String>,
    #[serde(default)]
    pub per_seed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub name: String,
    /// Per-seed JSON file, usually under `{seed_dir}`.
    pub file: String,
    pub field: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentRecipe {
    pub name: String,
    pub stages: Vec<Stage>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub arms: Vec<ArmSpec>,
    #[serde(default)]
    pub comparisons: Vec<Comparison>,
}

impl ExperimentRecipe {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.stages.is_empty() || self.stages.iter().any(|s| s.args.is_empty()) {
            return Err(CliError::Usage(format!("recipe {}: every stage needs a subcommand", self.name)));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Usage(format!("recipe {}: no seeds", self.name)));
        }
        for c in &self.comparisons {
            for arm in [&c.a, &c.b] {
                if !self.arms.iter().any(|a| &a.name == arm) {
                    return Err(CliError::Usage(format!("recipe {}: comparison names unknown arm {arm}", self.name)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmSummary {
    pub values: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonSummary {
    pub a: String,
    pub b: String,
    pub direction: Direction,
    pub result: Option<RunComparison>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecipeSummary {
    pub recipe: String,
    pub seeds: Vec<u64>,
    pub arms: BTreeMap<String, ArmSummary>,
    pub comparisons: Vec<ComparisonSummary>,
}

/// Seeds from `CTXLM_SEED` (one seed or a comma-separated list).
pub fn seeds_from_env() -> Result<Option<Vec<u64>>, CliError> {
    match std::env::var(SEED_ENV) {
        Err(_) => Ok(None),
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => v
            .split(',')
            .map(|s| s.trim().parse::<u64>().map_err(|_| CliError::Usage(format!("{SEED_ENV}: bad seed \"{s}\""))))
            .collect::<Result<Vec<_>, _>>()
            .map(Some),
    }
}

fn shared(args: &[&str]) -> Stage {
    Stage { args: args.iter().map(|s| s.to_string()).collect(), per_seed: false }
}

fn per_seed(args: &[&str]) -> Stage {
    Stage { args: args.iter().map(|s| s.to_string()).collect(), per_seed: true }
}

const CORPUS: &str = "{dir}/corpus.jsonl";
const BPE: &str = "{dir}/bpe.txt";

fn data_stages() -> Vec<Stage> {
    vec![
        shared(&["generate-synthetic", "--out", CORPUS, "--seed", "7", "--marker-strength", "0.5"]),
        shared(&["train-bpe", "--corpus", CORPUS, "--out", BPE, "--vocab-cap", "600"]),
    ]
}

fn arm_keys(arm: &str) -> &'static [&'static str] {
    match arm {
        "lmcue_s" => &["speaker.*"],
        "lmcue_p" => &["production.*"],
        "lmcue_sp" => &["speaker.*", "production.*"],
        _ => &[],
    }
}

fn train_stage(arm: &str) -> Stage {
    let out = format!("{{seed_dir}}/{arm}.ckpt");
    let mut args = vec!["finetune", "--corpus", CORPUS, "--bpe", BPE, "--seed", "{seed}", "--out", &out];
    if arm == "base_lm" {
        args.extend(["--kind", "base"]);
    } else {
        args.push("--keys");
        args.extend(arm_keys(arm));
    }
    per_seed(&args)
}

fn ppl_stage(arm: &str, split: &str) -> Stage {
    let model = format!("{{seed_dir}}/{arm}.ckpt");
    let out = format!("{{seed_dir}}/{arm}.{split}.ppl.json");
    let mut args = vec!["score-ppl", "--corpus", CORPUS, "--bpe", BPE, "--model", &model, "--split", split, "--out", &out];
    if !arm_keys(arm).is_empty() {
        args.push("--keys");
        args.extend(arm_keys(arm));
    }
    per_seed(&args)
}

fn arm(name: &str, file: &str, field: &str) -> ArmSpec {
    ArmSpec { name: name.into(), file: file.into(), field: field.into() }
}

fn less_than_base(a: &str, b: &str) -> Comparison {
    Comparison { a: a.into(), b: b.into(), direction: Direction::ALess }
}

/// The built-in desk-scale recipes.
pub fn builtin_recipe(name: &str) -> Option<ExperimentRecipe> {
    let seeds = DEFAULT_SEEDS.to_vec();
    let mut stages = data_stages();
    match name {
        "rqa-synthetic" => {
            let arms = ["base_lm", "lmcue_s", "lmcue_p", "lmcue_sp"];
            for a in arms {
                stages.push(train_stage(a));
                stages.push(ppl_stage(a, "test"));
            }
            Some(ExperimentRecipe {
                name: name.into(),
                stages,
                seeds,
                arms: arms.iter().map(|a| arm(a, &format!("{{seed_dir}}/{a}.test.ppl.json"), "ppl")).collect(),
                comparisons: arms[1..].iter().map(|a| less_than_base(a, "base_lm")).collect(),
            })
        }
        "rqb-synthetic" => {
            let mut arms = Vec::new();
            for a in ["base_lm", "lmcue_sp"] {
                stages.push(train_stage(a));
                stages.push(ppl_stage(a, "test_unseen"));
                let model = format!("{{seed_dir}}/{a}.ckpt");
                let out = format!("{{seed_dir}}/{a}.smrr.json");
                let matrix = format!("{{seed_dir}}/{a}.scores.csv");
                let mut args = vec![
                    "score-smrr", "--corpus", CORPUS, "--bpe", BPE, "--model", &model, "--split", "test_unseen",
                    "--matrix", &matrix, "--out", &out,
                ];
                if !arm_keys(a).is_empty() {
                    args.push("--keys");
                    args.extend(arm_keys(a));
                }
                stages.push(per_seed(&args));
                arms.push(arm(&format!("{a}_ppl"), &format!("{{seed_dir}}/{a}.test_unseen.ppl.json"), "ppl"));
                arms.push(arm(&format!("{a}_smrr"), &out, "smrr"));
            }
            Some(ExperimentRecipe {
                name: name.into(),
                stages,
                seeds,
                arms,
                comparisons: vec![
                    less_than_base("lmcue_sp_ppl", "base_lm_ppl"),
                    Comparison { a: "lmcue_sp_smrr".into(), b: "base_lm_smrr".into(), direction: Direction::AGreater },
                ],
            })
        }
        "rqc-synthetic" => {
            stages.push(train_stage("base_lm"));
            stages.push(train_stage("lmcue_sp"));
            for (label, permute) in [("matched", None), ("permuted", Some("{seed}"))] {
                let out = format!("{{seed_dir}}/pmi_{label}.json");
                let segs = format!("{{seed_dir}}/pmi_{label}.csv");
                let mut args = vec![
                    "score-pmi", "--corpus", CORPUS, "--bpe", BPE, "--ctx-model", "{seed_dir}/lmcue_sp.ckpt",
                    "--base-model", "{seed_dir}/base_lm.ckpt", "--split", "test", "--keys", "speaker.*",
                    "production.*", "--out", &out, "--segments", &segs,
                ];
                if let Some(p) = permute {
                    args.extend(["--permute-seed", p]);
                }
                stages.push(per_seed(&args));
            }
            Some(ExperimentRecipe {
                name: name.into(),
                stages,
                seeds,
                arms: vec![
                    arm("pmi_matched", "{seed_dir}/pmi_matched.json", "macro"),
                    arm("pmi_permuted", "{seed_dir}/pmi_permuted.json", "macro"),
                ],
                comparisons: vec![Comparison {
                    a: "pmi_matched".into(),
                    b: "pmi_permuted".into(),
                    direction: Direction::AGreater,
                }],
            })
        }
        _ => None,
    }
}

fn expand(template: &str, dir: &Path, seed: Option<u64>) -> String {
    let mut s = template.replace("{dir}", &dir.display().to_string());
    if let Some(seed) = seed {
        s = s
            .replace("{seed_dir}", &dir.join(format!("seed-{seed}")).display().to_string())
            .replace("{seed}", &seed.to_string());
    }
    s
}

fn check_inputs(args: &[String]) -> Result<(), CliError> {
    for w in args.windows(2) {
        if INPUT_FLAGS.contains(&w[0].as_str()) && !Path::new(&w[1]).exists() {
            return Err(CliError::Data(format!("input {} for {} does not exist", w[1], w[0])));
        }
    }
    Ok(())
}

fn read_field(path: &str, field: &str) -> Result<f64, CliError> {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    v.get(field)
        .and_then(serde_json::Value::as_f64)
        .ok_or_else(|| CliError::Data(format!("{path} has no numeric field \"{field}\"")))
}

/// Runs every stage (shared ones once, per-seed ones for each seed in
/// order), then aggregates arms and comparisons into `summary.json` and
/// one `<arm>.csv` per arm.
pub fn run_recipe(recipe: &ExperimentRecipe, out_dir: &Path) -> Result<RecipeSummary, CliError> {
    recipe.validate()?;
    fs::create_dir_all(out_dir)?;
    for &seed in &recipe.seeds {
        fs::create_dir_all(out_dir.join(format!("seed-{seed}")))?;
    }
    for (i, stage) in recipe.stages.iter().enumerate() {
        let seeds: Vec<Option<u64>> =
            if stage.per_seed { recipe.seeds.iter().map(|&s| Some(s)).collect() } else { vec![None] };
        for seed in seeds {
            let args: Vec<String> = stage.args.iter().map(|a| expand(a, out_dir, seed)).collect();
            log::info!("stage {i}: {}", args.join(" "));
            let fail = |e: CliError| CliError::StageFailed { stage: i, source: Box::new(e) };
            check_inputs(&args).map_err(fail)?;
            super::run_to(std::iter::once("ctxlm".to_string()).chain(args), &mut std::io::sink()).map_err(fail)?;
        }
    }

    let mut arms = BTreeMap::new();
    for a in &recipe.arms {
        let mut csv = String::from("seed,value\n");
        let mut values = Vec::new();
        for &seed in &recipe.seeds {
            let v = read_field(&expand(&a.file, out_dir, Some(seed)), &a.field)?;
            writeln!(csv, "{seed},{v}").expect("writing to a String");
            values.push(v);
        }
        fs::write(out_dir.join(format!("{}.csv", a.name)), csv)?;
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        arms.insert(a.name.clone(), ArmSummary { values, mean });
    }
    let mut comparisons = Vec::new();
    for c in &recipe.comparisons {
        let (va, vb) = (&arms[&c.a].values, &arms[&c.b].values);
        let (result, note) = if va.len() == REQUIRED_RUNS {
            (Some(compare_runs(va, vb, c.direction)?), None)
        } else {
            (None, Some(format!("skipped: the t-test needs {REQUIRED_RUNS} seeds, got {}", va.len())))
        };
        comparisons.push(ComparisonSummary { a: c.a.clone(), b: c.b.clone(), direction: c.direction, result, note });
    }
    let summary = RecipeSummary { recipe: recipe.name.clone(), seeds: recipe.seeds.clone(), arms, comparisons };
    fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}
