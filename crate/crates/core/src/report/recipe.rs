// SPDX-License-Identifier: MIT OR Apache-2.0

//! TOML experiment recipes and the runner that turns one into a run
//! directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::plot::{self, BarSeries};
use super::{pairs_csv, sha256_hex, RunDir, RunManifest};
use crate::analysis::{copy_scatter, cumulative_logit_attribution_with, detect_heads, Contrast};
use crate::error::{Error, Result};
use crate::intervention::{
    block_content_gatherers_with, repair_experiment_with, BlockTarget, InterventionReport, InterventionSpec,
    RepairConfig, RepairVariant, CONTENT_GATHERERS,
};
use crate::model::{HeadRef, Model};
use crate::patching::{sweep_heads, ImportanceMatrix, Positions, Receivers, SweepConfig};
use crate::tasks::{eval_accuracy, eval_accuracy_with, write_dataset, DatasetSpec, PromptPair, Task};

fn default_sample_n() -> usize {
    100
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_end() -> String {
    "end".into()
}

fn default_all() -> String {
    "all".into()
}

/// One path-patching sweep over every head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRecipe {
    pub label: String,
    /// `logits` or `site:heads`, e.g. `q:15.14,16.15`.
    pub receivers: String,
    #[serde(default = "default_end")]
    pub sender_positions: String,
    #[serde(default = "default_all")]
    pub receiver_positions: String,
}

impl StageRecipe {
    pub fn sweep_config(&self, sample_n: usize) -> Result<SweepConfig> {
        Ok(SweepConfig {
            receivers: self.receivers.parse::<Receivers>()?,
            sender_positions: self.sender_positions.parse::<Positions>()?,
            receiver_positions: self.receiver_positions.parse::<Positions>()?,
            sample_n,
            stage_label: self.label.clone(),
        })
    }
}

/// A repair variant, or an explicit attention edit evaluated for accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionRecipe {
    pub name: String,
    #[serde(default)]
    pub variant: Option<String>,
    #[serde(default)]
    pub spec: Option<InterventionSpec>,
    /// Overrides of the repair head sets, as `layer.head` strings.
    #[serde(default)]
    pub inhibition: Option<Vec<String>>,
    #[serde(default)]
    pub negative_movers: Option<Vec<String>>,
    #[serde(default)]
    pub movers: Option<Vec<String>>,
    /// Stage whose grid the attribution deltas are correlated against.
    #[serde(default)]
    pub to_logits_stage: Option<String>,
    /// Stage used to pick between 13.13 and 13.14.
    #[serde(default)]
    pub resolve_with_stage: Option<String>,
    /// Also emit the cumulative attribution curve under the intervention.
    #[serde(default)]
    pub cumulative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockRecipe {
    /// `obj2`, `color-word`, `both` or `none`.
    pub targets: Vec<String>,
    #[serde(default)]
    pub heads: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectRecipe {
    #[serde(default = "DetectRecipe::default_n_seqs")]
    pub n_seqs: usize,
    #[serde(default = "DetectRecipe::default_seq_len")]
    pub seq_len: usize,
}

impl DetectRecipe {
    fn default_n_seqs() -> usize {
        50
    }

    fn default_seq_len() -> usize {
        64
    }
}

impl Default for DetectRecipe {
    fn default() -> Self {
        Self { n_seqs: Self::default_n_seqs(), seq_len: Self::default_seq_len() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScatterRecipe {
    pub head: String,
    pub positions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentRecipe {
    pub name: String,
    pub task: Task,
    #[serde(default)]
    pub model_dir: Option<PathBuf>,
    pub seed: u64,
    pub n_examples: usize,
    #[serde(default = "default_sample_n")]
    pub sample_n: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub eval: bool,
    #[serde(default)]
    pub cumulative: bool,
    #[serde(default)]
    pub stages: Vec<StageRecipe>,
    #[serde(default)]
    pub interventions: Vec<InterventionRecipe>,
    #[serde(default)]
    pub blocks: Option<BlockRecipe>,
    #[serde(default)]
    pub scatters: Vec<ScatterRecipe>,
    #[serde(default)]
    pub detect: Option<DetectRecipe>,
}

fn heads(list: &[String]) -> Result<Vec<HeadRef>> {
    list.iter().map(|h| h.parse()).collect()
}

fn file_stem(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' }).collect()
}

impl ExperimentRecipe {
    pub fn from_toml(text: &str) -> Result<Self> {
        let recipe: Self = toml::from_str(text).map_err(|e| Error::Recipe(e.to_string()))?;
        recipe.validate()?;
        Ok(recipe)
    }

    /// Parses the file and returns the recipe with the SHA-256 of its bytes.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text =
            String::from_utf8(bytes.clone()).map_err(|_| Error::Recipe(format!("{} is not UTF-8", path.display())))?;
        let recipe = Self::from_toml(&text).map_err(|e| Error::Recipe(format!("{}: {e}", path.display())))?;
        Ok((recipe, sha256_hex(&bytes)))
    }

    /// Checks everything that does not need the model.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Recipe(m));
        if self.name.is_empty() || file_stem(&self.name) != self.name {
            return bad(format!("name `{}` must be non-empty and use only [A-Za-z0-9_-]", self.name));
        }
        if self.n_examples == 0 {
            return bad("n_examples must be positive".into());
        }
        if !self.stages.is_empty() && !(1..=self.n_examples).contains(&self.sample_n) {
            return bad(format!("sample_n {} must be in 1..={}", self.sample_n, self.n_examples));
        }
        let mut labels = BTreeSet::new();
        for s in &self.stages {
            if !labels.insert(s.label.as_str()) {
                return bad(format!("duplicate stage `{}`", s.label));
            }
            s.sweep_config(self.sample_n)?;
        }
        let mut names = BTreeSet::new();
        for i in &self.interventions {
            if !names.insert(i.name.as_str()) {
                return bad(format!("duplicate intervention `{}`", i.name));
            }
            match (&i.variant, &i.spec) {
                (Some(v), None) => {
                    v.parse::<RepairVariant>()?;
                    if self.task != Task::ColoredObjects {
                        return bad(format!("repair variant in `{}` needs the colored-objects task", i.name));
                    }
                }
                (None, Some(_)) => {}
                _ => return bad(format!("intervention `{}` needs exactly one of variant or spec", i.name)),
            }
            for list in [&i.inhibition, &i.negative_movers, &i.movers].into_iter().flatten() {
                heads(list)?;
            }
            for stage in [&i.to_logits_stage, &i.resolve_with_stage].into_iter().flatten() {
                if !labels.contains(stage.as_str()) {
                    return bad(format!("intervention `{}` refers to unknown stage `{stage}`", i.name));
                }
            }
        }
        if let Some(b) = &self.blocks {
            if self.task != Task::ColoredObjects {
                return bad("content-gatherer blocking needs the colored-objects task".into());
            }
            for t in &b.targets {
                t.parse::<BlockTarget>()?;
            }
            if let Some(h) = &b.heads {
                heads(h)?;
            }
        }
        for s in &self.scatters {
            s.head.parse::<HeadRef>()?;
            if s.positions.is_empty() {
                return bad(format!("scatter for {} lists no positions", s.head));
            }
        }
        if let Some(d) = &self.detect {
            if d.n_seqs == 0 {
                return bad("detect.n_seqs must be positive".into());
            }
        }
        Ok(())
    }

    fn repair_config(
        &self,
        i: &InterventionRecipe,
        grids: &BTreeMap<String, ImportanceMatrix>,
    ) -> Result<RepairConfig> {
        let mut config = RepairConfig::default();
        if let Some(h) = &i.inhibition {
            config.inhibition = heads(h)?;
        }
        if let Some(h) = &i.negative_movers {
            config.negative_movers = heads(h)?;
        }
        if let Some(h) = &i.movers {
            config.movers = heads(h)?;
        }
        if let Some(stage) = &i.resolve_with_stage {
            config = config.resolve_inhibition(&grids[stage])?;
        }
        config.to_logits = i.to_logits_stage.as_ref().map(|s| grids[s].clone());
        Ok(config)
    }
}

pub(crate) fn emit_grid(run: &mut RunDir, operation: &str, grid: &ImportanceMatrix) -> Result<()> {
    let stem = file_stem(&grid.stage_label);
    run.write_data(operation, &format!("{stem}.csv"), grid.to_csv().as_bytes())?;
    run.figure(operation, &format!("{stem}.svg"), |p| plot::heatmap(p, grid, &grid.stage_label))?;
    Ok(())
}

pub(crate) fn emit_intervention(run: &mut RunDir, name: &str, report: &InterventionReport) -> Result<()> {
    let op = format!("intervene:{name}");
    run.write_json(&op, &format!("intervention-{name}.json"), report)?;
    let movers: Vec<String> = report.per_head_attention_delta.iter().map(|d| d.head.to_string()).collect();
    let pct = |v: f64| 100.0 * v;
    let series = vec![
        BarSeries {
            name: "correct color".into(),
            values: report.per_head_attention_delta.iter().map(|d| pct(d.correct_color)).collect(),
            errors: report.per_head_attention_delta.iter().map(|d| pct(d.correct_color_se)).collect(),
        },
        BarSeries {
            name: "wrong colors".into(),
            values: report.per_head_attention_delta.iter().map(|d| pct(d.wrong_color)).collect(),
            errors: report.per_head_attention_delta.iter().map(|d| pct(d.wrong_color_se)).collect(),
        },
    ];
    run.figure(&op, &format!("intervention-{name}-attention.svg"), |p| {
        plot::bars(p, &format!("{name}: mover attention change"), "attention change (pp)", &movers, &series)
    })?;
    let attribution: Vec<_> = report
        .per_head_attention_delta
        .iter()
        .map(|d| {
            let a = report
                .per_head_attribution_delta
                .iter()
                .find(|x| x.head == d.head)
                .expect("every head has an attribution delta");
            (a.delta, a.se)
        })
        .collect();
    let series = vec![BarSeries {
        name: "logit difference".into(),
        values: attribution.iter().map(|a| a.0).collect(),
        errors: attribution.iter().map(|a| a.1).collect(),
    }];
    run.figure(&op, &format!("intervention-{name}-attribution.svg"), |p| {
        plot::bars(p, &format!("{name}: mover attribution change"), "attribution change", &movers, &series)
    })?;
    Ok(())
}

pub(crate) fn emit_curve(
    run: &mut RunDir,
    operation: &str,
    stem: &str,
    curve: &crate::analysis::CumulativeCurve,
) -> Result<()> {
    run.write_json(operation, &format!("{stem}.json"), curve)?;
    run.figure(operation, &format!("{stem}.svg"), |p| {
        plot::curves(p, stem, "logit difference", &curve.labels, &curve.per_example, &curve.mean)
    })?;
    Ok(())
}

/// Generates the dataset, runs every requested operation and writes the
/// run directory under `output_dir`.
pub fn run_recipe(
    recipe: &ExperimentRecipe,
    recipe_sha256: &str,
    model: &Model,
    weights_sha256: Option<String>,
) -> Result<(PathBuf, RunManifest)> {
    recipe.validate()?;
    let tokenizer = model.tokenizer()?;
    let mut run = RunDir::create(&recipe.output_dir, &recipe.name, recipe.seed, recipe_sha256.to_string())?;
    run.set_weights_hash(weights_sha256);

    let dataset: Vec<PromptPair> = DatasetSpec::new(recipe.task, recipe.n_examples, recipe.seed).generate(tokenizer)?;
    write_dataset(run.data_path("dataset.jsonl"), &dataset, tokenizer)?;
    run.record_data("generate", "dataset.jsonl")?;

    if recipe.eval {
        let report = eval_accuracy(model, &dataset, None)?;
        run.write_json("eval", "eval.json", &report)?;
    }

    let mut grids = BTreeMap::new();
    for stage in &recipe.stages {
        log::info!("sweeping stage `{}`", stage.label);
        let grid = sweep_heads(model, &dataset, &stage.sweep_config(recipe.sample_n)?)?;
        emit_grid(&mut run, &format!("patch:{}", stage.label), &grid)?;
        grids.insert(stage.label.clone(), grid);
    }

    if recipe.cumulative {
        let curve = cumulative_logit_attribution_with(model, &dataset, Contrast::BestDistractor, |_| Ok(Vec::new()))?;
        emit_curve(&mut run, "cumulative", "cumulative", &curve)?;
    }

    for i in &recipe.interventions {
        log::info!("intervention `{}`", i.name);
        let spec = match (&i.variant, &i.spec) {
            (Some(v), _) => {
                let config = recipe.repair_config(i, &grids)?;
                let report = repair_experiment_with(model, &dataset, v.parse()?, &config)?;
                emit_intervention(&mut run, &i.name, &report)?;
                config.spec(v.parse()?)
            }
            (None, Some(spec)) => {
                spec.validate(model.config())?;
                let before = eval_accuracy(model, &dataset, None)?.accuracy;
                let after = eval_accuracy_with(model, &dataset, None, |p| spec.edits(p))?.accuracy;
                let csv = pairs_csv(("condition", "accuracy"), [("before", before), ("after", after)]);
                run.write_data(
                    &format!("intervene:{}", i.name),
                    &format!("intervention-{}.csv", i.name),
                    csv.as_bytes(),
                )?;
                spec.clone()
            }
            (None, None) => unreachable!("validated"),
        };
        if i.cumulative {
            let curve =
                cumulative_logit_attribution_with(model, &dataset, Contrast::BestDistractor, |p| spec.edits(p))?;
            emit_curve(&mut run, &format!("intervene:{}", i.name), &format!("cumulative-{}", i.name), &curve)?;
        }
    }

    if let Some(b) = &recipe.blocks {
        let heads = match &b.heads {
            Some(h) => heads(h)?,
            None => CONTENT_GATHERERS.to_vec(),
        };
        let mut rows = Vec::new();
        for t in &b.targets {
            rows.push((t.clone(), block_content_gatherers_with(model, &dataset, t.parse()?, &heads)?));
        }
        let csv = pairs_csv(("targets", "accuracy"), rows.iter().map(|(t, a)| (t.as_str(), *a)));
        run.write_data("block", "block.csv", csv.as_bytes())?;
        let categories: Vec<String> = rows.iter().map(|r| r.0.clone()).collect();
        let series = vec![BarSeries {
            name: "accuracy".into(),
            values: rows.iter().map(|r| r.1).collect(),
            errors: vec![0.0; rows.len()],
        }];
        run.figure("block", "block.svg", |p| {
            plot::bars(p, "accuracy with content gatherers blocked", "accuracy", &categories, &series)
        })?;
    }

    for s in &recipe.scatters {
        let head: HeadRef = s.head.parse()?;
        let positions: Vec<&str> = s.positions.iter().map(String::as_str).collect();
        let scatter = copy_scatter(model, &dataset, head, &positions)?;
        let op = format!("scatter:{head}");
        let stem = format!("copy-{}", file_stem(&head.to_string()));
        run.write_data(&op, &format!("{stem}.csv"), scatter.to_csv().as_bytes())?;
        let points: Vec<(f64, f64, String)> =
            scatter.points.iter().map(|p| (p.attention, p.projection, p.label.clone())).collect();
        run.figure(&op, &format!("{stem}.svg"), |p| {
            plot::scatter(p, &format!("head {head}"), "attention", "projection onto token", &points)
        })?;
    }

    if let Some(d) = &recipe.detect {
        let scores = detect_heads(model, recipe.seed, d.n_seqs, d.seq_len)?;
        for (label, grid) in [("duplicate", &scores.duplicate), ("induction", &scores.induction)] {
            emit_grid(&mut run, "detect", &ImportanceMatrix::new(grid.clone(), format!("detect-{label}")))?;
        }
    }

    run.finish()
}
