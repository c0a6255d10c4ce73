//! Experiment orchestration: stability matrices over soft-prompt
//! initializations and hard templates, the ablation grid and the
//! prompt-length sweep, with CSV reporting.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::accuracy_stats;
use crate::model::{Backbone, ModelConfig, ModelState, SoftInit, Variant};
use crate::rng::derive_seed;
use crate::taskgen::{build_templates, generate_task, FewShotTask, HardTemplate};
use crate::trainer::{train, EncodedTask, TrainConfig};

pub const LIBRARY_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskParams {
    pub num_classes: usize,
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for TaskParams {
    fn default() -> Self {
        TaskParams {
            num_classes: 2,
            noise_level: 0.15,
            seed: 1,
        }
    }
}

/// Lists whose cross product defines the cells of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub task: TaskParams,
    pub variants: Vec<Variant>,
    pub strategies: Vec<SoftInit>,
    pub template_ids: Vec<usize>,
    pub template_style_seed: u64,
    pub prompt_lengths: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Root of every per-run seed.
    pub master_seed: u64,
    pub out_dir: PathBuf,
    pub workers: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            task: TaskParams::default(),
            variants: vec![Variant::Full, Variant::WoGd],
            strategies: SoftInit::ALL.to_vec(),
            template_ids: (0..6).collect(),
            template_style_seed: 11,
            prompt_lengths: vec![10],
            seeds: (0..10).collect(),
            master_seed: 0,
            out_dir: PathBuf::from("results"),
            workers: 1,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// One independently runnable point of a plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub variant: Variant,
    pub strategy: SoftInit,
    pub template_id: usize,
    pub prompt_len: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub variant: Variant,
    pub strategy: SoftInit,
    pub template_id: usize,
    pub prompt_len: usize,
    pub seed: u64,
    pub test_accuracy: f64,
    pub test_correct: usize,
    pub test_total: usize,
    pub selected_epoch: Option<usize>,
    pub wall_time: f64,
}

impl ResultRow {
    pub fn cell(&self) -> Cell {
        Cell {
            variant: self.variant,
            strategy: self.strategy,
            template_id: self.template_id,
            prompt_len: self.prompt_len,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupField {
    Variant,
    Strategy,
    Template,
    PromptLen,
}

impl GroupField {
    fn name(self) -> &'static str {
        match self {
            GroupField::Variant => "variant",
            GroupField::Strategy => "strategy",
            GroupField::Template => "template",
            GroupField::PromptLen => "prompt_len",
        }
    }

    fn value(self, row: &ResultRow) -> String {
        match self {
            GroupField::Variant => row.variant.name().to_string(),
            GroupField::Strategy => row.strategy.name().to_string(),
            GroupField::Template => row.template_id.to_string(),
            GroupField::PromptLen => row.prompt_len.to_string(),
        }
    }
}

/// Mean and sample std of one group. `std` is absent for single-member
/// groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub group: String,
    pub n: usize,
    pub mean: f64,
    pub std: Option<f64>,
}

fn summarize(group: String, values: &[f64]) -> AggregateRow {
    let n = values.len();
    let (mean, std) = match accuracy_stats(values) {
        Ok((m, s)) => (m, Some(s)),
        Err(_) => (values.iter().sum::<f64>() / n.max(1) as f64, None),
    };
    AggregateRow { group, n, mean, std }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub protocol: String,
    pub plan: ExperimentPlan,
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<AggregateRow>,
}

fn group_key(fields: &[GroupField], row: &ResultRow) -> String {
    fields
        .iter()
        .map(|f| format!("{}={}", f.name(), f.value(row)))
        .collect::<Vec<_>>()
        .join(";")
}

impl ResultsTable {
    pub fn new(protocol: impl Into<String>, plan: ExperimentPlan) -> Self {
        ResultsTable {
            protocol: protocol.into(),
            plan,
            rows: Vec::new(),
            aggregates: Vec::new(),
        }
    }

    /// Mean and std over seeds for each distinct combination of `fields`,
    /// in first-appearance order.
    pub fn group_stats(&self, fields: &[GroupField]) -> Vec<AggregateRow> {
        let mut order = Vec::new();
        let mut groups: HashMap<String, Vec<f64>> = HashMap::new();
        for row in &self.rows {
            let key = group_key(fields, row);
            groups
                .entry(key.clone())
                .or_insert_with(|| {
                    order.push(key);
                    Vec::new()
                })
                .push(row.test_accuracy);
        }
        order.into_iter().map(|k| summarize(k.clone(), &groups[&k])).collect()
    }

    /// For each variant: the mean and std of its per-`field` mean
    /// accuracies (means over seeds first, then spread across `field`).
    pub fn across(&self, field: GroupField) -> Vec<AggregateRow> {
        let cells = self.group_stats(&[GroupField::Variant, field]);
        let mut order: Vec<String> = Vec::new();
        let mut by_variant: HashMap<String, Vec<f64>> = HashMap::new();
        for (row, cell) in self.rows_by_group(&[GroupField::Variant, field]).iter().zip(&cells) {
            let v = row.variant.name().to_string();
            if !by_variant.contains_key(&v) {
                order.push(v.clone());
            }
            by_variant.entry(v).or_default().push(cell.mean);
        }
        order
            .into_iter()
            .map(|v| summarize(format!("variant={v};across={}", field.name()), &by_variant[&v]))
            .collect()
    }

    /// Std across `field` of the per-`field` mean accuracy of `variant`.
    pub fn std_across(&self, variant: Variant, field: GroupField) -> Option<f64> {
        let key = format!("variant={};across={}", variant.name(), field.name());
        self.across(field).into_iter().find(|a| a.group == key).and_then(|a| a.std)
    }

    /// Mean and std over seeds of `variant`'s accuracies.
    pub fn variant_stats(&self, variant: Variant) -> Option<AggregateRow> {
        let key = format!("variant={}", variant.name());
        self.group_stats(&[GroupField::Variant]).into_iter().find(|a| a.group == key)
    }

    /// First row of each group, in the same order as [`Self::group_stats`].
    fn rows_by_group(&self, fields: &[GroupField]) -> Vec<&ResultRow> {
        let mut seen = std::collections::HashSet::new();
        self.rows.iter().filter(|r| seen.insert(group_key(fields, r))).collect()
    }

    fn with_aggregates(mut self, groupings: &[&[GroupField]], across: Option<GroupField>) -> Self {
        let mut aggs = Vec::new();
        for g in groupings {
            aggs.extend(self.group_stats(g));
        }
        if let Some(f) = across {
            aggs.extend(self.across(f));
        }
        self.aggregates = aggs;
        self
    }
}

/// Shared state for running cells on one task: the task, the frozen
/// backbone, backbone encodings per template and already finished runs.
pub struct Runner {
    pub task: FewShotTask,
    model: ModelConfig,
    train: TrainConfig,
    master_seed: u64,
    templates: Vec<HardTemplate>,
    template_style_seed: u64,
    backbone: Arc<Backbone>,
    encodings: HashMap<Vec<usize>, Arc<EncodedTask>>,
    done: BTreeMap<Cell, ResultRow>,
}

impl Runner {
    pub fn new(plan: &ExperimentPlan) -> Result<Self> {
        let task = generate_task(plan.task.num_classes, plan.task.noise_level, plan.task.seed)?;
        let backbone = Arc::new(Backbone::new(&plan.model)?);
        plan.train.validate()?;
        Ok(Runner {
            task,
            model: plan.model.clone(),
            train: plan.train.clone(),
            master_seed: plan.master_seed,
            templates: Vec::new(),
            template_style_seed: plan.template_style_seed,
            backbone,
            encodings: HashMap::new(),
            done: BTreeMap::new(),
        })
    }

    /// Whether `plan` runs on the same task, configs and seeds as this
    /// runner, so finished cells can be reused.
    pub fn compatible(&self, plan: &ExperimentPlan) -> bool {
        self.task.seed == plan.task.seed
            && self.task.noise_level == plan.task.noise_level
            && self.task.num_classes == plan.task.num_classes
            && self.model == plan.model
            && self.train == plan.train
            && self.master_seed == plan.master_seed
            && self.template_style_seed == plan.template_style_seed
    }

    fn template(&mut self, id: usize) -> HardTemplate {
        if id >= self.templates.len() {
            self.templates = build_templates(id + 1, self.template_style_seed);
        }
        self.templates[id].clone()
    }

    fn effective(&mut self, cell: &Cell) -> HardTemplate {
        let t = self.template(cell.template_id);
        cell.variant.effective_template(&t, self.model.mask_token_id)
    }

    /// Seed of a run: derived from the master seed and the seed value only,
    /// so the same seed gets the same initial weights in every cell.
    pub fn run_seed(&self, seed: u64) -> u64 {
        derive_seed(self.master_seed, seed)
    }

    /// Runs every cell not finished yet on `workers` threads and returns
    /// the rows of `cells` in order.
    pub fn run(&mut self, cells: &[Cell], workers: usize) -> Result<Vec<ResultRow>> {
        let mut pending: Vec<Cell> = cells.iter().filter(|c| !self.done.contains_key(c)).copied().collect();
        pending.sort();
        pending.dedup();
        let mut jobs = Vec::with_capacity(pending.len());
        for cell in &pending {
            if cell.prompt_len < 1 {
                return Err(Error::Contract("prompt length must be >= 1".into()));
            }
            let template = self.effective(cell);
            let data = match self.encodings.get(&template.tokens) {
                Some(d) => d.clone(),
                None => {
                    let d = Arc::new(EncodedTask::new(&self.backbone, &self.task, &template)?);
                    self.encodings.insert(template.tokens.clone(), d.clone());
                    d
                }
            };
            jobs.push((*cell, data));
        }
        let mut backbones: HashMap<usize, Arc<Backbone>> = HashMap::new();
        for (cell, _) in &jobs {
            if !backbones.contains_key(&cell.prompt_len) {
                let bb = if cell.prompt_len == self.model.prompt_len {
                    self.backbone.clone()
                } else {
                    let cfg = ModelConfig {
                        prompt_len: cell.prompt_len,
                        ..self.model.clone()
                    };
                    Arc::new(Backbone::new(&cfg)?)
                };
                backbones.insert(cell.prompt_len, bb);
            }
        }
        let run_one = |(cell, data): &(Cell, Arc<EncodedTask>)| -> Result<ResultRow> {
            let cfg = TrainConfig {
                seed: self.run_seed(cell.seed),
                variant: cell.variant,
                soft_init: cell.strategy,
                ..self.train.clone()
            };
            let state = ModelState::new(backbones[&cell.prompt_len].clone(), cfg.seed, cfg.soft_init, &self.task)?;
            let (_, history) = train(state, data, &cfg)?;
            let total = data.test.len();
            let correct = (history.test_accuracy * total as f64).round() as usize;
            Ok(ResultRow {
                variant: cell.variant,
                strategy: cell.strategy,
                template_id: cell.template_id,
                prompt_len: cell.prompt_len,
                seed: cell.seed,
                test_accuracy: correct as f64 / total as f64,
                test_correct: correct,
                test_total: total,
                selected_epoch: history.selected_epoch,
                wall_time: history.wall_time_secs,
            })
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::Contract(format!("cannot start worker pool: {e}")))?;
        let rows: Vec<ResultRow> = pool.install(|| jobs.par_iter().map(run_one).collect::<Result<Vec<_>>>())?;
        for row in rows {
            self.done.insert(row.cell(), row);
        }
        Ok(cells.iter().map(|c| self.done[c].clone()).collect())
    }

    pub fn stability_soft(&mut self, plan: &ExperimentPlan) -> Result<ResultsTable> {
        require_variants(plan, &[Variant::Full, Variant::WoGd])?;
        if plan.strategies.is_empty() {
            return Err(Error::Contract("no soft-prompt initialization strategies".into()));
        }
        let template_id = first(&plan.template_ids, 0);
        let prompt_len = first(&plan.prompt_lengths, plan.model.prompt_len);
        let cells = cross(&plan.variants, &plan.strategies, &[template_id], &[prompt_len], &plan.seeds);
        let rows = self.run(&cells, plan.workers)?;
        Ok(table("stability_soft", plan, rows).with_aggregates(
            &[&[GroupField::Variant, GroupField::Strategy]],
            Some(GroupField::Strategy),
        ))
    }

    pub fn stability_hard(&mut self, plan: &ExperimentPlan) -> Result<ResultsTable> {
        require_variants(plan, &[Variant::Full, Variant::WoGd])?;
        if plan.template_ids.len() < 6 {
            return Err(Error::Contract(format!(
                "hard-template stability needs >= 6 templates, got {}",
                plan.template_ids.len()
            )));
        }
        let prompt_len = first(&plan.prompt_lengths, plan.model.prompt_len);
        let cells = cross(&plan.variants, &[SoftInit::Random], &plan.template_ids, &[prompt_len], &plan.seeds);
        let rows = self.run(&cells, plan.workers)?;
        Ok(table("stability_hard", plan, rows).with_aggregates(
            &[&[GroupField::Variant, GroupField::Template]],
            Some(GroupField::Template),
        ))
    }

    pub fn ablation(&mut self, plan: &ExperimentPlan) -> Result<ResultsTable> {
        require_variants(plan, &Variant::ALL)?;
        let strategy = first(&plan.strategies, SoftInit::Random);
        let template_id = first(&plan.template_ids, 0);
        let prompt_len = first(&plan.prompt_lengths, plan.model.prompt_len);
        let cells = cross(&plan.variants, &[strategy], &[template_id], &[prompt_len], &plan.seeds);
        let rows = self.run(&cells, plan.workers)?;
        Ok(table("ablation", plan, rows).with_aggregates(&[&[GroupField::Variant]], None))
    }

    pub fn length_sweep(&mut self, plan: &ExperimentPlan) -> Result<ResultsTable> {
        if plan.prompt_lengths.is_empty() {
            return Err(Error::Contract("no prompt lengths".into()));
        }
        if let Some(&l) = plan.prompt_lengths.iter().find(|&&l| l < 1) {
            return Err(Error::Contract(format!("prompt length must be >= 1, got {l}")));
        }
        let strategy = first(&plan.strategies, SoftInit::Random);
        let template_id = first(&plan.template_ids, 0);
        let cells = cross(&[Variant::Full], &[strategy], &[template_id], &plan.prompt_lengths, &plan.seeds);
        let rows = self.run(&cells, plan.workers)?;
        Ok(table("length_sweep", plan, rows).with_aggregates(&[&[GroupField::PromptLen]], None))
    }
}

fn first<T: Copy>(list: &[T], default: T) -> T {
    list.first().copied().unwrap_or(default)
}

fn require_variants(plan: &ExperimentPlan, needed: &[Variant]) -> Result<()> {
    for v in needed {
        if !plan.variants.contains(v) {
            return Err(Error::Contract(format!("plan is missing variant {v}")));
        }
    }
    Ok(())
}

/// Cells in plan order: variant, strategy, template, length, seed.
pub fn cross(variants: &[Variant], strategies: &[SoftInit], templates: &[usize], lengths: &[usize], seeds: &[u64]) -> Vec<Cell> {
    let mut out = Vec::new();
    for &variant in variants {
        for &strategy in strategies {
            for &template_id in templates {
                for &prompt_len in lengths {
                    for &seed in seeds {
                        out.push(Cell {
                            variant,
                            strategy,
                            template_id,
                            prompt_len,
                            seed,
                        });
                    }
                }
            }
        }
    }
    out
}

fn table(protocol: &str, plan: &ExperimentPlan, rows: Vec<ResultRow>) -> ResultsTable {
    ResultsTable {
        rows,
        ..ResultsTable::new(protocol, plan.clone())
    }
}

pub fn run_stability_soft(plan: &ExperimentPlan) -> Result<ResultsTable> {
    Runner::new(plan)?.stability_soft(plan)
}

pub fn run_stability_hard(plan: &ExperimentPlan) -> Result<ResultsTable> {
    Runner::new(plan)?.stability_hard(plan)
}

pub fn run_ablation(plan: &ExperimentPlan) -> Result<ResultsTable> {
    Runner::new(plan)?.ablation(plan)
}

pub fn run_length_sweep(plan: &ExperimentPlan) -> Result<ResultsTable> {
    Runner::new(plan)?.length_sweep(plan)
}

const RAW_HEADER: [&str; 10] = [
    "variant",
    "strategy",
    "template_id",
    "prompt_len",
    "seed",
    "test_accuracy",
    "test_correct",
    "test_total",
    "selected_epoch",
    "wall_time",
];

const AGG_HEADER: [&str; 5] = ["protocol", "group", "n", "mean", "std"];

/// Sibling path with `suffix` inserted before the extension:
/// `results.csv` becomes `results.aggregate.csv`.
pub fn sibling(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    path.with_file_name(format!("{stem}.{suffix}.{ext}"))
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    library_version: String,
    protocol: String,
    plan: ExperimentPlan,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return Error::io(path, io);
        }
        unreachable!()
    }
    Error::from(e)
}

/// Writes the raw rows to `path`, the aggregates to
/// `<stem>.aggregate.csv` and the plan to `<stem>.manifest.json`.
pub fn emit_csv(table: &ResultsTable, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(RAW_HEADER).map_err(|e| csv_err(path, e))?;
    for r in &table.rows {
        w.write_record([
            r.variant.name().to_string(),
            r.strategy.name().to_string(),
            r.template_id.to_string(),
            r.prompt_len.to_string(),
            r.seed.to_string(),
            format!("{:.6}", r.test_accuracy),
            r.test_correct.to_string(),
            r.test_total.to_string(),
            r.selected_epoch.map(|e| e.to_string()).unwrap_or_default(),
            format!("{}", r.wall_time),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let agg_path = sibling(path, "aggregate", "csv");
    let mut w = csv::Writer::from_path(&agg_path).map_err(|e| csv_err(&agg_path, e))?;
    w.write_record(AGG_HEADER).map_err(|e| csv_err(&agg_path, e))?;
    for a in &table.aggregates {
        w.write_record([
            table.protocol.clone(),
            a.group.clone(),
            a.n.to_string(),
            format!("{}", a.mean),
            a.std.map(|s| format!("{s}")).unwrap_or_default(),
        ])
        .map_err(|e| csv_err(&agg_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&agg_path, e))?;

    let manifest_path = sibling(path, "manifest", "json");
    let manifest = Manifest {
        library_version: LIBRARY_VERSION.to_string(),
        protocol: table.protocol.clone(),
        plan: table.plan.clone(),
    };
    let mut f = File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    f.write_all(serde_json::to_string_pretty(&manifest)?.as_bytes())
        .map_err(|e| Error::io(&manifest_path, e))
}

fn parse<T: std::str::FromStr>(field: &str, what: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    field.parse().map_err(|e| Error::Serde(format!("{what}: {e}")))
}

/// Reads a table written by [`emit_csv`]. Accuracies are rebuilt from the
/// exact correct/total counts.
pub fn read_csv(path: &Path) -> Result<ResultsTable> {
    let manifest_path = sibling(path, "manifest", "json");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let mut table = ResultsTable::new(manifest.protocol, manifest.plan);

    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    for rec in r.records() {
        let rec = rec?;
        let correct: usize = parse(&rec[6], "test_correct")?;
        let total: usize = parse(&rec[7], "test_total")?;
        table.rows.push(ResultRow {
            variant: parse(&rec[0], "variant")?,
            strategy: parse(&rec[1], "strategy")?,
            template_id: parse(&rec[2], "template_id")?,
            prompt_len: parse(&rec[3], "prompt_len")?,
            seed: parse(&rec[4], "seed")?,
            test_accuracy: correct as f64 / total as f64,
            test_correct: correct,
            test_total: total,
            selected_epoch: if rec[8].is_empty() { None } else { Some(parse(&rec[8], "selected_epoch")?) },
            wall_time: parse(&rec[9], "wall_time")?,
        });
    }

    let agg_path = sibling(path, "aggregate", "csv");
    let mut r = csv::Reader::from_path(&agg_path).map_err(|e| csv_err(&agg_path, e))?;
    for rec in r.records() {
        let rec = rec?;
        table.aggregates.push(AggregateRow {
            group: rec[1].to_string(),
            n: parse(&rec[2], "n")?,
            mean: parse(&rec[3], "mean")?,
            std: if rec[4].is_empty() { None } else { Some(parse(&rec[4], "std")?) },
        });
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(variant: Variant, strategy: SoftInit, seed: u64, acc: f64) -> ResultRow {
        ResultRow {
            variant,
            strategy,
            template_id: 0,
            prompt_len: 10,
            seed,
            test_accuracy: acc,
            test_correct: (acc * 512.0) as usize,
            test_total: 512,
            selected_epoch: Some(3),
            wall_time: 0.5,
        }
    }

    #[test]
    fn across_uses_cell_means() {
        let mut t = ResultsTable::new("x", ExperimentPlan::default());
        t.rows = vec![
            row(Variant::Full, SoftInit::Random, 0, 0.5),
            row(Variant::Full, SoftInit::Random, 1, 0.7),
            row(Variant::Full, SoftInit::Label, 0, 0.8),
            row(Variant::Full, SoftInit::Label, 1, 1.0),
        ];
        let std = t.std_across(Variant::Full, GroupField::Strategy).unwrap();
        // cell means 0.6 and 0.9
        assert!((std - 0.3 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cross_cardinality() {
        let cells = cross(&[Variant::Full, Variant::WoGd], &SoftInit::ALL, &[0], &[10], &(0..10).collect::<Vec<_>>());
        assert_eq!(cells.len(), 100);
    }

    #[test]
    fn sibling_paths() {
        let p = Path::new("/tmp/out/results.csv");
        assert_eq!(sibling(p, "aggregate", "csv"), Path::new("/tmp/out/results.aggregate.csv"));
        assert_eq!(sibling(p, "manifest", "json"), Path::new("/tmp/out/results.manifest.json"));
    }
}
