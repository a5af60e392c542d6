//! Mining rounds: sample a group of candidates per task, score and reward
//! them against an archive snapshot, standardize rewards into group
//! advantages, then archive the survivors.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::archive::{Archive, ArchiveError, InsertOutcome};
use crate::backtest::{behavior_mode, score_on_window, BacktestReport};
use crate::dico_reward::{dico_reward, RewardBreakdown, RewardContext};
use crate::factor_dsl::ops::{self, OpKind};
use crate::factor_dsl::{
    parse_valid, random_expr, sample, signature, FactorExpr, Scenario, Signature, UniverseMode, ValidExpr,
};
use crate::market_data::{MarketPanel, ReturnTarget};
use crate::seeding::MiningTask;

/// Zero-variance guard for group advantages.
pub const EPSILON_A: f64 = 1e-9;
pub const DEFAULT_GROUP_SIZE: usize = 8;
pub const EXTERNAL_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("generator unreachable over {transport}: {message}")]
    Unreachable { transport: String, message: String },
    #[error("generator protocol error: {0}")]
    Protocol(String),
}

/// Source of candidate expressions (the policy).
pub trait CandidateGenerator {
    fn name(&self) -> &str;

    /// `k` candidate texts for `task`.
    fn generate(&mut self, task: &MiningTask, k: usize, rng_seed: u64) -> Result<Vec<String>, GeneratorError>;

    /// Up to `m` raw seed texts for `scenario`.
    fn propose_seeds(&mut self, scenario: &Scenario, m: usize, rng_seed: u64) -> Result<Vec<String>, GeneratorError>;

    /// Feedback after a round. Default: ignored.
    fn observe(&mut self, _task: &MiningTask, _records: &[TrainingRecord]) {}
}

// ---------------------------------------------------------------------------
// builtin generator

/// Series-position paths into an expression.
type Path = Vec<usize>;

fn collect_paths(e: &FactorExpr, path: &mut Path, out: &mut Vec<Path>, keep: &dyn Fn(&FactorExpr) -> bool) {
    if keep(e) {
        out.push(path.clone());
    }
    if let FactorExpr::Call(name, args) = e {
        let series = ops::lookup(name).map_or(args.len(), |s| s.series_arity());
        for (k, a) in args.iter().enumerate().take(series) {
            path.push(k);
            collect_paths(a, path, out, keep);
            path.pop();
        }
    }
}

fn paths(e: &FactorExpr, keep: &dyn Fn(&FactorExpr) -> bool) -> Vec<Path> {
    let mut out = Vec::new();
    collect_paths(e, &mut Vec::new(), &mut out, keep);
    out
}

fn node_mut<'a>(e: &'a mut FactorExpr, path: &[usize]) -> &'a mut FactorExpr {
    match (path.split_first(), e) {
        (None, e) => e,
        (Some((&k, rest)), FactorExpr::Call(_, args)) => node_mut(&mut args[k], rest),
        _ => unreachable!("paths only descend through calls"),
    }
}

fn spec_of(e: &FactorExpr) -> Option<&'static ops::OpSpec> {
    match e {
        FactorExpr::Call(name, _) => ops::lookup(name),
        _ => None,
    }
}

fn is_ts(e: &FactorExpr) -> bool {
    spec_of(e).is_some_and(|s| s.kind == OpKind::TimeSeries)
}

fn usable(scenario: &Scenario, spec: &ops::OpSpec) -> bool {
    scenario.allowed_operators.contains(spec.name)
        && !(spec.kind == OpKind::CrossSectional && scenario.universe_mode == UniverseMode::SingleAsset)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edit {
    Window,
    Swap,
    Wrap,
    Substitute,
}

/// Applies one edit in place. Returns `false` when the edit has no target.
pub fn apply_edit<R: Rng + ?Sized>(e: &mut FactorExpr, edit: Edit, scenario: &Scenario, rng: &mut R) -> bool {
    match edit {
        Edit::Window => {
            let Some(p) = paths(e, &is_ts).choose(rng).cloned() else {
                return false;
            };
            let delta: i64 = rng.random_range(1..=5) * if rng.random_bool(0.5) { 1 } else { -1 };
            if let FactorExpr::Call(_, args) = node_mut(e, &p) {
                if let Some(FactorExpr::IntLiteral(w)) = args.last_mut() {
                    *w = (*w + delta).clamp(1, scenario.w_max as i64);
                    return true;
                }
            }
            false
        }
        Edit::Swap => {
            let Some(p) = paths(e, &|n| spec_of(n).is_some()).choose(rng).cloned() else {
                return false;
            };
            let node = node_mut(e, &p);
            let spec = spec_of(node).expect("call");
            let class = |o: &ops::OpSpec| o.arity == spec.arity && (o.kind == OpKind::TimeSeries) == (spec.kind == OpKind::TimeSeries);
            let peers: Vec<&ops::OpSpec> = ops::OPERATORS
                .iter()
                .filter(|o| o.name != spec.name && class(o) && usable(scenario, o))
                .collect();
            let Some(to) = peers.choose(rng) else {
                return false;
            };
            if let FactorExpr::Call(name, _) = node {
                *name = to.name.to_string();
            }
            true
        }
        Edit::Wrap => {
            let wrappers: Vec<&ops::OpSpec> = ops::OPERATORS
                .iter()
                .filter(|o| o.series_arity() == 1 && usable(scenario, o))
                .collect();
            let (Some(p), Some(w)) = (paths(e, &|_| true).choose(rng).cloned(), wrappers.choose(rng)) else {
                return false;
            };
            let node = node_mut(e, &p);
            let inner = std::mem::replace(node, FactorExpr::IntLiteral(0));
            let mut args = vec![inner];
            if w.kind == OpKind::TimeSeries {
                args.push(FactorExpr::IntLiteral(sample::random_window(rng, scenario)));
            }
            *node = FactorExpr::Call(w.name.to_string(), args);
            true
        }
        Edit::Substitute => {
            let targets = paths(e, &|n| matches!(n, FactorExpr::Variable(_)));
            let Some(p) = targets.choose(rng).cloned() else {
                return false;
            };
            let node = node_mut(e, &p);
            let current = match node {
                FactorExpr::Variable(v) => v.clone(),
                _ => unreachable!(),
            };
            let others: Vec<&String> = scenario.allowed_variables.iter().filter(|v| **v != current).collect();
            let Some(v) = others.choose(rng) else {
                return false;
            };
            *node = FactorExpr::Variable((*v).clone());
            true
        }
    }
}

const EDITS: [Edit; 4] = [Edit::Window, Edit::Swap, Edit::Wrap, Edit::Substitute];

/// One mutation of `parent`: 1-2 random edits, revalidated; the parent is
/// returned unchanged when the result does not validate.
pub fn mutate_once<R: Rng + ?Sized>(parent: &ValidExpr, scenario: &Scenario, rng: &mut R) -> ValidExpr {
    let mut e = parent.expr().clone();
    let n_edits = rng.random_range(1..=2);
    for _ in 0..n_edits {
        let edit = *EDITS.choose(rng).expect("non-empty");
        apply_edit(&mut e, edit, scenario, rng);
    }
    crate::factor_dsl::validate(&e, scenario).unwrap_or_else(|_| parent.clone())
}

/// `k` mutations of the task seed, deterministic in `rng_seed`.
pub fn builtin_mutate(task: &MiningTask, k: usize, rng_seed: u64) -> Result<Vec<String>, GeneratorError> {
    let seed = task
        .seed_expr()
        .map_err(|e| GeneratorError::Protocol(format!("task seed invalid: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok((0..k).map(|_| mutate_once(&seed, &task.scenario, &mut rng).to_string()).collect())
}

/// Classic technical templates proposed as seeds, windows drawn at random.
const SEED_TEMPLATES: &[&str] = &[
    "neg(ts_mean(return, {w}))",
    "ts_delta(close, {w})",
    "neg(ts_delta(close, {w}))",
    "ts_std(return, {w})",
    "div(volume, ts_mean(volume, {w}))",
    "ts_rank(close, {w})",
    "ts_corr(close, volume, {w})",
    "div(sub(close, ts_min(low, {w})), sub(ts_max(high, {w}), ts_min(low, {w})))",
    "div(sub(close, open), sub(high, low))",
    "neg(ts_corr(return, volume, {w}))",
];

/// Deterministic mutation-based stand-in for a learned policy.
///
/// Each group mixes mutations of the task seed with mutations of the best
/// candidate observed so far for that task.
#[derive(Debug, Default)]
pub struct BuiltinGenerator {
    best: HashMap<String, (f64, String)>,
}

impl BuiltinGenerator {
    pub fn new() -> Self {
        Self::default()
    }
}

impl CandidateGenerator for BuiltinGenerator {
    fn name(&self) -> &str {
        "builtin"
    }

    fn generate(&mut self, task: &MiningTask, k: usize, rng_seed: u64) -> Result<Vec<String>, GeneratorError> {
        let seed = task
            .seed_expr()
            .map_err(|e| GeneratorError::Protocol(format!("task seed invalid: {e}")))?;
        let elite = self
            .best
            .get(&task.task_id)
            .and_then(|(_, text)| parse_valid(text, &task.scenario).ok());
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        Ok((0..k)
            .map(|_| {
                let parent = match &elite {
                    Some(e) if rng.random_bool(0.5) => e,
                    _ => &seed,
                };
                mutate_once(parent, &task.scenario, &mut rng).to_string()
            })
            .collect())
    }

    fn propose_seeds(&mut self, scenario: &Scenario, m: usize, rng_seed: u64) -> Result<Vec<String>, GeneratorError> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        Ok((0..m)
            .map(|_| {
                if rng.random_bool(0.5) {
                    let w = sample::random_window(&mut rng, scenario).max(2);
                    SEED_TEMPLATES.choose(&mut rng).expect("non-empty").replace("{w}", &w.to_string())
                } else {
                    random_expr(&mut rng, scenario, 3).to_string()
                }
            })
            .collect())
    }

    fn observe(&mut self, task: &MiningTask, records: &[TrainingRecord]) {
        let best = records
            .iter()
            .filter(|r| r.valid)
            .max_by(|a, b| a.reward.total_cmp(&b.reward).then(b.group_index.cmp(&a.group_index)));
        if let Some(r) = best {
            let entry = self.best.entry(task.task_id.clone()).or_insert((f64::NEG_INFINITY, String::new()));
            if r.reward > entry.0 {
                *entry = (r.reward, r.expression.clone());
            }
        }
    }
}

// ---------------------------------------------------------------------------
// external generator

const TRANSPORT: &str = "child-process stdio";

/// Line-delimited JSON over a child process's standard streams.
pub struct ExternalGenerator {
    command: PathBuf,
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<io::Result<String>>,
    timeout: Duration,
}

impl ExternalGenerator {
    pub fn spawn(command: impl Into<PathBuf>, args: &[String]) -> Result<Self, GeneratorError> {
        Self::spawn_with_timeout(command, args, EXTERNAL_TIMEOUT)
    }

    pub fn spawn_with_timeout(
        command: impl Into<PathBuf>,
        args: &[String],
        timeout: Duration,
    ) -> Result<Self, GeneratorError> {
        let command = command.into();
        let unreachable = |m: String| GeneratorError::Unreachable {
            transport: TRANSPORT.into(),
            message: m,
        };
        let mut child = Command::new(&command)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| unreachable(format!("{}: {e}", command.display())))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            command,
            child,
            stdin,
            lines: rx,
            timeout,
        })
    }

    fn unreachable(&self, message: impl Into<String>) -> GeneratorError {
        GeneratorError::Unreachable {
            transport: format!("{TRANSPORT} ({})", self.command.display()),
            message: message.into(),
        }
    }

    fn request(&mut self, msg: &serde_json::Value) -> Result<serde_json::Value, GeneratorError> {
        let mut line = msg.to_string();
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| self.unreachable(e.to_string()))?;
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => serde_json::from_str(&reply).map_err(|e| GeneratorError::Protocol(e.to_string())),
            Ok(Err(e)) => Err(self.unreachable(e.to_string())),
            Err(RecvTimeoutError::Timeout) => Err(self.unreachable(format!("no reply within {:?}", self.timeout))),
            Err(RecvTimeoutError::Disconnected) => Err(self.unreachable("generator closed its output")),
        }
    }

    fn expressions(reply: &serde_json::Value) -> Result<Vec<String>, GeneratorError> {
        if reply["type"] != "candidates" {
            return Err(GeneratorError::Protocol(format!("expected candidates, got {reply}")));
        }
        reply["expressions"]
            .as_array()
            .ok_or_else(|| GeneratorError::Protocol("`expressions` is not an array".into()))?
            .iter()
            .map(|v| {
                v.as_str()
                    .map(String::from)
                    .ok_or_else(|| GeneratorError::Protocol("expression is not a string".into()))
            })
            .collect()
    }

    /// Optional scenario refinement request.
    pub fn refine(&mut self, raw_scenario: &str) -> Result<Scenario, GeneratorError> {
        let reply = self.request(&json!({"type": "refine", "raw_scenario": raw_scenario}))?;
        if reply["type"] != "scenario" {
            return Err(GeneratorError::Protocol(format!("expected scenario, got {reply}")));
        }
        let mut body = reply;
        if let Some(obj) = body.as_object_mut() {
            obj.remove("type");
        }
        serde_json::from_value(body).map_err(|e| GeneratorError::Protocol(e.to_string()))
    }
}

impl Drop for ExternalGenerator {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl CandidateGenerator for ExternalGenerator {
    fn name(&self) -> &str {
        "external"
    }

    fn generate(&mut self, task: &MiningTask, k: usize, rng_seed: u64) -> Result<Vec<String>, GeneratorError> {
        let reply = self.request(&json!({
            "type": "generate",
            "task_id": task.task_id,
            "scenario": task.scenario,
            "seed": task.seed,
            "window": task.window,
            "group_size": k,
            "rng_seed": rng_seed,
        }))?;
        if reply["task_id"] != task.task_id.as_str() {
            return Err(GeneratorError::Protocol(format!("reply for wrong task: {}", reply["task_id"])));
        }
        Self::expressions(&reply)
    }

    fn propose_seeds(&mut self, scenario: &Scenario, m: usize, rng_seed: u64) -> Result<Vec<String>, GeneratorError> {
        let reply = self.request(&json!({
            "type": "seed",
            "scenario": scenario,
            "count": m,
            "rng_seed": rng_seed,
        }))?;
        let mut out = Self::expressions(&reply)?;
        out.truncate(m);
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// rounds

/// Group-standardized rewards; all zeros when the population std is at most
/// `EPSILON_A` (including singleton groups).
pub fn grpo_advantages(rewards: &[f64]) -> Vec<f64> {
    let n = rewards.len() as f64;
    if rewards.is_empty() {
        return Vec::new();
    }
    let mean = rewards.iter().sum::<f64>() / n;
    let sd = (rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).sqrt();
    if sd > EPSILON_A {
        rewards.iter().map(|r| (r - mean) / sd).collect()
    } else {
        vec![0.0; rewards.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub task_id: String,
    pub round: u64,
    pub group_index: usize,
    pub expression: String,
    pub reward: f64,
    pub advantage: f64,
    pub valid: bool,
}

#[derive(Debug, Error)]
pub enum MiningError {
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error("record sink failed: {0}")]
    Sink(#[from] io::Error),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("campaign needs at least one task")]
    NoTasks,
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub records: Vec<TrainingRecord>,
    pub breakdowns: Vec<RewardBreakdown>,
    pub inserted: usize,
}

struct Scored {
    valid: Option<ValidExpr>,
    signature: Option<Signature>,
    report: BacktestReport,
}

fn score_text(text: &str, task: &MiningTask, panel: &MarketPanel<f64>, target: &ReturnTarget<f64>) -> Scored {
    let failed = |msg: String| Scored {
        valid: None,
        signature: None,
        report: BacktestReport::failed(behavior_mode(&task.scenario), msg),
    };
    let expr = match parse_valid(text, &task.scenario) {
        Ok(e) => e,
        Err(e) => return failed(e.to_string()),
    };
    let report = match score_on_window(&expr, &task.scenario, panel, target, task.window) {
        Ok(r) => r,
        Err(e) => return failed(e.to_string()),
    };
    Scored {
        signature: Some(signature(expr.expr())),
        valid: Some(expr),
        report,
    }
}

/// One group for one task. Rewards read the archive as it was before the
/// round; insertions follow in generation order.
#[allow(clippy::too_many_arguments)]
pub fn run_round(
    task: &MiningTask,
    generator: &mut dyn CandidateGenerator,
    panel: &MarketPanel<f64>,
    target: &ReturnTarget<f64>,
    archive: &mut Archive,
    k: usize,
    rng_seed: u64,
    round: u64,
) -> Result<RoundOutcome, MiningError> {
    let texts = generator.generate(task, k, rng_seed)?;
    if texts.len() != k {
        return Err(GeneratorError::Protocol(format!("expected {k} candidates, got {}", texts.len())).into());
    }
    let scored: Vec<Scored> = texts.par_iter().map(|t| score_text(t, task, panel, target)).collect();

    let breakdowns: Vec<RewardBreakdown> = {
        let ctx = RewardContext::new(archive, &task.scenario);
        scored
            .iter()
            .map(|s| dico_reward(s.signature.as_ref(), &s.report, &task.scenario, &ctx))
            .collect()
    };
    let rewards: Vec<f64> = breakdowns.iter().map(|b| b.total).collect();
    let advantages = grpo_advantages(&rewards);

    let records: Vec<TrainingRecord> = texts
        .iter()
        .zip(&scored)
        .zip(rewards.iter().zip(&advantages))
        .enumerate()
        .map(|(g, ((text, s), (&reward, &advantage)))| TrainingRecord {
            task_id: task.task_id.clone(),
            round,
            group_index: g,
            expression: text.clone(),
            reward,
            advantage,
            valid: s.valid.is_some() && s.report.valid,
        })
        .collect();

    let mut inserted = 0;
    for s in &scored {
        if let Some(expr) = &s.valid {
            if archive.try_insert(expr, &s.report, &task.scenario, &task.task_id, round)? == InsertOutcome::Inserted {
                inserted += 1;
            }
        }
    }
    generator.observe(task, &records);
    Ok(RoundOutcome {
        records,
        breakdowns,
        inserted,
    })
}

/// Destination for training records.
pub trait RecordSink {
    fn write_records(&mut self, records: &[TrainingRecord]) -> io::Result<()>;
}

impl RecordSink for Vec<TrainingRecord> {
    fn write_records(&mut self, records: &[TrainingRecord]) -> io::Result<()> {
        self.extend_from_slice(records);
        Ok(())
    }
}

/// JSON-lines writer, one record per line.
pub struct JsonlSink<W: Write>(pub W);

impl<W: Write> RecordSink for JsonlSink<W> {
    fn write_records(&mut self, records: &[TrainingRecord]) -> io::Result<()> {
        for r in records {
            serde_json::to_writer(&mut self.0, r)?;
            self.0.write_all(b"\n")?;
        }
        self.0.flush()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub rounds: u64,
    pub group_size: usize,
    pub rng_seed: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            rounds: 50,
            group_size: DEFAULT_GROUP_SIZE,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: u64,
    pub mean_reward: f64,
    pub archive_size: usize,
    pub distinct_families: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub rounds: Vec<RoundSummary>,
    /// Task ids in execution order.
    pub executions: Vec<String>,
}

impl CampaignSummary {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "round,mean_reward,archive_size,distinct_families")?;
        for r in &self.rounds {
            writeln!(w, "{},{:?},{},{}", r.round, r.mean_reward, r.archive_size, r.distinct_families)?;
        }
        w.flush()
    }

    /// Mean of per-round mean rewards over `range` of rounds.
    pub fn mean_over(&self, range: std::ops::Range<usize>) -> Option<f64> {
        let xs = self.rounds.get(range)?;
        (!xs.is_empty()).then(|| xs.iter().map(|r| r.mean_reward).sum::<f64>() / xs.len() as f64)
    }
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-group RNG seed derived from the campaign seed.
pub fn group_seed(campaign_seed: u64, round: u64, task_index: usize) -> u64 {
    mix(mix(mix(campaign_seed) ^ round) ^ task_index as u64)
}

/// `rounds` rounds, each visiting every task in order (round-robin).
pub fn run_campaign(
    tasks: &[MiningTask],
    generator: &mut dyn CandidateGenerator,
    panel: &MarketPanel<f64>,
    target: &ReturnTarget<f64>,
    archive: &mut Archive,
    config: &CampaignConfig,
    sink: &mut dyn RecordSink,
) -> Result<CampaignSummary, MiningError> {
    if tasks.is_empty() {
        return Err(MiningError::NoTasks);
    }
    let mut summary = CampaignSummary::default();
    for round in 0..config.rounds {
        let (mut total, mut count) = (0.0, 0usize);
        for (j, task) in tasks.iter().enumerate() {
            let seed = group_seed(config.rng_seed, round, j);
            let out = run_round(task, generator, panel, target, archive, config.group_size, seed, round)?;
            sink.write_records(&out.records)?;
            total += out.records.iter().map(|r| r.reward).sum::<f64>();
            count += out.records.len();
            summary.executions.push(task.task_id.clone());
        }
        summary.rounds.push(RoundSummary {
            round,
            mean_reward: if count == 0 { 0.0 } else { total / count as f64 },
            archive_size: archive.len(),
            distinct_families: archive.distinct_families(),
        });
    }
    Ok(summary)
}
