//! Seed pool construction and task-bank expansion.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::score_on_window;
use crate::factor_dsl::{parse, parse_valid, signature, Digest, ExprError, PrimaryMetric, Scenario, ValidExpr};
use crate::market_data::{MarketPanel, ReturnTarget, TimeWindow};
use crate::mining_loop::{CandidateGenerator, GeneratorError};

pub const DEFAULT_POOL_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSource {
    File,
    Generator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedCandidate {
    pub text: String,
    pub source: SeedSource,
    /// Primary metric on the scoring window, once scored.
    pub score: Option<f64>,
}

impl SeedCandidate {
    pub fn new(text: impl Into<String>, source: SeedSource) -> Self {
        Self {
            text: text.into(),
            source,
            score: None,
        }
    }
}

/// Candidates surviving each stage of pool construction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub raw: usize,
    pub valid: usize,
    pub scored: usize,
    pub above_threshold: usize,
    pub selected: usize,
}

#[derive(Debug, Error)]
pub enum SeedError {
    #[error(
        "empty seed pool: {} raw, {} valid, {} scored, {} above threshold",
        .0.raw, .0.valid, .0.scored, .0.above_threshold
    )]
    EmptyPool(StageCounts),
    #[error("pool size K must be at least 1")]
    ZeroK,
    #[error("task bank needs a non-empty pool and window list")]
    EmptyInputs,
    #[error("duplicate window [{}, {}]", .0.start, .0.end)]
    DuplicateWindow(TimeWindow),
    #[error("task line {line}: {message}")]
    BadTask { line: usize, message: String },
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Greedy selection: stable sort by score descending, then keep entries
/// with score at least `tau_q` and an unseen hash, up to `k`. Returns indices.
pub fn select_seeds(entries: &[(Digest, Option<f64>)], tau_q: f64, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].1.is_some()).collect();
    order.sort_by(|&a, &b| entries[b].1.unwrap().total_cmp(&entries[a].1.unwrap()));
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for i in order {
        if out.len() == k {
            break;
        }
        let (hash, score) = &entries[i];
        if score.unwrap() >= tau_q && seen.insert(*hash) {
            out.push(i);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct PoolMember {
    pub expr: ValidExpr,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct SeedPool {
    pub members: Vec<PoolMember>,
    pub counts: StageCounts,
}

impl SeedPool {
    pub fn exprs(&self) -> Vec<ValidExpr> {
        self.members.iter().map(|m| m.expr.clone()).collect()
    }

    /// One `expression<TAB>score` line per member.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for m in &self.members {
            writeln!(w, "{}\t{:?}", m.expr, m.score)?;
        }
        w.flush()
    }
}

/// Validates, scores on `scoring_window`, and greedily selects up to `k`
/// distinct seeds with score at least the scenario's quality threshold.
pub fn build_seed_pool(
    raw: &[SeedCandidate],
    scenario: &Scenario,
    panel: &MarketPanel<f64>,
    target: &ReturnTarget<f64>,
    scoring_window: TimeWindow,
    k: usize,
) -> Result<SeedPool, SeedError> {
    if k == 0 {
        return Err(SeedError::ZeroK);
    }
    let mut counts = StageCounts {
        raw: raw.len(),
        ..StageCounts::default()
    };
    let valid: Vec<ValidExpr> = raw.iter().filter_map(|c| parse_valid(&c.text, scenario).ok()).collect();
    counts.valid = valid.len();
    let scores: Vec<Option<f64>> = valid
        .par_iter()
        .map(|e| {
            score_on_window(e, scenario, panel, target, scoring_window)
                .ok()
                .filter(|r| r.valid)
                .and_then(|r| r.primary_metric_value)
        })
        .collect();
    counts.scored = scores.iter().filter(|s| s.is_some()).count();
    counts.above_threshold = scores.iter().flatten().filter(|&&q| q >= scenario.quality_threshold).count();
    let entries: Vec<(Digest, Option<f64>)> = valid
        .iter()
        .zip(&scores)
        .map(|(e, s)| (signature(e.expr()).exact_hash, *s))
        .collect();
    let picked = select_seeds(&entries, scenario.quality_threshold, k);
    counts.selected = picked.len();
    if picked.is_empty() {
        return Err(SeedError::EmptyPool(counts));
    }
    Ok(SeedPool {
        members: picked
            .into_iter()
            .map(|i| PoolMember {
                expr: valid[i].clone(),
                score: scores[i].expect("selected entries are scored"),
            })
            .collect(),
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningTask {
    pub task_id: String,
    /// Seed expression text.
    pub seed: String,
    pub scenario: Scenario,
    pub window: TimeWindow,
    pub objective: PrimaryMetric,
}

impl MiningTask {
    pub fn seed_expr(&self) -> Result<ValidExpr, ExprError> {
        parse_valid(&self.seed, &self.scenario)
    }
}

/// First 16 hex digits of `sha256(exact_hash ":" start ":" end)`.
pub fn task_id(seed: &ValidExpr, window: TimeWindow) -> String {
    let key = format!("{}:{}:{}", signature(seed.expr()).exact_hash, window.start, window.end);
    Digest::of(key.as_bytes()).to_hex()[..16].to_string()
}

/// Pool-major Cartesian product of seeds and windows.
pub fn build_task_bank(
    pool: &[ValidExpr],
    scenario: &Scenario,
    windows: &[TimeWindow],
) -> Result<Vec<MiningTask>, SeedError> {
    if pool.is_empty() || windows.is_empty() {
        return Err(SeedError::EmptyInputs);
    }
    let mut seen = HashSet::new();
    if let Some(w) = windows.iter().find(|w| !seen.insert(**w)) {
        return Err(SeedError::DuplicateWindow(*w));
    }
    Ok(pool
        .iter()
        .flat_map(|seed| {
            windows.iter().map(move |&window| MiningTask {
                task_id: task_id(seed, window),
                seed: seed.to_string(),
                scenario: scenario.clone(),
                window,
                objective: scenario.primary_metric,
            })
        })
        .collect())
}

pub fn write_task_bank<W: Write>(tasks: &[MiningTask], mut w: W) -> Result<(), SeedError> {
    for t in tasks {
        serde_json::to_writer(&mut w, t).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a JSON-lines task bank, revalidating every seed.
pub fn read_task_bank<R: BufRead>(reader: R) -> Result<Vec<MiningTask>, SeedError> {
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| SeedError::BadTask { line: k + 1, message };
        let task: MiningTask = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        task.seed_expr().map_err(|e| bad(e.to_string()))?;
        out.push(task);
    }
    Ok(out)
}

/// One expression per line; `#` starts a comment.
pub fn parse_seed_lines(text: &str) -> Vec<SeedCandidate> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| SeedCandidate::new(l, SeedSource::File))
        .collect()
}

pub fn read_seed_file(path: impl AsRef<Path>) -> Result<Vec<SeedCandidate>, SeedError> {
    Ok(parse_seed_lines(&std::fs::read_to_string(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReject {
    pub text: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawSeeds {
    pub candidates: Vec<SeedCandidate>,
    pub rejects: Vec<SeedReject>,
}

/// Up to `m` parseable generator proposals; unparseable ones are recorded.
pub fn generate_raw_seeds(
    generator: &mut dyn CandidateGenerator,
    scenario: &Scenario,
    m: usize,
    rng_seed: u64,
) -> Result<RawSeeds, SeedError> {
    let mut out = RawSeeds::default();
    for text in generator.propose_seeds(scenario, m, rng_seed)?.into_iter().take(m) {
        match parse(&text) {
            Ok(_) => out.candidates.push(SeedCandidate::new(text, SeedSource::Generator)),
            Err(e) => out.rejects.push(SeedReject {
                text,
                error: e.to_string(),
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mining_loop::BuiltinGenerator;

    fn d(b: u8) -> Digest {
        Digest([b; 32])
    }

    #[test]
    fn greedy_selection_examples() {
        let entries = [(d(1), Some(0.6)), (d(2), Some(0.5)), (d(1), Some(0.58))];
        assert_eq!(select_seeds(&entries, 0.55, 2), vec![0]);
        let ties = [(d(1), Some(0.4)), (d(2), Some(0.4))];
        assert_eq!(select_seeds(&ties, 0.0, 1), vec![0]);
        assert_eq!(select_seeds(&[(d(1), None)], 0.0, 3), Vec::<usize>::new());
    }

    #[test]
    fn seed_file_comments() {
        let c = parse_seed_lines("# header\nts_mean(close, 5)  # trailing\n\n  rank(volume)\n");
        let texts: Vec<&str> = c.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, ["ts_mean(close, 5)", "rank(volume)"]);
        assert!(c.iter().all(|c| c.source == SeedSource::File && c.score.is_none()));
    }

    #[test]
    fn task_bank_shapes() {
        let s = Scenario::cross_sectional("t");
        let pool: Vec<ValidExpr> = ["ts_mean(close, 5)", "rank(volume)", "neg(return)"]
            .iter()
            .map(|t| parse_valid(t, &s).unwrap())
            .collect();
        let windows: Vec<TimeWindow> = (0..4).map(|k| TimeWindow::new(k * 10, k * 10 + 9).unwrap()).collect();
        let bank = build_task_bank(&pool, &s, &windows).unwrap();
        assert_eq!(bank.len(), 12);
        assert_eq!(bank[1].seed, "ts_mean(close, 5)");
        assert_eq!(bank[1].window, windows[1]);
        assert_eq!(bank[4].seed, "rank(volume)");
        let ids: HashSet<&String> = bank.iter().map(|t| &t.task_id).collect();
        assert_eq!(ids.len(), 12);
        assert!(bank.iter().all(|t| t.task_id.len() == 16));

        let one = build_task_bank(&pool[..1], &s, &windows[..1]).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!((one[0].seed.as_str(), one[0].window), ("ts_mean(close, 5)", windows[0]));

        let dup = [windows[0], windows[0]];
        assert!(matches!(build_task_bank(&pool, &s, &dup), Err(SeedError::DuplicateWindow(_))));
        assert!(matches!(build_task_bank(&[], &s, &windows), Err(SeedError::EmptyInputs)));

        let mut buf = Vec::new();
        write_task_bank(&bank, &mut buf).unwrap();
        assert_eq!(read_task_bank(buf.as_slice()).unwrap(), bank);
    }

    #[test]
    fn builtin_raw_seeds_are_deterministic() {
        let s = Scenario::cross_sectional("t");
        let a = generate_raw_seeds(&mut BuiltinGenerator::new(), &s, 20, 9).unwrap();
        let b = generate_raw_seeds(&mut BuiltinGenerator::new(), &s, 20, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.candidates.len(), 20);
        assert!(a.rejects.is_empty());
    }
}
