//! Mined factor database: an append-only JSON-lines record log with exact and
//! family indexes rebuilt in memory.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::{BacktestReport, BehaviorProfile};
use crate::factor_dsl::{canonicalize, parse, signature, Digest, Scenario, ValidExpr};

pub const DEFAULT_ELITE_SIZE: usize = 32;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("archive i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("archive line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

/// Scalar part of a backtest report kept with each record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub diracc: Option<f64>,
    pub ic: Option<f64>,
    pub rankic: Option<f64>,
    pub icir: Option<f64>,
    pub coverage: f64,
    pub n_periods: usize,
    pub valid: bool,
    pub primary_metric_value: Option<f64>,
}

impl From<&BacktestReport> for ReportSummary {
    fn from(r: &BacktestReport) -> Self {
        Self {
            diracc: r.diracc,
            ic: r.ic,
            rankic: r.rankic,
            icir: r.icir,
            coverage: r.coverage,
            n_periods: r.n_periods,
            valid: r.valid,
            primary_metric_value: r.primary_metric_value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveRecord {
    /// Canonical expression text.
    pub expression: String,
    pub exact_hash: Digest,
    pub family_hash: Digest,
    pub report: ReportSummary,
    pub behavior: BehaviorProfile,
    pub task_id: String,
    pub round: u64,
    /// Logical insertion sequence number (monotone, reproducible).
    pub inserted_at: u64,
}

impl ArchiveRecord {
    pub fn metric(&self) -> f64 {
        self.report.primary_metric_value.unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyStats {
    pub family_hash: Digest,
    pub count: usize,
    pub best_primary_metric: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NotExecutable,
    Coverage,
    TooFewPeriods,
    NoMetric,
    BelowThreshold,
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    Rejected(RejectReason),
}

/// Single-writer archive. Inserts take `&mut self`; reads share `&self`.
#[derive(Debug, Default)]
pub struct Archive {
    records: Vec<ArchiveRecord>,
    exact: HashMap<Digest, usize>,
    families: BTreeMap<Digest, FamilyStats>,
    next_seq: u64,
    log: Option<File>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens (or creates) an archive file; later inserts are appended to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ArchiveError> {
        let path = path.as_ref();
        let mut archive = if path.exists() { Self::load(path)? } else { Self::new() };
        archive.log = Some(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(archive)
    }

    pub fn from_records(records: Vec<ArchiveRecord>) -> Result<Self, ArchiveError> {
        let mut a = Self::new();
        for (k, r) in records.into_iter().enumerate() {
            a.index(r).map_err(|message| ArchiveError::Corrupt { line: k + 1, message })?;
        }
        Ok(a)
    }

    fn index(&mut self, record: ArchiveRecord) -> Result<(), String> {
        if self.exact.contains_key(&record.exact_hash) {
            return Err(format!("duplicate exact hash {}", record.exact_hash));
        }
        let metric = record.metric();
        self.families
            .entry(record.family_hash)
            .and_modify(|f| {
                f.count += 1;
                f.best_primary_metric = f.best_primary_metric.max(metric);
            })
            .or_insert(FamilyStats {
                family_hash: record.family_hash,
                count: 1,
                best_primary_metric: metric,
            });
        self.exact.insert(record.exact_hash, self.records.len());
        self.next_seq = self.next_seq.max(record.inserted_at + 1);
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ArchiveRecord] {
        &self.records
    }

    pub fn families(&self) -> impl Iterator<Item = &FamilyStats> {
        self.families.values()
    }

    pub fn family_count(&self, family_hash: &Digest) -> usize {
        self.families.get(family_hash).map_or(0, |f| f.count)
    }

    pub fn family(&self, family_hash: &Digest) -> Option<&FamilyStats> {
        self.families.get(family_hash)
    }

    pub fn distinct_families(&self) -> usize {
        self.families.len()
    }

    pub fn contains_exact(&self, exact_hash: &Digest) -> bool {
        self.exact.contains_key(exact_hash)
    }

    /// Top `m` records by primary metric; ties go to the earlier insertion.
    pub fn elite(&self, m: usize) -> Vec<&ArchiveRecord> {
        let mut refs: Vec<&ArchiveRecord> = self.records.iter().collect();
        refs.sort_by(|a, b| {
            b.metric()
                .total_cmp(&a.metric())
                .then(a.inserted_at.cmp(&b.inserted_at))
        });
        refs.truncate(m);
        refs
    }

    /// Applies the retention rule: executable, coverage and period gates,
    /// primary metric at least the quality threshold, and an unseen exact hash.
    pub fn try_insert(
        &mut self,
        candidate: &ValidExpr,
        report: &BacktestReport,
        scenario: &Scenario,
        task_id: &str,
        round: u64,
    ) -> Result<InsertOutcome, ArchiveError> {
        use RejectReason::*;
        let reject = |r| Ok(InsertOutcome::Rejected(r));
        if !report.executable {
            return reject(NotExecutable);
        }
        if report.coverage < scenario.min_coverage {
            return reject(Coverage);
        }
        if report.n_periods < scenario.min_periods {
            return reject(TooFewPeriods);
        }
        let Some(metric) = report.primary_metric_value else {
            return reject(NoMetric);
        };
        if !report.valid {
            return reject(NoMetric);
        }
        if metric < scenario.quality_threshold {
            return reject(BelowThreshold);
        }
        let sig = signature(candidate.expr());
        if self.contains_exact(&sig.exact_hash) {
            return reject(Duplicate);
        }
        let record = ArchiveRecord {
            expression: canonicalize(candidate.expr()).to_string(),
            exact_hash: sig.exact_hash,
            family_hash: sig.family_hash,
            report: report.into(),
            behavior: report.behavior.clone(),
            task_id: task_id.to_string(),
            round,
            inserted_at: self.next_seq,
        };
        if let Some(log) = self.log.as_mut() {
            let mut line = serde_json::to_string(&record).map_err(std::io::Error::other)?;
            line.push('\n');
            log.write_all(line.as_bytes())?;
            log.flush()?;
        }
        self.index(record).expect("exact hash checked above");
        Ok(InsertOutcome::Inserted)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), ArchiveError> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn persist(&self, path: impl AsRef<Path>) -> Result<(), ArchiveError> {
        self.write_jsonl(BufWriter::new(File::create(path)?))
    }

    /// Loads a JSON-lines archive. Any corrupt line rejects the whole file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ArchiveError> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, ArchiveError> {
        let mut archive = Self::new();
        for (k, line) in reader.lines().enumerate() {
            let line_no = k + 1;
            let line = line?;
            let corrupt = |message: String| ArchiveError::Corrupt { line: line_no, message };
            let record: ArchiveRecord = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
            let expr = parse(&record.expression).map_err(|e| corrupt(e.to_string()))?;
            let sig = signature(&expr);
            if sig.exact_hash != record.exact_hash || sig.family_hash != record.family_hash {
                return Err(corrupt("signature does not match expression".into()));
            }
            archive.index(record).map_err(corrupt)?;
        }
        Ok(archive)
    }

    /// Path-less copy of the records and indexes.
    pub fn snapshot(&self) -> Archive {
        Archive {
            records: self.records.clone(),
            exact: self.exact.clone(),
            families: self.families.clone(),
            next_seq: self.next_seq,
            log: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backtest::BehaviorMode;
    use crate::factor_dsl::parse_valid;

    fn report(metric: f64, coverage: f64) -> BacktestReport {
        BacktestReport {
            diracc: None,
            ic: Some(metric),
            rankic: Some(metric),
            icir: Some(1.0),
            ic_series: vec![],
            coverage,
            n_periods: 50,
            valid: coverage >= 0.5,
            executable: true,
            behavior: BehaviorProfile::empty(BehaviorMode::Ranking),
            primary_metric_value: Some(metric),
            error: None,
        }
    }

    fn insert(a: &mut Archive, text: &str, metric: f64) -> InsertOutcome {
        let s = Scenario::cross_sectional("t");
        let e = parse_valid(text, &s).unwrap();
        a.try_insert(&e, &report(metric, 0.9), &s, "task", 0).unwrap()
    }

    #[test]
    fn insertion_gates() {
        let s = Scenario::cross_sectional("t");
        let mut a = Archive::new();
        assert_eq!(insert(&mut a, "ts_mean(close, 5)", 0.06), InsertOutcome::Inserted);
        let e = parse_valid("ts_mean(close, 6)", &s).unwrap();
        assert_eq!(
            a.try_insert(&e, &report(0.06, 0.4), &s, "t", 0).unwrap(),
            InsertOutcome::Rejected(RejectReason::Coverage)
        );
        assert_eq!(
            insert(&mut a, "ts_mean(close, 5)", 0.06),
            InsertOutcome::Rejected(RejectReason::Duplicate)
        );
        assert_eq!(
            insert(&mut a, "ts_mean(close, 7)", 0.01),
            InsertOutcome::Rejected(RejectReason::BelowThreshold)
        );
        assert_eq!(a.len(), 1);
    }

    #[test]
    fn elite_ordering() {
        let mut a = Archive::new();
        assert!(a.elite(2).is_empty());
        insert(&mut a, "ts_mean(close, 3)", 0.1);
        insert(&mut a, "ts_mean(close, 4)", 0.3);
        insert(&mut a, "ts_mean(close, 5)", 0.2);
        let e: Vec<f64> = a.elite(2).iter().map(|r| r.metric()).collect();
        assert_eq!(e, vec![0.3, 0.2]);

        let mut b = Archive::new();
        insert(&mut b, "ts_max(close, 3)", 0.2);
        insert(&mut b, "ts_min(close, 3)", 0.2);
        assert_eq!(b.elite(1)[0].expression, "ts_max(close, 3)");
    }

    #[test]
    fn family_indexes() {
        let mut a = Archive::new();
        insert(&mut a, "ts_mean(close, 3)", 0.1);
        insert(&mut a, "ts_mean(close, 9)", 0.05);
        let s = Scenario::cross_sectional("t");
        let sig = signature(parse_valid("ts_mean(close, 3)", &s).unwrap().expr());
        assert_eq!(a.family_count(&sig.family_hash), 2);
        assert_eq!(a.family(&sig.family_hash).unwrap().best_primary_metric, 0.1);
        assert!(a.contains_exact(&sig.exact_hash));
        assert!(!a.contains_exact(&Digest::of(b"nothing")));
        assert_eq!(a.family_count(&Digest::of(b"nothing")), 0);
    }

    #[test]
    fn empty_and_truncated_files() {
        assert!(Archive::read_jsonl(&b""[..]).unwrap().is_empty());
        let mut a = Archive::new();
        insert(&mut a, "ts_mean(close, 3)", 0.1);
        insert(&mut a, "ts_mean(close, 4)", 0.1);
        let mut buf = Vec::new();
        a.write_jsonl(&mut buf).unwrap();
        let cut = &buf[..buf.len() - 10];
        match Archive::read_jsonl(cut) {
            Err(ArchiveError::Corrupt { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tampered_expression_is_refused() {
        let mut a = Archive::new();
        insert(&mut a, "ts_mean(close, 3)", 0.1);
        let mut buf = Vec::new();
        a.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("ts_mean(close, 3)", "ts_mean(close, 4)");
        assert!(matches!(Archive::read_jsonl(text.as_bytes()), Err(ArchiveError::Corrupt { line: 1, .. })));
    }
}
