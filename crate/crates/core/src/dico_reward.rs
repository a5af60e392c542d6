//! Diversity-complementarity reward.
//!
//! The total is the clipped sum of four parts:
//!
//! ```text
//! r_pred  = primary metric, or r_invalid for invalid candidates
//! r_exact = -lambda_exact * [exact hash already archived]
//! r_fam   = lambda_new * [unseen family and metric >= tau_new]
//!         - lambda_fam * [family count >= k_fam and family best < tau_q]
//! r_comp  = lambda_low * [c_max <= tau_low] - lambda_corr * max(c_max - tau_corr, 0)
//! total   = clip(r_pred + r_exact + r_fam + r_comp, r_min, r_max)
//! ```
//!
//! `c_max` is the largest behavior-profile correlation with the elite set
//! (0 for an empty elite set or insufficient overlap). All indicators read
//! the archive as it was before the current group is inserted.

use serde::{Deserialize, Serialize};

use crate::archive::{Archive, ArchiveRecord};
use crate::backtest::{BacktestReport, BehaviorProfile};
use crate::factor_dsl::{Scenario, Signature};

fn default_lambda_exact() -> f64 {
    0.05
}
fn default_lambda_new() -> f64 {
    0.02
}
fn default_lambda_fam() -> f64 {
    0.02
}
fn default_lambda_low() -> f64 {
    0.02
}
fn default_lambda_corr() -> f64 {
    0.1
}
fn default_tau_corr() -> f64 {
    0.8
}
fn default_tau_low() -> f64 {
    0.3
}
fn default_k_fam() -> usize {
    5
}
fn default_r_min() -> f64 {
    -1.0
}
fn default_r_max() -> f64 {
    2.0
}
fn default_r_invalid() -> f64 {
    -1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    #[serde(default = "default_lambda_exact")]
    pub lambda_exact: f64,
    #[serde(default = "default_lambda_new")]
    pub lambda_new: f64,
    #[serde(default = "default_lambda_fam")]
    pub lambda_fam: f64,
    #[serde(default = "default_lambda_low")]
    pub lambda_low: f64,
    #[serde(default = "default_lambda_corr")]
    pub lambda_corr: f64,
    #[serde(default = "default_tau_corr")]
    pub tau_corr: f64,
    #[serde(default = "default_tau_low")]
    pub tau_low: f64,
    #[serde(default = "default_k_fam")]
    pub k_fam: usize,
    /// Unseen-family bonus threshold; the scenario quality threshold when absent.
    #[serde(default)]
    pub tau_new: Option<f64>,
    #[serde(default = "default_r_min")]
    pub r_min: f64,
    #[serde(default = "default_r_max")]
    pub r_max: f64,
    #[serde(default = "default_r_invalid")]
    pub r_invalid: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            lambda_exact: default_lambda_exact(),
            lambda_new: default_lambda_new(),
            lambda_fam: default_lambda_fam(),
            lambda_low: default_lambda_low(),
            lambda_corr: default_lambda_corr(),
            tau_corr: default_tau_corr(),
            tau_low: default_tau_low(),
            k_fam: default_k_fam(),
            tau_new: None,
            r_min: default_r_min(),
            r_max: default_r_max(),
            r_invalid: default_r_invalid(),
        }
    }
}

impl RewardParams {
    /// Predictive reward only (all shaping weights zero).
    pub fn without_shaping() -> Self {
        Self {
            lambda_exact: 0.0,
            lambda_new: 0.0,
            lambda_fam: 0.0,
            lambda_low: 0.0,
            lambda_corr: 0.0,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<(), String> {
        let lambdas = [
            self.lambda_exact,
            self.lambda_new,
            self.lambda_fam,
            self.lambda_low,
            self.lambda_corr,
        ];
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err("reward weights must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.tau_corr) || !(0.0..=1.0).contains(&self.tau_low) {
            return Err("tau_corr and tau_low must lie in [0, 1]".into());
        }
        if self.k_fam == 0 {
            return Err("k_fam must be positive".into());
        }
        if !(self.r_min < self.r_max) {
            return Err("r_min must be below r_max".into());
        }
        if !(self.r_min..=self.r_max).contains(&self.r_invalid) {
            return Err("r_invalid must lie in [r_min, r_max]".into());
        }
        Ok(())
    }
}

/// Which indicators fired.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardFlags {
    pub invalid: bool,
    pub exact_repeat: bool,
    pub new_family: bool,
    pub overused_family: bool,
    pub low_correlation: bool,
    pub c_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_pred: f64,
    pub r_exact: f64,
    pub r_fam: f64,
    pub r_comp: f64,
    pub total: f64,
    pub flags: RewardFlags,
}

pub fn predictive_reward(report: &BacktestReport, scenario: &Scenario) -> f64 {
    match report.primary_metric_value {
        Some(v) if report.valid => v,
        _ => scenario.reward.r_invalid,
    }
}

pub fn exact_repeat_penalty(sig: &Signature, archive: &Archive, params: &RewardParams) -> f64 {
    if archive.contains_exact(&sig.exact_hash) {
        -params.lambda_exact
    } else {
        0.0
    }
}

fn family_terms(sig: &Signature, report: &BacktestReport, archive: &Archive, scenario: &Scenario) -> (f64, bool, bool) {
    let params = &scenario.reward;
    let count = archive.family_count(&sig.family_hash);
    let metric = report.primary_metric_value.unwrap_or(f64::NEG_INFINITY);
    let new = count == 0 && metric >= scenario.tau_new();
    let over = count >= params.k_fam
        && archive
            .family(&sig.family_hash)
            .is_some_and(|f| f.best_primary_metric < scenario.quality_threshold);
    let mut r = 0.0;
    if new {
        r += params.lambda_new;
    }
    if over {
        r -= params.lambda_fam;
    }
    (r, new, over)
}

pub fn family_reward(sig: &Signature, report: &BacktestReport, archive: &Archive, scenario: &Scenario) -> f64 {
    family_terms(sig, report, archive, scenario).0
}

/// Largest behavior correlation with any elite record; 0 when none overlap.
pub fn max_elite_correlation(behavior: &BehaviorProfile, elite: &[&ArchiveRecord]) -> f64 {
    elite
        .iter()
        .map(|r| behavior.correlation(&r.behavior).unwrap_or(0.0))
        .fold(None, |acc: Option<f64>, c| Some(acc.map_or(c, |a| a.max(c))))
        .unwrap_or(0.0)
}

/// Complementarity term for a known `c_max`.
pub fn complementarity_term(c_max: f64, params: &RewardParams) -> f64 {
    let low = if c_max <= params.tau_low { params.lambda_low } else { 0.0 };
    low - params.lambda_corr * (c_max - params.tau_corr).max(0.0)
}

pub fn complementarity_reward(behavior: &BehaviorProfile, archive: &Archive, scenario: &Scenario) -> f64 {
    let elite = archive.elite(scenario.elite_size);
    complementarity_term(max_elite_correlation(behavior, &elite), &scenario.reward)
}

/// Archive view shared by every candidate of one group.
pub struct RewardContext<'a> {
    pub archive: &'a Archive,
    pub elite: Vec<&'a ArchiveRecord>,
}

impl<'a> RewardContext<'a> {
    pub fn new(archive: &'a Archive, scenario: &Scenario) -> Self {
        Self {
            archive,
            elite: archive.elite(scenario.elite_size),
        }
    }
}

/// Full breakdown for one candidate. `signature` is `None` for candidates that
/// never parsed; invalid candidates get `r_invalid` with no shaping.
pub fn dico_reward(
    signature: Option<&Signature>,
    report: &BacktestReport,
    scenario: &Scenario,
    ctx: &RewardContext<'_>,
) -> RewardBreakdown {
    let params = &scenario.reward;
    let r_pred = predictive_reward(report, scenario);
    let mut flags = RewardFlags::default();
    let (mut r_exact, mut r_fam, mut r_comp) = (0.0, 0.0, 0.0);
    match signature {
        Some(sig) if report.valid => {
            r_exact = exact_repeat_penalty(sig, ctx.archive, params);
            flags.exact_repeat = r_exact != 0.0 || ctx.archive.contains_exact(&sig.exact_hash);
            let (fam, new, over) = family_terms(sig, report, ctx.archive, scenario);
            r_fam = fam;
            flags.new_family = new;
            flags.overused_family = over;
            let c_max = max_elite_correlation(&report.behavior, &ctx.elite);
            flags.c_max = c_max;
            flags.low_correlation = c_max <= params.tau_low;
            r_comp = complementarity_term(c_max, params);
        }
        _ => flags.invalid = true,
    }
    let total = (r_pred + r_exact + r_fam + r_comp).clamp(params.r_min, params.r_max);
    RewardBreakdown {
        r_pred,
        r_exact,
        r_fam,
        r_comp,
        total,
        flags,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backtest::BehaviorMode;
    use crate::factor_dsl::{parse_valid, signature};

    fn profile(seed: u64) -> BehaviorProfile {
        let vector = (0..60)
            .map(|k| Some(((k as f64 + 1.0) * (seed as f64 + 1.3)).sin()))
            .collect();
        BehaviorProfile {
            mode: BehaviorMode::Ranking,
            timestamps: (0..20).collect(),
            n_assets: 3,
            vector,
        }
    }

    fn report(metric: f64, behavior: BehaviorProfile) -> BacktestReport {
        BacktestReport {
            diracc: None,
            ic: Some(metric),
            rankic: Some(metric),
            icir: None,
            ic_series: vec![],
            coverage: 1.0,
            n_periods: 100,
            valid: true,
            executable: true,
            behavior,
            primary_metric_value: Some(metric),
            error: None,
        }
    }

    fn sig(text: &str) -> Signature {
        signature(parse_valid(text, &Scenario::cross_sectional("t")).unwrap().expr())
    }

    fn insert(a: &mut Archive, text: &str, r: &BacktestReport) {
        let s = Scenario::cross_sectional("t");
        a.try_insert(&parse_valid(text, &s).unwrap(), r, &s, "t", 0).unwrap();
    }

    #[test]
    fn predictive_passthrough_and_invalid() {
        let s = Scenario::cross_sectional("t");
        assert_eq!(predictive_reward(&report(0.05, profile(0)), &s), 0.05);
        let bad = BacktestReport::failed(BehaviorMode::Ranking, "parse");
        assert_eq!(predictive_reward(&bad, &s), -1.0);
        let mut low_cov = report(0.05, profile(0));
        low_cov.coverage = 0.1;
        low_cov.valid = false;
        assert_eq!(predictive_reward(&low_cov, &s), -1.0);
    }

    #[test]
    fn exact_penalty() {
        let s = Scenario::cross_sectional("t");
        let mut a = Archive::new();
        assert_eq!(exact_repeat_penalty(&sig("ts_mean(close, 5)"), &a, &s.reward), 0.0);
        insert(&mut a, "ts_mean(close, 5)", &report(0.05, profile(0)));
        assert_eq!(exact_repeat_penalty(&sig("ts_mean(close, 5)"), &a, &s.reward), -0.05);
    }

    #[test]
    fn family_cases() {
        let s = Scenario::cross_sectional("t");
        let a = Archive::new();
        assert_eq!(family_reward(&sig("ts_mean(close, 5)"), &report(0.06, profile(0)), &a, &s), 0.02);

        let mut lax = s.clone();
        lax.quality_threshold = 0.0;
        let mut a = Archive::new();
        for w in 2..8 {
            let r = report(0.01, profile(w));
            a.try_insert(&parse_valid(&format!("ts_max(close, {w})"), &lax).unwrap(), &r, &lax, "t", 0)
                .unwrap();
        }
        assert_eq!(a.family_count(&sig("ts_max(close, 9)").family_hash), 6);
        assert_eq!(family_reward(&sig("ts_max(close, 9)"), &report(0.01, profile(0)), &a, &s), -0.02);

        let mut b = Archive::new();
        insert(&mut b, "ts_min(close, 3)", &report(0.01, profile(1)));
        let mut lax_b = Archive::new();
        for w in [3, 4] {
            lax_b
                .try_insert(
                    &parse_valid(&format!("ts_min(close, {w})"), &lax).unwrap(),
                    &report(0.01, profile(w)),
                    &lax,
                    "t",
                    0,
                )
                .unwrap();
        }
        assert_eq!(family_reward(&sig("ts_min(close, 9)"), &report(0.5, profile(0)), &lax_b, &s), 0.0);
        assert_eq!(family_reward(&sig("ts_min(close, 9)"), &report(0.0, profile(0)), &lax_b, &s), 0.0);
    }

    #[test]
    fn complementarity_cases() {
        let params = RewardParams::default();
        assert_eq!(complementarity_term(1.0, &params), -((1.0 - 0.8) * 0.1));
        assert_eq!(complementarity_term(0.9, &params), -((0.9 - 0.8) * 0.1));
        assert!((complementarity_term(0.9, &params) + 0.01).abs() < 1e-15);
        assert_eq!(complementarity_term(0.0, &params), 0.02);

        let s = Scenario::cross_sectional("t");
        assert_eq!(complementarity_reward(&profile(3), &Archive::new(), &s), 0.02);
        let mut a = Archive::new();
        insert(&mut a, "ts_mean(close, 5)", &report(0.05, profile(3)));
        let r = complementarity_reward(&profile(3), &a, &s);
        assert!((r - complementarity_term(1.0, &s.reward)).abs() < 1e-12);
    }

    #[test]
    fn total_examples() {
        let s = Scenario::cross_sectional("t");
        let a = Archive::new();
        let ctx = RewardContext::new(&a, &s);
        let b = dico_reward(Some(&sig("ts_mean(close, 5)")), &report(0.05, profile(0)), &s, &ctx);
        assert_eq!(b.total, 0.05 + 0.0 + 0.02 + 0.02);
        assert!(b.flags.new_family && b.flags.low_correlation);

        let bad = BacktestReport::failed(BehaviorMode::Ranking, "x");
        let b = dico_reward(None, &bad, &s, &ctx);
        assert_eq!(b.total, -1.0);
        assert_eq!((b.r_exact, b.r_fam, b.r_comp), (0.0, 0.0, 0.0));

        let mut wide = s.clone();
        wide.reward.lambda_new = 0.05;
        wide.reward.lambda_low = 0.05;
        let b = dico_reward(Some(&sig("ts_mean(close, 5)")), &report(1.95, profile(0)), &wide, &ctx);
        assert_eq!(b.r_fam + b.r_comp, 0.1);
        assert_eq!(b.total, 2.0);
    }
}
