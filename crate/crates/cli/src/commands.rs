use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use alpha_miner::archive::{Archive, ArchiveRecord};
use alpha_miner::backtest::score_on_window;
use alpha_miner::factor_dsl::{parse_valid, Scenario, ValidExpr};
use alpha_miner::fusion::{self, FusionConfig, DEFAULT_CORR_THRESHOLD};
use alpha_miner::market_data::{future_returns, load_panel, make_windows, save_panel, CsvSchema, TimeWindow};
use alpha_miner::mining_loop::{
    run_campaign, BuiltinGenerator, CampaignConfig, CandidateGenerator, ExternalGenerator, JsonlSink,
    DEFAULT_GROUP_SIZE,
};
use alpha_miner::seeding::{
    build_seed_pool, build_task_bank, generate_raw_seeds, read_seed_file, read_task_bank, write_task_bank, RawSeeds,
    DEFAULT_POOL_SIZE,
};
use alpha_miner::synth::{self, SynthConfig};
use alpha_miner::{Panel, Target};
use serde::Serialize;

use crate::error::CliError;
use crate::manifest::ManifestBuilder;
use crate::settings::*;

const DEFAULT_OUT: &str = "out";
const DEFAULT_SEED_COUNT: usize = 40;
const DEFAULT_TOP: usize = 20;
const DEFAULT_SWEEP_K: [usize; 6] = [3, 5, 10, 20, 25, 30];
const DEFAULT_SWEEP_THRESHOLDS: [f64; 5] = [0.3, 0.5, 0.7, 0.9, 1.0];

// Default splits as fractions of the panel's rows: seeds are scored on the
// first 40%, tasks tile the next 30%, fusion validates there too and tests
// on the remainder.
const SEED_SPLIT: (f64, f64) = (0.0, 0.4);
const TASK_SPLIT: (f64, f64) = (0.4, 0.7);
const TEST_SPLIT: (f64, f64) = (0.7, 1.0);

fn out_dir(common: &mut Common) -> Result<PathBuf, CliError> {
    let out = common.out.get_or_insert_with(|| PathBuf::from(DEFAULT_OUT)).clone();
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(format!("{}: {e}", out.display())))?;
    Ok(out)
}

fn require<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T, CliError> {
    v.as_ref().ok_or_else(|| CliError::input(format!("missing required --{flag}")))
}

fn scenario(common: &Common) -> Result<Scenario, CliError> {
    match &common.scenario {
        Some(p) => Ok(Scenario::load(p).map_err(|e| match CliError::from(e) {
            CliError::Io(m) => CliError::Io(format!("{}: {m}", p.display())),
            other => other,
        })?),
        None => Ok(Scenario::cross_sectional("default")),
    }
}

fn panel(common: &Common) -> Result<Panel, CliError> {
    let path = require(&common.data, "data")?;
    load_panel::<f64>(path, &CsvSchema::default()).map_err(|e| match CliError::from(e) {
        CliError::Io(m) => CliError::Io(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// `@first:last` in row indices spanning a fraction of the panel.
fn split_spec(rows: usize, (a, b): (f64, f64)) -> String {
    let first = (a * rows as f64).floor() as usize;
    let last = ((b * rows as f64).floor() as usize).saturating_sub(1).min(rows.saturating_sub(1));
    format!("@{first}:{last}")
}

/// `start:end` epoch seconds or `@first:last` row indices, both inclusive.
pub fn parse_window(spec: &str, timestamps: &[i64]) -> Result<TimeWindow, CliError> {
    let bad = || CliError::input(format!("bad window `{spec}`: expected start:end or @first:last"));
    let (rows, body) = match spec.strip_prefix('@') {
        Some(rest) => (true, rest),
        None => (false, spec),
    };
    let (a, b) = body.split_once(':').ok_or_else(bad)?;
    let (a, b): (i64, i64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if !rows {
        return Ok(TimeWindow::new(a, b)?);
    }
    let at = |i: i64| {
        usize::try_from(i)
            .ok()
            .and_then(|i| timestamps.get(i).copied())
            .ok_or_else(|| CliError::input(format!("row {i} is outside the panel (0..{})", timestamps.len())))
    };
    Ok(TimeWindow::new(at(a)?, at(b)?)?)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn set_threads(common: &Common) -> Result<(), CliError> {
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::input("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(CliError::io)?;
    }
    Ok(())
}

fn generator(args: &mut GeneratorArgs) -> Result<Box<dyn CandidateGenerator>, CliError> {
    match args.generator.get_or_insert_with(|| "builtin".into()).as_str() {
        "builtin" => Ok(Box::new(BuiltinGenerator::new())),
        "external" => {
            let cmd = require(&args.generator_cmd, "generator-cmd")?;
            let extra = args.generator_args.clone().unwrap_or_default();
            Ok(Box::new(ExternalGenerator::spawn(cmd, &extra)?))
        }
        other => Err(CliError::input(format!("unknown generator `{other}` (builtin|external)"))),
    }
}

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    let mut a = resolve(&args, args.common.config.as_ref())?;
    set_threads(&a.common)?;
    let out = out_dir(&mut a.common)?;
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        n_assets: *a.assets.get_or_insert(defaults.n_assets),
        n_periods: *a.periods.get_or_insert(defaults.n_periods),
        seed: *a.common.seed_rng.get_or_insert(defaults.seed),
        dual: *a.dual.get_or_insert(defaults.dual),
        ..defaults
    };
    let panel = synth::generate(&cfg)?;
    let path = out.join("data.csv");
    save_panel(&panel, &path)?;
    ManifestBuilder::new("synth", args.common.config.as_ref(), &a)?
        .seed("synth", cfg.seed)
        .param("synth", &cfg)?
        .output(&path)?
        .write(&out)?;
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let mut a = resolve(&args, args.common.config.as_ref())?;
    set_threads(&a.common)?;
    let text = require(&a.expr, "expr")?.clone();
    let scenario = scenario(&a.common)?;
    let expr = parse_valid(&text, &scenario)?;
    let panel = panel(&a.common)?;
    let target = future_returns(&panel, scenario.horizon)?;
    let window = match &a.window {
        Some(w) => parse_window(w, panel.timestamps())?,
        None => {
            let w = panel.full_window().ok_or_else(|| CliError::input("empty panel"))?;
            a.window = Some(format!("{}:{}", w.start, w.end));
            w
        }
    };
    let report = score_on_window(&expr, &scenario, &panel, &target, window)?;
    let mut stdout = std::io::stdout().lock();
    match writeln!(stdout, "{}", serde_json::to_string(&report)?) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
        _ => {}
    }
    if a.common.out.is_some() {
        let out = out_dir(&mut a.common)?;
        let path = out.join("eval_report.json");
        write_json(&path, &report)?;
        ManifestBuilder::new("eval", args.common.config.as_ref(), &a)?
            .param("scenario", &scenario)?
            .param("window", &window)?
            .input(a.common.data.as_ref())?
            .input(a.common.scenario.as_ref())?
            .output(&path)?
            .write(&out)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SeedReport<'a> {
    counts: &'a alpha_miner::seeding::StageCounts,
    scoring_window: TimeWindow,
    raw: &'a RawSeeds,
}

pub fn seed(args: SeedArgs) -> Result<(), CliError> {
    let mut a = resolve(&args, args.common.config.as_ref())?;
    set_threads(&a.common)?;
    let scenario = scenario(&a.common)?;
    let panel = panel(&a.common)?;
    let target = future_returns(&panel, scenario.horizon)?;
    let out = out_dir(&mut a.common)?;
    let spec = a
        .scoring_window
        .get_or_insert_with(|| split_spec(panel.n_periods(), SEED_SPLIT))
        .clone();
    let window = parse_window(&spec, panel.timestamps())?;
    let k = *a.pool_size.get_or_insert(DEFAULT_POOL_SIZE);
    let rng = *a.common.seed_rng.get_or_insert(0);

    let raw = match &a.seeds_file {
        Some(path) => RawSeeds {
            candidates: read_seed_file(path).map_err(|e| CliError::from(e).with_path(path))?,
            rejects: Vec::new(),
        },
        None => {
            let m = *a.count.get_or_insert(DEFAULT_SEED_COUNT);
            let mut gen = generator(&mut a.generator)?;
            generate_raw_seeds(gen.as_mut(), &scenario, m, rng)?
        }
    };
    let pool = build_seed_pool(&raw.candidates, &scenario, &panel, &target, window, k)?;

    let pool_path = out.join("seed_pool.txt");
    let mut w = create(&pool_path)?;
    pool.write(&mut w)?;
    drop(w);
    let report_path = out.join("seed_report.json");
    write_json(
        &report_path,
        &SeedReport {
            counts: &pool.counts,
            scoring_window: window,
            raw: &raw,
        },
    )?;
    ManifestBuilder::new("seed", args.common.config.as_ref(), &a)?
        .seed("generator", rng)
        .param("scenario", &scenario)?
        .param("scoring_window", &window)?
        .input(a.common.data.as_ref())?
        .input(a.common.scenario.as_ref())?
        .input(a.seeds_file.as_ref())?
        .output(&pool_path)?
        .output(&report_path)?
        .write(&out)?;
    Ok(())
}

/// Expressions from a pool file: first tab-separated field, `#` comments.
fn read_pool(path: &Path, scenario: &Scenario) -> Result<Vec<ValidExpr>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let expr = line.split('\t').next().unwrap_or("").trim();
        if expr.is_empty() || expr.starts_with('#') {
            continue;
        }
        out.push(
            parse_valid(expr, scenario)
                .map_err(|e| CliError::input(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

pub fn tasks(args: TasksArgs) -> Result<(), CliError> {
    let mut a = resolve(&args, args.common.config.as_ref())?;
    set_threads(&a.common)?;
    let scenario = scenario(&a.common)?;
    let panel = panel(&a.common)?;
    let out = out_dir(&mut a.common)?;
    let pool_path = require(&a.pool, "pool")?.clone();
    let pool = read_pool(&pool_path, &scenario)?;
    let spec = a.range.get_or_insert_with(|| split_spec(panel.n_periods(), TASK_SPLIT)).clone();
    let range = parse_window(&spec, panel.timestamps())?;
    let steps = panel.timestamps().iter().filter(|&&t| range.contains(t)).count().saturating_sub(1);
    let length = *a.window_length.get_or_insert((steps / 2).max(1));
    let stride = *a.window_stride.get_or_insert(length);
    let windows = make_windows(panel.timestamps(), range, length, stride)?;
    let bank = build_task_bank(&pool, &scenario, &windows)?;

    let path = out.join("tasks.jsonl");
    write_task_bank(&bank, create(&path)?)?;
    ManifestBuilder::new("tasks", args.common.config.as_ref(), &a)?
        .param("scenario", &scenario)?
        .param("windows", &windows)?
        .input(a.common.data.as_ref())?
        .input(a.common.scenario.as_ref())?
        .input(Some(&pool_path))?
        .output(&path)?
        .write(&out)?;
    Ok(())
}

pub fn mine(args: MineArgs) -> Result<(), CliError> {
    let mut a = resolve(&args, args.common.config.as_ref())?;
    set_threads(&a.common)?;
    let tasks_path = require(&a.tasks, "tasks")?.clone();
    let file = File::open(&tasks_path).map_err(|e| CliError::io(format!("{}: {e}", tasks_path.display())))?;
    let bank = read_task_bank(BufReader::new(file)).map_err(|e| CliError::from(e).with_path(&tasks_path))?;
    let horizon = bank.first().map(|t| t.scenario.horizon).unwrap_or(1);
    if bank.iter().any(|t| t.scenario.horizon != horizon) {
        return Err(CliError::input("tasks in one bank must share the scenario horizon"));
    }
    let panel = panel(&a.common)?;
    let target: Target = future_returns(&panel, horizon)?;
    let out = out_dir(&mut a.common)?;
    let config = CampaignConfig {
        rounds: *a.rounds.get_or_insert(50),
        group_size: *a.group_size.get_or_insert(DEFAULT_GROUP_SIZE),
        rng_seed: *a.common.seed_rng.get_or_insert(0),
    };
    if config.group_size == 0 {
        return Err(CliError::input("--group-size must be at least 1"));
    }
    let mut gen = generator(&mut a.generator)?;

    // The output archive starts as a copy of --archive, or empty.
    let archive_path = out.join("archive.jsonl");
    let input_archive = a.common.archive.clone();
    match &input_archive {
        Some(src) if !same_file(src, &archive_path) => {
            std::fs::copy(src, &archive_path).map_err(|e| CliError::io(format!("{}: {e}", src.display())))?;
        }
        Some(_) => {}
        None if archive_path.exists() => std::fs::remove_file(&archive_path)?,
        None => {}
    }
    // Hash the input before the run appends to it.
    let builder = ManifestBuilder::new("mine", args.common.config.as_ref(), &a)?
        .seed("campaign", config.rng_seed)
        .param("campaign", &config)?
        .input(a.common.data.as_ref())?
        .input(Some(&tasks_path))?
        .input(input_archive.as_ref())?;
    let mut archive = Archive::open(&archive_path)?;

    let records_path = out.join("training_records.jsonl");
    let mut sink = JsonlSink(create(&records_path)?);
    let summary = run_campaign(&bank, gen.as_mut(), &panel, &target, &mut archive, &config, &mut sink)?;
    drop(sink);
    drop(archive);
    let summary_path = out.join("summary.csv");
    summary.write_csv(create(&summary_path)?)?;

    builder
        .output(&archive_path)?
        .output(&records_path)?
        .output(&summary_path)?
        .write(&out)?;
    Ok(())
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn load_archive(common: &Common) -> Result<(PathBuf, Archive), CliError> {
    let path = require(&common.archive, "archive")?.clone();
    if !path.exists() {
        return Err(CliError::io(format!("{}: archive file not found", path.display())));
    }
    let archive = Archive::load(&path)?;
    Ok((path, archive))
}

pub fn fuse(args: FuseArgs) -> Result<(), CliError> {
    let mut a = resolve(&args, args.common.config.as_ref())?;
    set_threads(&a.common)?;
    let scenario = scenario(&a.common)?;
    let (archive_path, archive) = load_archive(&a.common)?;
    let panel = panel(&a.common)?;
    let target = future_returns(&panel, scenario.horizon)?;
    let out = out_dir(&mut a.common)?;
    let rows = panel.n_periods();
    let vspec = a.validation_window.get_or_insert_with(|| split_spec(rows, TASK_SPLIT)).clone();
    let tspec = a.test_window.get_or_insert_with(|| split_spec(rows, TEST_SPLIT)).clone();
    let config = FusionConfig {
        top_k: *a.top_k.get_or_insert(10),
        corr_threshold: *a.corr_threshold.get_or_insert(DEFAULT_CORR_THRESHOLD),
        validation_window: parse_window(&vspec, panel.timestamps())?,
        test_window: parse_window(&tspec, panel.timestamps())?,
    };
    config.check()?;
    let ks = a.sweep_k.get_or_insert_with(|| DEFAULT_SWEEP_K.to_vec()).clone();
    let thresholds = a
        .sweep_thresholds
        .get_or_insert_with(|| DEFAULT_SWEEP_THRESHOLDS.to_vec())
        .clone();
    if ks.contains(&0) || thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(CliError::input("sweep k must be positive and thresholds must lie in [0, 1]"));
    }

    let report = fusion::run_fusion(&archive, &config, &scenario, &panel, &target)?;
    let ranked = fusion::rank_by_validation(&archive, &scenario, &panel, &target, config.validation_window)?;
    let by_k = fusion::sweep_top_k(&ranked, &ks, &config, &scenario, &panel, &target)?;
    let by_t = fusion::sweep_threshold(&ranked, &thresholds, &config, &scenario, &panel, &target)?;

    let report_path = out.join("fusion.json");
    write_json(&report_path, &report)?;
    let k_path = out.join("sweep_top_k.csv");
    fusion::write_sweep_csv(&by_k, create(&k_path)?)?;
    let t_path = out.join("sweep_threshold.csv");
    fusion::write_sweep_csv(&by_t, create(&t_path)?)?;
    ManifestBuilder::new("fuse", args.common.config.as_ref(), &a)?
        .param("scenario", &scenario)?
        .param("fusion", &config)?
        .input(a.common.data.as_ref())?
        .input(a.common.scenario.as_ref())?
        .input(Some(&archive_path))?
        .output(&report_path)?
        .output(&k_path)?
        .output(&t_path)?
        .write(&out)?;
    Ok(())
}

#[derive(Serialize)]
struct ArchiveSummary<'a> {
    records: usize,
    distinct_families: usize,
    top: Vec<&'a ArchiveRecord>,
}

pub fn report(args: ReportArgs) -> Result<(), CliError> {
    let mut a = resolve(&args, args.common.config.as_ref())?;
    set_threads(&a.common)?;
    let (archive_path, archive) = load_archive(&a.common)?;
    let out = out_dir(&mut a.common)?;
    let top = *a.top.get_or_insert(DEFAULT_TOP);

    let summary_path = out.join("archive_summary.json");
    write_json(
        &summary_path,
        &ArchiveSummary {
            records: archive.len(),
            distinct_families: archive.distinct_families(),
            top: archive.elite(top),
        },
    )?;

    let records_path = out.join("archive_records.csv");
    let mut w = csv::Writer::from_writer(create(&records_path)?);
    w.write_record([
        "inserted_at",
        "round",
        "task_id",
        "expression",
        "family_hash",
        "primary_metric",
        "rankic",
        "ic",
        "icir",
        "diracc",
        "coverage",
    ])
    .map_err(CliError::io)?;
    let num = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    for r in archive.records() {
        w.write_record([
            r.inserted_at.to_string(),
            r.round.to_string(),
            r.task_id.clone(),
            r.expression.clone(),
            r.family_hash.to_hex(),
            num(r.report.primary_metric_value),
            num(r.report.rankic),
            num(r.report.ic),
            num(r.report.icir),
            num(r.report.diracc),
            format!("{:?}", r.report.coverage),
        ])
        .map_err(CliError::io)?;
    }
    w.flush()?;
    drop(w);

    let families_path = out.join("families.csv");
    let mut w = csv::Writer::from_writer(create(&families_path)?);
    w.write_record(["family_hash", "count", "best_primary_metric"]).map_err(CliError::io)?;
    for f in archive.families() {
        w.write_record([f.family_hash.to_hex(), f.count.to_string(), format!("{:?}", f.best_primary_metric)])
            .map_err(CliError::io)?;
    }
    w.flush()?;
    drop(w);

    ManifestBuilder::new("report", args.common.config.as_ref(), &a)?
        .input(Some(&archive_path))?
        .output(&summary_path)?
        .output(&records_path)?
        .output(&families_path)?
        .write(&out)?;
    Ok(())
}
