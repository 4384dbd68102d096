use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::Serialize;
use tracing::{info, warn};

use datasift::analysis::{build_report, length_stats, LengthStats, OverlapMatrix, SubsetReport};
use datasift::baselines::{
    select_ifd_only, select_instruction_diverse, select_longest, select_random, select_with_source,
};
use datasift::manifest::{read_manifest, write_jsonl, write_manifest, ManifestEntry};
use datasift::provider::cache::write_atomic;
use datasift::{
    score_pool, Corpus, FeatureIndex, Pick, RunOptions, RunState, RunStatus, Sample, ScoreTable, SelectionConfig,
    SelectionSize,
};

use crate::args::{Cli, Command};
use crate::config::{Resolved, Settings, Strategy, RESOLVED_FILE};
use crate::{logging, UsageError};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(msg.into()))
}

fn resolve(cli: &Cli) -> Result<Resolved> {
    let env = Settings::from_env(std::env::vars())?;
    let file = match &cli.config {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    let mut flags = cli.command.flags();
    flags.log_level.clone_from(&cli.log_level);
    Resolved::new(cli.command.name(), env.overlay(file).overlay(flags))
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let r = resolve(&cli).map_err(|e| usage(format!("{e:#}")))?;
    let opts = RunOptions {
        halt_after: cli.command.halt_after(),
    };
    match &cli.command {
        Command::Score(_) => score(&r),
        Command::Select(_) => select(&r),
        Command::Run(_) if r.settings.state.is_some() => resume(&r, &opts),
        Command::Run(_) => run(&r, &opts),
        Command::Resume(_) => resume(&r, &opts),
        Command::Compare(_) => compare(&r),
        Command::Report(_) => report(&r),
    }
}

/// Starts logging into `dir` and records the resolved settings there. With `keep_existing`, a
/// settings file already in `dir` (e.g. from the run being resumed) is left alone.
fn prepare(r: &Resolved, dir: &Path, keep_existing: bool) -> Result<()> {
    let level = r.settings.log_level.as_deref().unwrap_or("info");
    logging::init(level, dir).map_err(|e| usage(format!("{e:#}")))?;
    if keep_existing && dir.join(RESOLVED_FILE).exists() {
        info!(dir = %dir.display(), "keeping the existing {RESOLVED_FILE}");
        return Ok(());
    }
    r.write(dir)
}

fn required<'a, T: ?Sized>(value: Option<&'a T>, flag: &str) -> Result<&'a T> {
    value.ok_or_else(|| usage(format!("{flag} is required")))
}

fn load_corpus(r: &Resolved) -> Result<Corpus> {
    let path = r.data().map_err(|e| usage(e.to_string()))?;
    let corpus = Corpus::load(path, r.format())?;
    info!(path = %path.display(), samples = corpus.len(), skipped = corpus.skipped(), "corpus loaded");
    Ok(corpus)
}

/// Scores the whole corpus under the provider's initial version.
fn score_corpus(r: &Resolved, corpus: &Corpus, config: &SelectionConfig) -> Result<ScoreTable> {
    let template = config.template()?;
    let provider = r.provider_spec().build(corpus, &template)?;
    let pool: Vec<&Sample> = corpus.samples().iter().collect();
    let scoring = score_pool(&pool, &*provider, &template)?;
    info!(
        version = %scoring.table.version,
        scored = scoring.scored,
        provider_calls = scoring.calls,
        unscoreable = scoring.unscoreable.len(),
        "corpus scored"
    );
    Ok(scoring.table)
}

#[derive(Serialize)]
struct ComplexityRow<'a> {
    id: usize,
    ppl_prior: f64,
    ppl_cond: f64,
    s_com: f64,
    version: &'a str,
}

#[derive(Serialize)]
struct DiversityRow {
    id: usize,
    s_div: f64,
}

fn score(r: &Resolved) -> Result<()> {
    let out = r.out_dir().map_err(|e| usage(e.to_string()))?;
    let corpus = load_corpus(r)?;
    prepare(r, out, false)?;
    let config = r.selection()?;
    let table = score_corpus(r, &corpus, &config)?;
    let rows: Vec<ComplexityRow> = table
        .entries
        .iter()
        .map(|(&id, s)| ComplexityRow {
            id,
            ppl_prior: s.ppl_prior,
            ppl_cond: s.ppl_cond,
            s_com: s.s_com,
            version: s.version.as_str(),
        })
        .collect();
    write_jsonl(&out.join("complexity.jsonl"), &rows)?;

    let texts: Vec<(usize, String)> = corpus
        .samples()
        .iter()
        .map(|s| (s.id, config.diversity.text(s).into_owned()))
        .collect();
    let pool: Vec<(usize, &str)> = texts.iter().map(|(id, t)| (*id, t.as_str())).collect();
    let index = FeatureIndex::build(&pool, config.ngram_min, config.ngram_max)?;
    let rows: Vec<DiversityRow> = index
        .diversity_scores()
        .into_iter()
        .map(|(id, s_div)| DiversityRow { id, s_div })
        .collect();
    write_jsonl(&out.join("diversity.jsonl"), &rows)?;
    info!(out = %out.display(), grams = index.num_grams(), "score dumps written");
    Ok(())
}

/// Manifest file and subset name. The instruction-diversity strategy is a reduced form of
/// GraphFilter and is labelled as such.
fn output_name(strategy: Strategy) -> &'static str {
    match strategy {
        Strategy::Graph => "graphfilter-style",
        other => other.name(),
    }
}

fn entries(picks: &[Pick], version: &str) -> Vec<ManifestEntry> {
    picks.iter().map(|p| ManifestEntry::from_pick(p, version)).collect()
}

/// Single-shot selection. `table` is required for every strategy but `longest` and `random`.
fn select_once(
    strategy: Strategy,
    corpus: &Corpus,
    config: &SelectionConfig,
    table: Option<&ScoreTable>,
) -> Result<Vec<ManifestEntry>> {
    let m = config.resolve_m(corpus.len())?;
    let scored = || table.ok_or_else(|| anyhow!("{} needs complexity scores", strategy.name()));
    Ok(match strategy {
        Strategy::Longest => entries(&select_longest(corpus, m)?.picks, "none"),
        Strategy::Random => entries(&select_random(corpus, m, config.seed)?.picks, "none"),
        Strategy::Ifd => {
            let t = scored()?;
            entries(&select_ifd_only(t, m)?.picks, t.version.as_str())
        }
        Strategy::Iterit => {
            let t = scored()?;
            entries(
                &select_with_source(corpus, t, config, config.diversity)?.picks,
                t.version.as_str(),
            )
        }
        Strategy::Graph => {
            let t = scored()?;
            entries(
                &select_instruction_diverse(corpus, t, config)?.picks,
                t.version.as_str(),
            )
        }
    })
}

fn needs_scores(strategy: Strategy) -> bool {
    !matches!(strategy, Strategy::Longest | Strategy::Random)
}

fn select(r: &Resolved) -> Result<()> {
    let strategy = *required(r.settings.strategy.as_ref(), "--strategy")?;
    let out = r.out_dir().map_err(|e| usage(e.to_string()))?;
    let corpus = load_corpus(r)?;
    prepare(r, out, false)?;
    let config = r.selection()?;
    let table = match needs_scores(strategy) {
        true => Some(score_corpus(r, &corpus, &config)?),
        false => None,
    };
    let manifest = select_once(strategy, &corpus, &config, table.as_ref())?;
    let path = out.join(format!("{}.jsonl", output_name(strategy)));
    write_manifest(&path, &manifest)?;
    info!(strategy = strategy.name(), selected = manifest.len(), path = %path.display(), "manifest written");
    Ok(())
}

fn log_outcome(state: &RunState, out: &Path) {
    info!(
        status = ?state.status,
        epochs = state.completed_epochs.len(),
        total_scored = state.total_scored,
        total_provider_calls = state.total_provider_calls,
        "run stopped"
    );
    if state.status == RunStatus::Paused {
        info!(
            "waiting for an updated model; continue with `datasift resume --state {} --version-tag <tag>`",
            out.join(datasift::selector::STATE_FILE).display()
        );
    }
}

fn run(r: &Resolved, opts: &RunOptions) -> Result<()> {
    let out = r.out_dir().map_err(|e| usage(e.to_string()))?;
    let corpus = load_corpus(r)?;
    prepare(r, out, false)?;
    let config = r.selection()?;
    let spec = r.provider_spec();
    let mut provider = spec.build(&corpus, &config.template()?)?;
    let state = datasift::run(&config, &spec, &corpus, provider.as_mut(), out, opts)?;
    log_outcome(&state, out);
    Ok(())
}

fn resume(r: &Resolved, opts: &RunOptions) -> Result<()> {
    let state_path = required(r.settings.state.as_deref(), "--state")?;
    let dir = state_path.parent().unwrap_or_else(|| Path::new("."));
    let state = RunState::load(state_path)?;
    prepare(r, dir, true)?;
    let data = r.settings.data.clone().unwrap_or_else(|| state.data.path.clone());
    let corpus = Corpus::load(&data, state.data.format)?;
    let mut provider = state.provider.build(&corpus, &state.config.template()?)?;
    let s = &r.settings;
    let state = datasift::resume(
        state_path,
        &corpus,
        provider.as_mut(),
        s.version_tag.as_deref(),
        s.force.unwrap_or(false),
        opts,
    )?;
    log_outcome(&state, dir);
    Ok(())
}

/// One hyperparameter setting of a comparison.
#[derive(Debug, Clone, Serialize)]
struct GridPoint {
    label: String,
    size: SelectionSize,
    a: f64,
    b: f64,
}

fn grid_points(r: &Resolved, base: &SelectionConfig) -> Result<Vec<GridPoint>> {
    let grid = r.settings.grid.clone().unwrap_or_default();
    if !grid.fraction.is_empty() && r.settings.count.is_some() {
        return Err(usage("give either a count or a list of fractions, not both"));
    }
    let sizes: Vec<SelectionSize> = match grid.fraction.is_empty() {
        true => vec![base.size],
        false => grid.fraction.iter().map(|&f| SelectionSize::Fraction(f)).collect(),
    };
    let or_base = |v: &[f64], x: f64| if v.is_empty() { vec![x] } else { v.to_vec() };
    let mut points = Vec::new();
    for &size in &sizes {
        for &a in &or_base(&grid.a, base.a) {
            for &b in &or_base(&grid.b, base.b) {
                let size_label = match size {
                    SelectionSize::Count(c) => format!("count{c}"),
                    SelectionSize::Fraction(f) => format!("fraction{f}"),
                };
                points.push(GridPoint {
                    label: format!("{size_label}_a{a}_b{b}"),
                    size,
                    a,
                    b,
                });
            }
        }
    }
    Ok(points)
}

#[derive(Serialize)]
struct PointReport {
    #[serde(flatten)]
    point: GridPoint,
    /// Output directory relative to the comparison root; empty when there is a single point.
    dir: String,
    m: usize,
    subsets: Vec<SubsetReport>,
    overlap: OverlapMatrix,
}

#[derive(Serialize)]
struct CompareReport {
    data: String,
    samples: usize,
    /// Version that scored the corpus for the score-based baselines.
    score_version: Option<String>,
    corpus: LengthStats,
    points: Vec<PointReport>,
}

fn compare(r: &Resolved) -> Result<()> {
    let strategies = r
        .settings
        .strategies
        .clone()
        .unwrap_or_else(|| vec![Strategy::Longest, Strategy::Random, Strategy::Ifd, Strategy::Iterit]);
    if strategies.is_empty() {
        return Err(usage("--strategies is empty"));
    }
    if strategies.iter().collect::<BTreeSet<_>>().len() != strategies.len() {
        return Err(usage("--strategies lists a strategy twice"));
    }
    let out = r.out_dir().map_err(|e| usage(e.to_string()))?;
    let base = r.selection()?;
    let points = grid_points(r, &base)?;
    let configs: Vec<SelectionConfig> = points
        .iter()
        .map(|p| SelectionConfig {
            size: p.size,
            a: p.a,
            b: p.b,
            ..base.clone()
        })
        .collect();
    for (p, c) in points.iter().zip(&configs) {
        c.validate()
            .map_err(|e| usage(format!("grid point {}: {e}", p.label)))?;
    }
    let corpus = load_corpus(r)?;
    prepare(r, out, false)?;

    let table = match strategies.iter().any(|&s| matches!(s, Strategy::Ifd | Strategy::Graph)) {
        true => Some(score_corpus(r, &corpus, &base)?),
        false => None,
    };
    let spec = r.provider_spec();
    let single = points.len() == 1;
    let mut reports = Vec::new();
    for (point, config) in points.into_iter().zip(configs) {
        let rel = if single { String::new() } else { point.label.clone() };
        let dir: PathBuf = out.join(&rel);
        let mut subsets = Vec::new();
        for &strategy in &strategies {
            let manifest = if strategy == Strategy::Iterit {
                let run_dir = dir.join("iterit");
                let mut provider = spec.build(&corpus, &config.template()?)?;
                let state = datasift::run(
                    &config,
                    &spec,
                    &corpus,
                    provider.as_mut(),
                    &run_dir,
                    &RunOptions::default(),
                )?;
                log_outcome(&state, &run_dir);
                let last = state
                    .completed_epochs
                    .last()
                    .context("iterative run recorded no epochs")?;
                read_manifest(&RunState::manifest_path(&run_dir, last.selection.epoch))?
            } else {
                select_once(strategy, &corpus, &config, table.as_ref())?
            };
            write_manifest(&dir.join(format!("{}.jsonl", output_name(strategy))), &manifest)?;
            subsets.push((
                output_name(strategy).to_string(),
                manifest.iter().map(|e| e.id).collect::<Vec<_>>(),
            ));
        }
        let named: Vec<(String, BTreeSet<usize>)> = subsets
            .iter()
            .map(|(n, ids)| (n.clone(), ids.iter().copied().collect()))
            .collect();
        let overlap = OverlapMatrix::new(&named);
        info!(point = %point.label, "subsets compared");
        reports.push(PointReport {
            dir: rel,
            m: config.resolve_m(corpus.len())?,
            subsets: subsets
                .iter()
                .map(|(name, ids)| {
                    Ok(SubsetReport {
                        name: name.clone(),
                        lengths: length_stats(&corpus, ids)?,
                    })
                })
                .collect::<Result<_>>()?,
            overlap,
            point,
        });
    }
    let all: Vec<usize> = (0..corpus.len()).collect();
    let report = CompareReport {
        data: corpus.source_path().display().to_string(),
        samples: corpus.len(),
        score_version: table.as_ref().map(|t| t.version.to_string()),
        corpus: length_stats(&corpus, &all)?,
        points: reports,
    };
    write_atomic(
        &out.join("report.json"),
        (serde_json::to_string_pretty(&report)? + "\n").as_bytes(),
    )?;
    info!(out = %out.display(), "comparison written");
    Ok(())
}

fn parse_extra(spec: &str) -> Result<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(usage(format!("--extra expects name=manifest.jsonl, got `{spec}`"))),
    }
}

fn report(r: &Resolved) -> Result<()> {
    let s = &r.settings;
    let state_path = required(s.state.as_deref(), "--state")?;
    let out = required(s.out.as_deref(), "--out")?;
    let extras: Vec<(String, PathBuf)> = s
        .extra
        .iter()
        .flatten()
        .map(|e| parse_extra(e))
        .collect::<Result<_>>()?;
    let dir = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let state = RunState::load(state_path)?;
    prepare(r, dir, true)?;
    let data = s.data.clone().unwrap_or_else(|| state.data.path.clone());
    let corpus = Corpus::load(&data, state.data.format)?;
    let mut named = Vec::new();
    for (name, path) in extras {
        let ids: Vec<usize> = read_manifest(&path)?.iter().map(|e| e.id).collect();
        if ids.is_empty() {
            warn!(name, path = %path.display(), "extra manifest is empty");
        }
        named.push((name, ids));
    }
    let report = build_report(&state, &corpus, &named)?;
    write_atomic(out, (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
    if let Some(csv) = &s.csv {
        write_atomic(csv, report.to_csv().as_bytes())?;
    }
    info!(out = %out.display(), epochs = report.epochs.len(), extras = report.extras.len(), "report written");
    Ok(())
}
