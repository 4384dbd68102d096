use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use datasift::{DiversitySource, FilterOrder, Format, IdfScope, ToyUpdate};

use crate::config::{parse_enum, Grid, ProviderKind, Settings, Strategy};

#[derive(Debug, Parser)]
#[command(name = "datasift", version, about = "Iterative instruction-data selection")]
pub struct Cli {
    /// TOML or JSON settings file; flags override it, it overrides DATASIFT_* env vars.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log filter, e.g. `info` or `datasift=debug`.
    #[arg(long, global = true)]
    pub log_level: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every sample: complexity and diversity dumps.
    Score(ScoreArgs),
    /// One-shot selection with a single strategy.
    Select(SelectArgs),
    /// Iterative selection over several epochs.
    Run(RunArgs),
    /// Continue a paused, halted or interrupted run.
    Resume(ResumeArgs),
    /// Run several strategies, optionally over a hyperparameter grid, and compare their subsets.
    Compare(CompareArgs),
    /// Length, score and overlap report for a run.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// JSONL dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_enum::<Format>)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct ProviderArgs {
    #[arg(long, value_parser = parse_enum::<ProviderKind>)]
    pub provider: Option<ProviderKind>,
    /// Completions URL of the remote model server.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Environment variable holding the endpoint's API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// On-disk cache for remote log-probabilities.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Pretraining data for the toy model; defaults to the dataset itself.
    #[arg(long)]
    pub pretrain: Option<PathBuf>,
    #[arg(long, value_parser = parse_enum::<Format>)]
    pub pretrain_format: Option<Format>,
    #[arg(long, value_parser = parse_enum::<ToyUpdate>)]
    pub toy_update: Option<ToyUpdate>,
    /// Prompt template with `{instruction}`.
    #[arg(long)]
    pub template_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuningArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub ngram_min: Option<usize>,
    #[arg(long)]
    pub ngram_max: Option<usize>,
    /// Diversity text: none, i (instruction), o (response) or io.
    #[arg(long, value_parser = parse_enum::<DiversitySource>)]
    pub mode: Option<DiversitySource>,
    #[arg(long, value_parser = parse_enum::<FilterOrder>)]
    pub filter_order: Option<FilterOrder>,
    #[arg(long, value_parser = parse_enum::<IdfScope>)]
    pub idf_scope: Option<IdfScope>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SizeArgs {
    /// Fraction of the corpus selected per epoch.
    #[arg(long, conflicts_with = "count")]
    pub fraction: Option<f64>,
    /// Number of samples selected per epoch.
    #[arg(long)]
    pub count: Option<usize>,
    /// Reservation coefficient: a*M candidates are kept for re-scoring.
    #[arg(long)]
    pub a: Option<f64>,
    /// Weight decay for the n-grams of selected samples.
    #[arg(long)]
    pub b: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long, value_parser = parse_enum::<Strategy>)]
    pub strategy: Option<Strategy>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub size: SizeArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub size: SizeArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Continue from this `state.json` instead of starting over.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Label of the current model checkpoint.
    #[arg(long)]
    pub version_tag: Option<String>,
    /// Re-score even when the model version did not change.
    #[arg(long)]
    pub force: bool,
    #[arg(long, hide = true)]
    pub halt_after: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ResumeArgs {
    #[arg(long)]
    pub state: Option<PathBuf>,
    /// Dataset location, if it moved since the run started.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub version_tag: Option<String>,
    #[arg(long)]
    pub force: bool,
    #[arg(long, hide = true)]
    pub halt_after: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Comma-separated strategies.
    #[arg(long, value_delimiter = ',', value_parser = parse_enum::<Strategy>)]
    pub strategies: Vec<Strategy>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated fractions; one grid axis.
    #[arg(long, value_delimiter = ',', conflicts_with = "count")]
    pub fraction: Vec<f64>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub a: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub b: Vec<f64>,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub state: Option<PathBuf>,
    /// Extra subset as `name=manifest.jsonl`; repeatable.
    #[arg(long)]
    pub extra: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Dataset location, if it moved since the run started.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

impl DataArgs {
    fn apply(&self, s: &mut Settings) {
        s.data.clone_from(&self.data);
        s.format = self.format;
    }
}

impl ProviderArgs {
    fn apply(&self, s: &mut Settings) {
        s.provider = self.provider;
        s.endpoint.clone_from(&self.endpoint);
        s.model.clone_from(&self.model);
        s.api_key_env.clone_from(&self.api_key_env);
        s.max_retries = self.max_retries;
        s.timeout_secs = self.timeout_secs;
        s.max_in_flight = self.max_in_flight;
        s.cache_dir.clone_from(&self.cache_dir);
        s.pretrain.clone_from(&self.pretrain);
        s.pretrain_format = self.pretrain_format;
        s.toy_update = self.toy_update;
        s.template_file.clone_from(&self.template_file);
    }
}

impl TuningArgs {
    fn apply(&self, s: &mut Settings) {
        s.epochs = self.epochs;
        s.ngram_min = self.ngram_min;
        s.ngram_max = self.ngram_max;
        s.mode = self.mode;
        s.filter_order = self.filter_order;
        s.idf_scope = self.idf_scope;
        s.seed = self.seed;
    }
}

impl SizeArgs {
    fn apply(&self, s: &mut Settings) {
        s.fraction = self.fraction;
        s.count = self.count;
        s.a = self.a;
        s.b = self.b;
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Score(_) => "score",
            Command::Select(_) => "select",
            Command::Run(_) => "run",
            Command::Resume(_) => "resume",
            Command::Compare(_) => "compare",
            Command::Report(_) => "report",
        }
    }

    /// The settings layer given on the command line.
    pub fn flags(&self) -> Settings {
        let mut s = Settings::default();
        match self {
            Command::Score(a) => {
                a.data.apply(&mut s);
                a.provider.apply(&mut s);
                a.tuning.apply(&mut s);
                s.out_dir.clone_from(&a.out_dir);
            }
            Command::Select(a) => {
                s.strategy = a.strategy;
                a.data.apply(&mut s);
                a.size.apply(&mut s);
                a.tuning.apply(&mut s);
                a.provider.apply(&mut s);
                s.out_dir.clone_from(&a.out_dir);
            }
            Command::Run(a) => {
                a.data.apply(&mut s);
                a.size.apply(&mut s);
                a.tuning.apply(&mut s);
                a.provider.apply(&mut s);
                s.out_dir.clone_from(&a.out_dir);
                s.state.clone_from(&a.resume);
                s.version_tag.clone_from(&a.version_tag);
                s.force = a.force.then_some(true);
            }
            Command::Resume(a) => {
                s.state.clone_from(&a.state);
                s.data.clone_from(&a.data);
                s.version_tag.clone_from(&a.version_tag);
                s.force = a.force.then_some(true);
            }
            Command::Compare(a) => {
                if !a.strategies.is_empty() {
                    s.strategies = Some(a.strategies.clone());
                }
                a.data.apply(&mut s);
                s.count = a.count;
                let grid = Grid {
                    fraction: a.fraction.clone(),
                    a: a.a.clone(),
                    b: a.b.clone(),
                };
                if grid != Grid::default() {
                    s.grid = Some(grid);
                }
                a.tuning.apply(&mut s);
                a.provider.apply(&mut s);
                s.out_dir.clone_from(&a.out_dir);
            }
            Command::Report(a) => {
                s.state.clone_from(&a.state);
                if !a.extra.is_empty() {
                    s.extra = Some(a.extra.clone());
                }
                s.out.clone_from(&a.out);
                s.csv.clone_from(&a.csv);
                s.data.clone_from(&a.data);
            }
        }
        s
    }

    pub fn halt_after(&self) -> Option<usize> {
        match self {
            Command::Run(a) => a.halt_after,
            Command::Resume(a) => a.halt_after,
            _ => None,
        }
    }
}
