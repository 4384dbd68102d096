//! Layered settings: command-line flags over a TOML/JSON config file over `DATASIFT_*` env vars.
//! The fully resolved layer is written to `config.resolved.json` and can be fed back via `--config`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use datasift::provider::remote::DEFAULT_API_KEY_ENV;
use datasift::{
    DiversitySource, FilterOrder, Format, IdfScope, ProviderSpec, RemoteSpec, SelectionConfig, SelectionSize, ToySpec,
    ToyUpdate, DEFAULT_TEMPLATE,
};

pub const RESOLVED_FILE: &str = "config.resolved.json";
pub const ENV_PREFIX: &str = "DATASIFT_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Toy,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Longest,
    Random,
    Ifd,
    Iterit,
    Graph,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Longest => "longest",
            Strategy::Random => "random",
            Strategy::Ifd => "ifd",
            Strategy::Iterit => "iterit",
            Strategy::Graph => "graph",
        }
    }
}

/// Hyperparameter lists for `compare`; every combination is run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fraction: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub a: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub b: Vec<f64>,
}

/// One layer of settings. Every field is optional so layers can be merged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Informational in resolved files; ignored on input.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ngram_min: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ngram_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<DiversitySource>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter_order: Option<FilterOrder>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub idf_scope: Option<IdfScope>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provider: Option<ProviderKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_retries: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_in_flight: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrain_format: Option<Format>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub toy_update: Option<ToyUpdate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub version_tag: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub force: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategies: Option<Vec<Strategy>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Grid>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<PathBuf>,
    /// `name=manifest.jsonl` subsets for `report`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extra: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_level: Option<String>,
}

macro_rules! overlay_fields {
    ($base:ident, $top:ident; $($f:ident),* $(,)?) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f; } )*
    };
}

impl Settings {
    /// Fields set in `top` replace those in `self`. A size given in `top` (count or fraction)
    /// replaces both size fields below it.
    pub fn overlay(mut self, top: Settings) -> Settings {
        if top.count.is_some() || top.fraction.is_some() {
            self.count = top.count;
            self.fraction = top.fraction;
        }
        overlay_fields!(self, top; command, data, format, a, b, epochs, ngram_min, ngram_max, mode,
            filter_order, idf_scope, template, template_file, seed, out_dir, provider, endpoint, model,
            api_key_env, max_retries, timeout_secs, max_in_flight, cache_dir, pretrain, pretrain_format,
            toy_update, version_tag, force, strategy, strategies, grid, state, extra, out, csv, log_level);
        self
    }

    /// TOML unless the file name ends in `.json`.
    pub fn from_file(path: &Path) -> anyhow::Result<Settings> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut s: Settings = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        s.command = None;
        Ok(s)
    }

    /// `DATASIFT_<FIELD>` for the scalar fields, e.g. `DATASIFT_MODEL` or `DATASIFT_EPOCHS`.
    pub fn from_env(vars: impl IntoIterator<Item = (String, String)>) -> anyhow::Result<Settings> {
        let mut table = toml::Table::new();
        for (key, value) in vars {
            let Some(field) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let field = field.to_ascii_lowercase();
            let parsed = if ENV_TEXT_FIELDS.contains(&field.as_str()) {
                toml::Value::String(value)
            } else if ENV_NUMBER_FIELDS.contains(&field.as_str()) {
                format!("v = {value}")
                    .parse::<toml::Table>()
                    .ok()
                    .and_then(|mut t| t.remove("v"))
                    .with_context(|| format!("{key}={value} is not a number"))?
            } else {
                continue;
            };
            table.insert(field, parsed);
        }
        let s: Settings = table.try_into().context("reading DATASIFT_* environment variables")?;
        Ok(s)
    }
}

const ENV_TEXT_FIELDS: &[&str] = &[
    "data",
    "format",
    "mode",
    "filter_order",
    "idf_scope",
    "template_file",
    "out_dir",
    "provider",
    "endpoint",
    "model",
    "api_key_env",
    "cache_dir",
    "pretrain",
    "pretrain_format",
    "toy_update",
    "log_level",
];

const ENV_NUMBER_FIELDS: &[&str] = &[
    "fraction",
    "count",
    "a",
    "b",
    "epochs",
    "ngram_min",
    "ngram_max",
    "seed",
    "max_retries",
    "timeout_secs",
    "max_in_flight",
];

/// Parses a flag value with the same spelling as the config file (`filter-first`, `o`, ...).
pub fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

/// Settings with every default filled in.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub settings: Settings,
}

impl Resolved {
    pub fn new(command: &str, s: Settings) -> anyhow::Result<Resolved> {
        let template = match (&s.template_file, &s.template) {
            (Some(path), _) => {
                std::fs::read_to_string(path).with_context(|| format!("reading template {}", path.display()))?
            }
            (None, Some(t)) => t.clone(),
            (None, None) => DEFAULT_TEMPLATE.to_string(),
        };
        let provider = s.provider.unwrap_or(ProviderKind::Toy);
        let remote = provider == ProviderKind::Remote;
        let defaults = RemoteSpec::default();
        let toy = ToySpec::default();
        let sel = SelectionConfig::default();
        let size_default = match sel.size {
            SelectionSize::Fraction(f) => f,
            SelectionSize::Count(_) => unreachable!("default size is a fraction"),
        };
        let settings = Settings {
            command: Some(command.to_string()),
            data: s.data,
            format: Some(s.format.unwrap_or(Format::Plain)),
            fraction: if s.count.is_some() {
                None
            } else {
                Some(s.fraction.unwrap_or(size_default))
            },
            count: s.count,
            a: Some(s.a.unwrap_or(sel.a)),
            b: Some(s.b.unwrap_or(sel.b)),
            epochs: Some(s.epochs.unwrap_or(sel.epochs)),
            ngram_min: Some(s.ngram_min.unwrap_or(sel.ngram_min)),
            ngram_max: Some(s.ngram_max.unwrap_or(sel.ngram_max)),
            mode: Some(s.mode.unwrap_or(sel.diversity)),
            filter_order: Some(s.filter_order.unwrap_or(sel.filter_order)),
            idf_scope: Some(s.idf_scope.unwrap_or(sel.idf_scope)),
            template: Some(template),
            template_file: None,
            seed: Some(s.seed.unwrap_or(0)),
            out_dir: s.out_dir,
            provider: Some(provider),
            endpoint: if remote { s.endpoint } else { None },
            model: if remote { s.model } else { None },
            api_key_env: remote.then(|| s.api_key_env.unwrap_or_else(|| DEFAULT_API_KEY_ENV.into())),
            max_retries: remote.then(|| s.max_retries.unwrap_or(defaults.max_retries)),
            timeout_secs: remote.then(|| s.timeout_secs.unwrap_or(defaults.timeout_secs)),
            max_in_flight: remote.then(|| s.max_in_flight.unwrap_or(defaults.max_in_flight)),
            cache_dir: if remote { s.cache_dir } else { None },
            pretrain: if remote { None } else { s.pretrain },
            pretrain_format: (!remote).then(|| s.pretrain_format.unwrap_or(toy.pretrain_format)),
            toy_update: (!remote).then(|| s.toy_update.unwrap_or(toy.update)),
            version_tag: s.version_tag,
            force: Some(s.force.unwrap_or(false)),
            strategy: s.strategy,
            strategies: s.strategies,
            grid: s.grid,
            state: s.state,
            extra: s.extra,
            out: s.out,
            csv: s.csv,
            log_level: Some(s.log_level.unwrap_or_else(|| "info".into())),
        };
        if remote && (settings.endpoint.is_none() || settings.model.is_none()) {
            bail!("--provider remote needs --endpoint and --model");
        }
        let resolved = Resolved { settings };
        resolved.selection()?.validate()?;
        Ok(resolved)
    }

    pub fn data(&self) -> anyhow::Result<&Path> {
        match &self.settings.data {
            Some(p) => Ok(p),
            None => bail!("--data is required"),
        }
    }

    pub fn out_dir(&self) -> anyhow::Result<&Path> {
        match &self.settings.out_dir {
            Some(p) => Ok(p),
            None => bail!("--out-dir is required"),
        }
    }

    pub fn format(&self) -> Format {
        self.settings.format.unwrap_or(Format::Plain)
    }

    pub fn selection(&self) -> anyhow::Result<SelectionConfig> {
        let s = &self.settings;
        Ok(SelectionConfig {
            size: match (s.count, s.fraction) {
                (Some(c), _) => SelectionSize::Count(c),
                (None, Some(f)) => SelectionSize::Fraction(f),
                (None, None) => SelectionConfig::default().size,
            },
            a: s.a.unwrap_or(3.0),
            b: s.b.unwrap_or(0.1),
            epochs: s.epochs.unwrap_or(3),
            ngram_min: s.ngram_min.unwrap_or(1),
            ngram_max: s.ngram_max.unwrap_or(2),
            template: s.template.clone().unwrap_or_else(|| DEFAULT_TEMPLATE.into()),
            seed: s.seed.unwrap_or(0),
            filter_order: s.filter_order.unwrap_or_default(),
            idf_scope: s.idf_scope.unwrap_or_default(),
            diversity: s.mode.unwrap_or_default(),
        })
    }

    pub fn provider_spec(&self) -> ProviderSpec {
        let s = &self.settings;
        match s.provider.unwrap_or(ProviderKind::Toy) {
            ProviderKind::Toy => ProviderSpec::Toy(ToySpec {
                pretrain: s.pretrain.clone(),
                pretrain_format: s.pretrain_format.unwrap_or(Format::Plain),
                update: s.toy_update.unwrap_or_default(),
                ..ToySpec::default()
            }),
            ProviderKind::Remote => {
                let d = RemoteSpec::default();
                ProviderSpec::Remote(RemoteSpec {
                    endpoint: s.endpoint.clone().unwrap_or_default(),
                    model: s.model.clone().unwrap_or_default(),
                    label: s.version_tag.clone().unwrap_or(d.label),
                    api_key_env: s.api_key_env.clone().unwrap_or(d.api_key_env),
                    max_retries: s.max_retries.unwrap_or(d.max_retries),
                    timeout_secs: s.timeout_secs.unwrap_or(d.timeout_secs),
                    max_in_flight: s.max_in_flight.unwrap_or(d.max_in_flight),
                    cache_dir: s.cache_dir.clone(),
                    ..d
                })
            }
        }
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(RESOLVED_FILE);
        std::fs::write(&path, serde_json::to_vec_pretty(&self.settings)?)
            .with_context(|| format!("writing {}", path.display()))
    }
}
