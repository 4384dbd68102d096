//! The epoch loop: score, reserve, select, write the manifest, update the model, persist.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::{reserve_pool, select_epoch, EpochSelection, SelectionConfig};
use crate::complexity::score_pool;
use crate::corpus::{Corpus, Format, Sample};
use crate::diversity::FeatureIndex;
use crate::error::{Error, Result};
use crate::manifest::{write_manifest, ManifestEntry};
use crate::provider::cache::write_atomic;
use crate::provider::{ModelUpdate, Provider, ProviderSpec, ProviderVersion};

pub const STATE_FILE: &str = "state.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    /// Waiting for an externally updated model; continue with `resume` and a new version tag.
    Paused,
    /// Stopped early on request; `resume` continues without a new tag.
    Halted,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRef {
    pub path: PathBuf,
    pub format: Format,
    pub samples: usize,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub selection: EpochSelection,
    /// Samples submitted to the provider this epoch.
    pub scored: usize,
    pub provider_calls: u64,
    pub unscoreable: usize,
    pub seconds: f64,
    /// How the model moved after this epoch; `None` for the final epoch.
    pub model_update: Option<ModelUpdate>,
}

/// Everything needed to continue a run; persisted as `state.json` after every epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub config: SelectionConfig,
    pub provider: ProviderSpec,
    pub data: DataRef,
    pub m: usize,
    pub reserve_size: usize,
    pub reserved_pool: Vec<usize>,
    pub completed_epochs: Vec<EpochRecord>,
    pub provider_version: ProviderVersion,
    /// Most recent `s_com` of every scored sample.
    pub latest_s_com: BTreeMap<usize, f64>,
    pub total_scored: usize,
    pub total_provider_calls: u64,
    pub status: RunStatus,
}

impl RunState {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let state: RunState = serde_json::from_slice(&bytes).map_err(|e| Error::CorruptState {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if state.completed_epochs.len() > state.config.epochs {
            return Err(Error::CorruptState {
                path: path.to_path_buf(),
                reason: format!(
                    "{} epochs recorded for a {}-epoch run",
                    state.completed_epochs.len(),
                    state.config.epochs
                ),
            });
        }
        Ok(state)
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        write_atomic(&out_dir.join(STATE_FILE), &serde_json::to_vec_pretty(self)?)
    }

    pub fn manifest_path(out_dir: &Path, epoch: usize) -> PathBuf {
        out_dir.join(format!("epoch_{epoch}.jsonl"))
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop (status `Halted`) after this many epochs complete in this invocation.
    pub halt_after: Option<usize>,
}

/// Runs the iterative selection from epoch 0.
pub fn run(
    config: &SelectionConfig,
    provider_spec: &ProviderSpec,
    corpus: &Corpus,
    provider: &mut dyn Provider,
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<RunState> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let state = RunState {
        config: config.clone(),
        provider: provider_spec.clone(),
        data: DataRef {
            path: corpus.source_path().to_path_buf(),
            format: corpus.format(),
            samples: corpus.len(),
            fingerprint: corpus.fingerprint(),
        },
        m: config.resolve_m(corpus.len())?,
        reserve_size: config.reserve_size(corpus.len())?,
        reserved_pool: Vec::new(),
        completed_epochs: Vec::new(),
        provider_version: provider.version().clone(),
        latest_s_com: BTreeMap::new(),
        total_scored: 0,
        total_provider_calls: 0,
        status: RunStatus::Running,
    };
    state.save(out_dir)?;
    drive(state, corpus, provider, out_dir, opts)
}

/// Continues a persisted run. The provider must be freshly built from `state.provider`; in-loop
/// training recorded in the state is replayed onto it first.
///
/// After a pause for external training, `version_tag` labels the new model state and must differ
/// from the previous epoch's version unless `force` is set.
pub fn resume(
    state_path: &Path,
    corpus: &Corpus,
    provider: &mut dyn Provider,
    version_tag: Option<&str>,
    force: bool,
    opts: &RunOptions,
) -> Result<RunState> {
    let mut state = RunState::load(state_path)?;
    let out_dir = state_path.parent().unwrap_or_else(|| Path::new("."));
    let corrupt = |reason: String| Error::CorruptState {
        path: state_path.to_path_buf(),
        reason,
    };
    if state.data.fingerprint != corpus.fingerprint() {
        return Err(corrupt(format!(
            "dataset {} no longer matches the one this run started with",
            state.data.path.display()
        )));
    }
    if state.completed_epochs.len() >= state.config.epochs {
        return Err(Error::Selection(format!(
            "run already completed all {} epochs",
            state.config.epochs
        )));
    }
    let template = state.config.template()?;

    for record in &state.completed_epochs {
        if let Some(ModelUpdate::Trained(expected)) = &record.model_update {
            let ids = record.selection.ids();
            let selected = corpus.select(&ids)?;
            match provider.advance(&selected, &template)? {
                ModelUpdate::Trained(got) if &got == expected => {}
                other => {
                    return Err(corrupt(format!(
                        "replaying training after epoch {} gave {other:?}, expected version {expected}",
                        record.selection.epoch
                    )))
                }
            }
        }
    }

    if let Some(last) = state.completed_epochs.last() {
        match &last.model_update {
            Some(ModelUpdate::External) => {
                let tag = version_tag.ok_or_else(|| {
                    Error::Config("the run is waiting for an external model update; pass a version tag".into())
                })?;
                provider.relabel(tag)?;
                if provider.version() == &last.selection.version && !force {
                    return Err(Error::UnchangedVersion(provider.version().to_string()));
                }
            }
            _ => {
                if let Some(tag) = version_tag {
                    warn!(tag, "ignoring version tag: the model is updated in-loop");
                }
                if provider.version() != &state.provider_version {
                    return Err(corrupt(format!(
                        "provider rebuilt at version {} but the run stopped at {}",
                        provider.version(),
                        state.provider_version
                    )));
                }
            }
        }
    }
    state.provider_version = provider.version().clone();
    state.status = RunStatus::Running;
    info!(
        completed = state.completed_epochs.len(),
        version = %state.provider_version,
        "resuming run"
    );
    drive(state, corpus, provider, out_dir, opts)
}

fn drive(
    mut state: RunState,
    corpus: &Corpus,
    provider: &mut dyn Provider,
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<RunState> {
    let config = state.config.clone();
    let template = config.template()?;
    let mut index: Option<FeatureIndex> = None;
    let mut done_here = 0;

    while state.completed_epochs.len() < config.epochs {
        if opts.halt_after.is_some_and(|h| done_here >= h) {
            state.status = RunStatus::Halted;
            state.save(out_dir)?;
            info!(completed = state.completed_epochs.len(), "halting on request");
            return Ok(state);
        }
        let epoch = state.completed_epochs.len();
        let started = Instant::now();

        let pool: Vec<&Sample> = if epoch == 0 {
            corpus.samples().iter().collect()
        } else {
            corpus.select(&state.reserved_pool)?
        };
        let scoring = match score_pool(&pool, &*provider, &template) {
            Ok(s) => s,
            Err(e) => {
                state.save(out_dir)?;
                return Err(e);
            }
        };
        for (&id, s) in &scoring.table.entries {
            state.latest_s_com.insert(id, s.s_com);
        }
        if epoch == 0 {
            state.reserved_pool = match reserve_pool(&scoring.table, state.reserve_size, config.filter_order) {
                Ok(r) => r,
                Err(e) => {
                    state.save(out_dir)?;
                    return Err(e);
                }
            };
        }

        let selection = select_epoch(
            corpus,
            &config,
            state.m,
            epoch,
            &scoring.table,
            &state.latest_s_com,
            &state.reserved_pool,
            &mut index,
        )?;
        let entries: Vec<ManifestEntry> = selection
            .picks
            .iter()
            .map(|p| ManifestEntry::from_pick(p, selection.version.as_str()))
            .collect();
        write_manifest(&RunState::manifest_path(out_dir, epoch), &entries)?;

        let model_update = if epoch + 1 < config.epochs {
            let selected = corpus.select(&selection.ids())?;
            Some(provider.advance(&selected, &template)?)
        } else {
            None
        };

        let seconds = started.elapsed().as_secs_f64();
        state.total_scored += scoring.scored;
        state.total_provider_calls += scoring.calls;
        info!(
            epoch,
            seconds,
            scored = scoring.scored,
            provider_calls = scoring.calls,
            unscoreable = scoring.unscoreable.len(),
            pool = selection.pool_ids.len(),
            selected = selection.picks.len(),
            shortfall = selection.shortfall(),
            total_scored = state.total_scored,
            total_provider_calls = state.total_provider_calls,
            version = %selection.version,
            "epoch complete"
        );
        let paused = model_update == Some(ModelUpdate::External);
        state.completed_epochs.push(EpochRecord {
            selection,
            scored: scoring.scored,
            provider_calls: scoring.calls,
            unscoreable: scoring.unscoreable.len(),
            seconds,
            model_update,
        });
        state.provider_version = provider.version().clone();
        done_here += 1;
        if paused {
            state.status = RunStatus::Paused;
            state.save(out_dir)?;
            info!(
                next_epoch = epoch + 1,
                "paused for an external model update; resume with a new version tag"
            );
            return Ok(state);
        }
        state.save(out_dir)?;
    }
    state.status = RunStatus::Complete;
    state.save(out_dir)?;
    Ok(state)
}
