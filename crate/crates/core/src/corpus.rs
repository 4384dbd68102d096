//! Loading instruction/response datasets from JSONL into an immutable [`Corpus`].

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use tracing::warn;

use crate::error::{Error, Result};

/// Prompt used when none is configured.
pub const DEFAULT_TEMPLATE: &str =
    "Below is an instruction. Write a response.\n\n### Instruction:\n{instruction}\n\n### Response:\n";

const PLACEHOLDER: &str = "{instruction}";

/// Record layout of the input file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// `{"instruction": .., "response": ..}`
    Plain,
    /// `{"instruction": .., "input": .., "output": ..}`
    Alpaca,
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Plain => "plain",
            Format::Alpaca => "alpaca",
        })
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Format::Plain),
            "alpaca" => Ok(Format::Alpaca),
            other => Err(Error::Config(format!(
                "unknown format `{other}` (expected plain|alpaca)"
            ))),
        }
    }
}

/// One instruction-response pair. `id` is its position among accepted records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: usize,
    pub instruction: String,
    pub response: String,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    samples: Vec<Sample>,
    source_path: PathBuf,
    format: Format,
    skipped: usize,
}

impl Corpus {
    pub fn load(path: impl AsRef<Path>, format: Format) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        let mut skipped = 0;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match parse_record(line, format) {
                Ok(pair) => pairs.push(pair),
                Err(reason) => {
                    skipped += 1;
                    warn!(path = %path.display(), line = lineno + 1, "skipping record: {reason}");
                }
            }
        }
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus {
                path: path.to_path_buf(),
                skipped,
            });
        }
        if skipped > 0 {
            warn!(path = %path.display(), skipped, accepted = pairs.len(), "some records were skipped");
        }
        let mut corpus = Corpus::from_pairs(pairs)?;
        corpus.source_path = path.to_path_buf();
        corpus.format = format;
        corpus.skipped = skipped;
        Ok(corpus)
    }

    /// Builds an in-memory corpus; ids follow the iteration order.
    pub fn from_pairs<I, S, T>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut samples = Vec::new();
        for (instruction, response) in pairs {
            let response = response.into();
            if response.trim().is_empty() {
                return Err(Error::Config(format!("sample {} has an empty response", samples.len())));
            }
            samples.push(Sample {
                id: samples.len(),
                instruction: instruction.into(),
                response,
            });
        }
        if samples.is_empty() {
            return Err(Error::EmptyCorpus {
                path: PathBuf::new(),
                skipped: 0,
            });
        }
        Ok(Corpus {
            samples,
            source_path: PathBuf::new(),
            format: Format::Plain,
            skipped: 0,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn get(&self, id: usize) -> Option<&Sample> {
        self.samples.get(id)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn source_path(&self) -> &Path {
        &self.source_path
    }

    pub fn format(&self) -> Format {
        self.format
    }

    /// Number of records rejected at load time.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// Content digest over every sample, used to detect a changed dataset on resume.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for s in &self.samples {
            for part in [s.instruction.as_bytes(), s.response.as_bytes()] {
                hasher.update((part.len() as u64).to_le_bytes());
                hasher.update(part);
            }
        }
        hex::encode(hasher.finalize())
    }

    /// Resolves a list of ids to samples, failing on unknown ids.
    pub fn select(&self, ids: &[usize]) -> Result<Vec<&Sample>> {
        ids.iter()
            .map(|&id| {
                self.get(id)
                    .ok_or_else(|| Error::Selection(format!("sample id {id} is not in the corpus")))
            })
            .collect()
    }
}

fn parse_record(line: &str, format: Format) -> std::result::Result<(String, String), String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("malformed JSON: {e}"))?;
    let obj = value.as_object().ok_or("record is not a JSON object")?;
    let field = |name: &str| -> std::result::Result<Option<&str>, String> {
        match obj.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.as_str())),
            Some(_) => Err(format!("field `{name}` is not a string")),
        }
    };
    let (instruction, response) = match format {
        Format::Plain => {
            let instruction = field("instruction")?.ok_or("missing `instruction`")?;
            let response = field("response")?.ok_or("missing `response`")?;
            (instruction.to_string(), response)
        }
        Format::Alpaca => {
            let instruction = field("instruction")?.ok_or("missing `instruction`")?;
            let input = field("input")?.unwrap_or("");
            let output = field("output")?.ok_or("missing `output`")?;
            let joined = if input.is_empty() {
                instruction.to_string()
            } else {
                format!("{instruction}\n{input}")
            };
            (joined, output)
        }
    };
    if response.trim().is_empty() {
        return Err("empty response".into());
    }
    Ok((instruction, response.to_string()))
}

/// Prompt template with exactly one `{instruction}` placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template(String);

impl Template {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        match text.matches(PLACEHOLDER).count() {
            1 => Ok(Template(text)),
            0 => Err(Error::Config(format!("template has no {PLACEHOLDER} placeholder"))),
            n => Err(Error::Config(format!(
                "template has {n} {PLACEHOLDER} placeholders, expected exactly one"
            ))),
        }
    }

    pub fn render(&self, sample: &Sample) -> String {
        self.render_instruction(&sample.instruction)
    }

    pub fn render_instruction(&self, instruction: &str) -> String {
        self.0.replacen(PLACEHOLDER, instruction, 1)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Default for Template {
    fn default() -> Self {
        Template(DEFAULT_TEMPLATE.to_string())
    }
}
