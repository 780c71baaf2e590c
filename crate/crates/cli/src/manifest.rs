//! Artifact bookkeeping: which subcommand produces each file, content
//! digests, and the append-only `manifest.jsonl`.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.jsonl";

/// `(artifact, producing subcommand)` for every fixed-name artifact.
pub const PRODUCERS: [(&str, &str); 17] = [
    ("corpus.jsonl", "gen-corpus"),
    ("embeddings.ldae", "encode"),
    ("centroids.ldae", "cluster"),
    ("assignments.json", "cluster"),
    ("partition.json", "cluster"),
    ("cluster_stats.json", "cluster"),
    ("elements.ldae", "tune"),
    ("prompts.ldae", "tune"),
    ("head.ldae", "tune"),
    ("tune_curve.csv", "tune"),
    ("tune_summary.json", "tune"),
    ("attribute_report.json", "analyze"),
    ("toy_runs.json", "train-toy"),
    ("overhead.json", "train-toy"),
    ("sweep.csv", "sweep"),
    ("gradcheck.json", "gradcheck"),
    ("report.md", "report"),
];

pub fn producer(artifact: &str) -> &'static str {
    PRODUCERS
        .iter()
        .find(|(a, _)| *a == artifact)
        .map(|(_, p)| *p)
        .expect("every input artifact has a producer")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub stage: String,
    pub config: Value,
    pub config_digest: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_time_s: f64,
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes =
        std::fs::read(path).map_err(|e| CliError::run(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn value_digest(v: &Value) -> String {
    hex::encode(Sha256::digest(
        serde_json::to_vec(v).expect("json value serialises"),
    ))
}

pub fn read_manifest(out: &Path) -> Result<Vec<Entry>, CliError> {
    let path = out.join(MANIFEST);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let f = std::fs::File::open(&path).map_err(CliError::run)?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(CliError::run)?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line)
            .map_err(|e| CliError::run(format!("{MANIFEST} line {}: {e}", i + 1)))?;
        entries.push(e);
    }
    Ok(entries)
}

/// What a stage reports back to the runner.
pub enum Outcome {
    Ran(Entry),
    UpToDate(Entry),
}

pub struct StageRunner<'a> {
    pub out: &'a Path,
    pub force: bool,
}

impl StageRunner<'_> {
    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Checks inputs, skips when nothing changed, otherwise runs `body`
    /// (which returns the names of the files it wrote) and appends a
    /// manifest line.
    pub fn run(
        &self,
        stage: &str,
        inputs: &[&'static str],
        config: Value,
        body: impl FnOnce() -> Result<Vec<String>, CliError>,
    ) -> Result<Outcome, CliError> {
        let mut input_digests = BTreeMap::new();
        for &name in inputs {
            let p = self.path(name);
            if !p.is_file() {
                return Err(CliError::Dependency {
                    artifact: name,
                    producer: producer(name),
                });
            }
            input_digests.insert(name.to_string(), file_digest(&p)?);
        }
        let config_digest = value_digest(&config);

        if !self.force {
            let last = read_manifest(self.out)?
                .into_iter()
                .rev()
                .find(|e| e.stage == stage);
            if let Some(e) = last {
                if e.config_digest == config_digest
                    && e.inputs == input_digests
                    && self.outputs_match(&e.outputs)?
                {
                    return Ok(Outcome::UpToDate(e));
                }
            }
        }

        let start = Instant::now();
        let written = body()?;
        let wall_time_s = start.elapsed().as_secs_f64();
        let mut outputs = BTreeMap::new();
        for name in written {
            let d = file_digest(&self.path(&name))?;
            outputs.insert(name, d);
        }
        let entry = Entry {
            stage: stage.to_string(),
            config,
            config_digest,
            inputs: input_digests,
            outputs,
            wall_time_s,
        };
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path(MANIFEST))
            .map_err(CliError::run)?;
        let line = serde_json::to_string(&entry).expect("entry serialises");
        writeln!(f, "{line}").map_err(CliError::run)?;
        Ok(Outcome::Ran(entry))
    }

    fn outputs_match(&self, outputs: &BTreeMap<String, String>) -> Result<bool, CliError> {
        for (name, digest) in outputs {
            let p = self.path(name);
            if !p.is_file() || &file_digest(&p)? != digest {
                return Ok(false);
            }
        }
        Ok(true)
    }
}
