//! Run manifests and the output directory writer.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::data(format!("reading {}: {e}", path.display())))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'a str,
    pub config: &'a RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Wall-clock time of the run; the only field that differs between re-runs.
    pub created_at: String,
}

/// Collects outputs of one run and writes them under the output directory.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root)
            .map_err(|e| CliError::internal(format!("creating {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, contents: &[u8]) -> CliResult<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::internal(format!("creating {}: {e}", parent.display())))?;
        }
        let mut f = fs::File::create(&path)
            .map_err(|e| CliError::internal(format!("creating {}: {e}", path.display())))?;
        f.write_all(contents)
            .map_err(|e| CliError::internal(format!("writing {}: {e}", path.display())))?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// Writes `header` then one line per row, each newline-terminated.
    pub fn write_lines<I, S>(&mut self, rel: &str, header: Option<&str>, rows: I) -> CliResult<PathBuf>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut text = String::new();
        if let Some(h) = header {
            text.push_str(h);
            text.push('\n');
        }
        for r in rows {
            text.push_str(r.as_ref());
            text.push('\n');
        }
        self.write(rel, text.as_bytes())
    }

    pub fn write_jsonl<T: Serialize>(&mut self, rel: &str, items: &[T]) -> CliResult<PathBuf> {
        let rows = items
            .iter()
            .map(serde_json::to_string)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::internal(format!("serializing {rel}: {e}")))?;
        self.write_lines(rel, None, rows)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> CliResult<PathBuf> {
        let mut text =
            serde_json::to_string_pretty(value).map_err(|e| CliError::internal(format!("serializing {rel}: {e}")))?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// Writes `<subcommand>.manifest.json` covering everything written so far.
    pub fn finish(self, subcommand: &str, config: &RunConfig, inputs: &[PathBuf]) -> CliResult<PathBuf> {
        let digest = |p: &PathBuf| -> CliResult<FileDigest> {
            Ok(FileDigest {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        };
        let manifest = Manifest {
            tool: TOOL,
            version: VERSION,
            subcommand,
            config,
            inputs: inputs.iter().map(digest).collect::<CliResult<_>>()?,
            outputs: self.written.iter().map(digest).collect::<CliResult<_>>()?,
            created_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        };
        let mut out = self;
        out.write_json(&format!("{subcommand}.manifest.json"), &manifest)
    }
}
