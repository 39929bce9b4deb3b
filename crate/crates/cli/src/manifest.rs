use std::fs;
use std::path::Path;

use serde::Serialize;
use sha1::{Digest, Sha1};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub path: String,
    /// Git blob hash of the file contents.
    pub sha1: String,
}

/// What a run read, how it was configured and what it wrote.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<String>,
}

/// `sha1("blob <len>\0" + contents)`, as `git hash-object` computes it.
pub fn git_blob_sha1(contents: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", contents.len()).as_bytes());
    h.update(contents);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: Option<u64>, config: &impl Serialize) -> Self {
        Self {
            subcommand: subcommand.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config: serde_json::to_value(config).expect("arguments serialize"),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.inputs.push(InputFile { path: path.display().to_string(), sha1: git_blob_sha1(&bytes) });
        Ok(())
    }

    pub fn output(&mut self, name: &str) {
        self.outputs.push(name.into());
    }

    pub fn write(mut self, dir: &Path) -> Result<(), CliError> {
        self.outputs.push(MANIFEST_FILE.into());
        crate::output::write_json(dir, MANIFEST_FILE, &self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_git_hash_object() {
        // `printf '' | git hash-object --stdin` and `printf 'hello\n' | ...`
        assert_eq!(git_blob_sha1(b""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
        assert_eq!(git_blob_sha1(b"hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
    }
}
