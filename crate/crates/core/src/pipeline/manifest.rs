use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::pipeline::PipelineError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    /// Relative to the output directory when the file lives inside it.
    pub path: String,
    pub sha256: String,
    /// Data rows, excluding the header and `#` comments.
    pub rows: u64,
}

/// Record of one stage: parameters, input and output digests, summary values.
/// Contains no timestamps or absolute paths, so identical runs produce
/// identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub params: Value,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    pub summary: BTreeMap<String, Value>,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut r = BufReader::new(File::open(path)?);
    let mut h = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = r.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn count_rows(path: &Path) -> std::io::Result<u64> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .comment(Some(b'#'))
        .from_path(path)?;
    let mut n = 0;
    let mut rec = csv::ByteRecord::new();
    while r.read_byte_record(&mut rec).map_err(std::io::Error::other)? {
        n += 1;
    }
    Ok(n)
}

impl Manifest {
    pub fn new(command: &str, params: Value) -> Self {
        Self {
            command: command.to_string(),
            params,
            inputs: Vec::new(),
            outputs: Vec::new(),
            summary: BTreeMap::new(),
        }
    }

    fn entry(out_dir: &Path, path: &Path) -> Result<FileEntry, PipelineError> {
        let data = |e: std::io::Error| PipelineError::Data(format!("{}: {e}", path.display()));
        let shown: PathBuf = path.strip_prefix(out_dir).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf());
        let rows = if path.extension().is_some_and(|e| e == "csv") {
            count_rows(path).map_err(data)?
        } else {
            0
        };
        Ok(FileEntry {
            path: shown.to_string_lossy().replace('\\', "/"),
            sha256: sha256_file(path).map_err(data)?,
            rows,
        })
    }

    /// A missing input is a configuration error: an upstream stage has not run.
    pub fn input(&mut self, out_dir: &Path, path: &Path) -> Result<(), PipelineError> {
        if !path.exists() {
            return Err(PipelineError::Config(format!("missing input {}", path.display())));
        }
        self.inputs.push(Self::entry(out_dir, path)?);
        Ok(())
    }

    pub fn output(&mut self, out_dir: &Path, path: &Path) -> Result<(), PipelineError> {
        self.outputs.push(Self::entry(out_dir, path)?);
        Ok(())
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.summary
            .insert(key.to_string(), serde_json::to_value(value).expect("summary serializes"));
    }

    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digests_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.csv");
        std::fs::write(&f, "# note\nx,y\n1,2\n3,4\n").unwrap();
        let mut m = Manifest::new("t", Value::Null);
        m.output(dir.path(), &f).unwrap();
        assert_eq!(m.outputs[0].path, "a.csv");
        assert_eq!(m.outputs[0].rows, 2);
        assert_eq!(m.outputs[0].sha256.len(), 64);
        let empty = dir.path().join("e.csv");
        std::fs::write(&empty, "").unwrap();
        assert_eq!(
            sha256_file(&empty).unwrap(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
