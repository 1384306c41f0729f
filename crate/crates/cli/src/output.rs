use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use subsetq::{Error, Result};

/// The output directory; every artifact path goes through here.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::Format(format!("cannot serialize {name}: {e}")))?;
        self.write_text(name, &(text + "\n"))
    }

    pub fn csv_writer(&self, name: &str) -> Result<(csv::Writer<fs::File>, PathBuf)> {
        let path = self.path(name);
        let w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        Ok((w, path))
    }
}

pub fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Csv { path: path.to_path_buf(), detail: e.to_string() }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}
