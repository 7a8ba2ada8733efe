use std::path::{Path, PathBuf};
use std::str::FromStr;

use duosplat::io::{read_key_values, ConfigReader, KeyValues};
use duosplat::{Error, Result};

/// A key=value config whose relative paths resolve against the file's directory.
pub struct ConfigFile {
    reader: ConfigReader,
    base: PathBuf,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let kv = crate::commands::at_path(path, read_key_values(path))?;
        Ok(Self::from_kv(kv, path.parent().unwrap_or(Path::new(".")).to_path_buf()))
    }

    pub fn from_kv(kv: KeyValues, base: PathBuf) -> Self {
        ConfigFile { reader: ConfigReader::new(kv), base }
    }

    fn resolve(&self, raw: &str) -> PathBuf {
        let p = Path::new(raw);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        self.reader.get(key, default)
    }

    pub fn list<T: FromStr>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        self.reader.list(key, default)
    }

    pub fn flag(&mut self, key: &str, default: bool) -> Result<bool> {
        self.reader.flag(key, default)
    }

    pub fn raw(&mut self, key: &str) -> Option<String> {
        self.reader.raw(key)
    }

    /// A typed value with no default.
    pub fn opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| v.parse().map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {v:?}"))))
            .transpose()
    }

    pub fn path(&mut self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(|v| self.resolve(&v))
    }

    pub fn require_path(&mut self, key: &str) -> Result<PathBuf> {
        self.path(key).ok_or_else(|| missing(key))
    }

    /// Comma-separated paths; absent or empty gives an empty list.
    pub fn paths(&mut self, key: &str) -> Vec<PathBuf> {
        match self.raw(key) {
            None => Vec::new(),
            Some(v) => v.split(',').map(str::trim).filter(|t| !t.is_empty()).map(|t| self.resolve(t)).collect(),
        }
    }

    pub fn require_paths(&mut self, key: &str) -> Result<Vec<PathBuf>> {
        let v = self.paths(key);
        if v.is_empty() {
            return Err(missing(key));
        }
        Ok(v)
    }

    pub fn color(&mut self, key: &str, default: [f64; 3]) -> Result<[f64; 3]> {
        let v = self.list(key, default.to_vec())?;
        v.try_into().map_err(|_| Error::InvalidConfig(format!("{key} needs three values")))
    }

    /// Rejects keys that no command read.
    pub fn finish(&self) -> Result<()> {
        self.reader.finish()
    }
}

fn missing(key: &str) -> Error {
    Error::InvalidConfig(format!("missing required key {key:?}"))
}
