//! Flag/config-file merging and run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use qclusformer::trainer::parse_kv;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Resolved key=value settings: explicit flags over the config file.
#[derive(Debug, Default)]
pub struct Settings {
    map: BTreeMap<String, String>,
    used: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(
        config: Option<&Path>,
        flags: Vec<(&str, Option<String>)>,
    ) -> Result<Self, CliError> {
        let mut map = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Core(qclusformer::Error::Io(format!("{}: {e}", p.display())))
                })?;
                parse_kv(&text)?
            }
            None => BTreeMap::new(),
        };
        for (k, v) in flags {
            if let Some(v) = v {
                map.insert(k.to_string(), v);
            }
        }
        Ok(Self {
            map,
            used: BTreeMap::new(),
        })
    }

    pub fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => {
                let parsed = v
                    .parse()
                    .map_err(|_| CliError::Usage(format!("invalid value {v:?} for {key}")))?;
                self.used.insert(key.to_string(), v.clone());
                Ok(Some(parsed))
            }
        }
    }

    pub fn or<T: FromStr + ToString>(&mut self, key: &str, default: T) -> Result<T, CliError> {
        match self.get(key)? {
            Some(v) => Ok(v),
            None => {
                self.used.insert(key.to_string(), default.to_string());
                Ok(default)
            }
        }
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T, CliError> {
        self.get(key)?
            .ok_or_else(|| CliError::Usage(format!("missing required --{}", key.replace('_', "-"))))
    }

    pub fn path(&mut self, key: &str) -> Result<PathBuf, CliError> {
        self.require(key)
    }

    pub fn opt_path(&mut self, key: &str) -> Result<Option<PathBuf>, CliError> {
        self.get(key)
    }

    /// Keys the command overrode (used by the training config).
    pub fn raw(&self) -> &BTreeMap<String, String> {
        &self.map
    }

    /// Records a resolved value that was not read through [`Settings::get`].
    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.used.insert(key.to_string(), value.to_string());
    }

    /// Writes `<path>` as a manifest listing every resolved setting and the
    /// SHA-256 of each output.
    pub fn write_manifest(
        &self,
        command: &str,
        path: &Path,
        outputs: &[(&str, &Path)],
    ) -> Result<(), CliError> {
        let mut text = format!("# qclusformer run manifest\ncommand={command}\n");
        for (k, v) in &self.used {
            if k != "config" && k != "manifest" {
                writeln!(text, "{k}={v}").unwrap();
            }
        }
        for (key, out) in outputs {
            let bytes = std::fs::read(out).map_err(|e| {
                CliError::Core(qclusformer::Error::Io(format!("{}: {e}", out.display())))
            })?;
            writeln!(text, "sha256.{key}={}", sha256_hex(&bytes)).unwrap();
        }
        qclusformer::io::write_atomic(path, text.as_bytes()).map_err(CliError::Core)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::new(), |mut s, b| {
            write!(s, "{b:02x}").unwrap();
            s
        })
}

/// `<primary>.manifest` unless overridden.
pub fn manifest_path(settings: &mut Settings, primary: &Path) -> Result<PathBuf, CliError> {
    Ok(settings.opt_path("manifest")?.unwrap_or_else(|| {
        let mut s = primary.as_os_str().to_owned();
        s.push(".manifest");
        PathBuf::from(s)
    }))
}
