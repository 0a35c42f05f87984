use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError { code: EXIT_RUNTIME, message: message.into() }
    }
}

impl From<snode_core::Error> for CliError {
    fn from(e: snode_core::Error) -> Self {
        match e {
            snode_core::Error::Config(_) => CliError::usage(e.to_string()),
            _ => CliError::runtime(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Worker cap from `SNODE_DMD_THREADS` (default 1).
pub fn thread_cap() -> CliResult<usize> {
    match std::env::var("SNODE_DMD_THREADS") {
        Err(_) => Ok(1),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::usage(format!("SNODE_DMD_THREADS must be a positive integer, got `{s}`"))),
        },
    }
}

/// Flag values layered over an optional JSON config file.
pub struct Resolver {
    file: Map<String, Value>,
    resolved: Map<String, Value>,
}

impl Resolver {
    pub fn new(path: Option<&Path>) -> CliResult<Resolver> {
        let file = match path {
            None => Map::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::runtime(format!("cannot read config {}: {e}", p.display())))?;
                match serde_json::from_str::<Value>(&text) {
                    Ok(Value::Object(m)) => m,
                    Ok(_) => return Err(CliError::usage("config must be a JSON object")),
                    Err(e) => return Err(CliError::usage(format!("config {}: {e}", p.display()))),
                }
            }
        };
        Ok(Resolver { file, resolved: Map::new() })
    }

    /// Flag if given, else the config entry under the flag's name.
    pub fn get<T: DeserializeOwned + serde::Serialize + Clone>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>> {
        let v = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                None | Some(Value::Null) => None,
                Some(raw) => Some(
                    serde_json::from_value(raw.clone())
                        .map_err(|e| CliError::usage(format!("config key `{key}`: {e}")))?,
                ),
            },
        };
        if let Some(x) = &v {
            self.resolved.insert(key.to_string(), serde_json::to_value(x).expect("plain value"));
        }
        Ok(v)
    }

    pub fn or<T: DeserializeOwned + serde::Serialize + Clone>(&mut self, key: &str, flag: Option<T>, default: T) -> CliResult<T> {
        let v = self.get(key, flag)?.unwrap_or(default);
        self.resolved.insert(key.to_string(), serde_json::to_value(&v).expect("plain value"));
        Ok(v)
    }

    pub fn required<T: DeserializeOwned + serde::Serialize + Clone>(&mut self, key: &str, flag: Option<T>) -> CliResult<T> {
        self.get(key, flag)?
            .ok_or_else(|| CliError::usage(format!("missing required --{key}")))
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> CliResult<PathBuf> {
        self.required(key, flag)
    }

    /// Every value that was resolved, for the run manifest.
    pub fn resolved(&self) -> Value {
        Value::Object(self.resolved.clone())
    }
}

/// Parses `WxH`.
pub fn parse_grid(s: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::usage(format!("--grid-out expects WxH, got `{s}`"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    if w < 2 || h < 2 {
        return Err(bad());
    }
    Ok((w, h))
}
