//! Resolved configuration, run directories and manifests.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use pqcrit::config::KeyValueConfig;
use pqcrit::mesh::checksum_hex;
use serde::Serialize;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or input files.
    Usage(String),
    /// A numerical stage failed.
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Solver(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Solver(m) => write!(f, "solver failure: {m}"),
        }
    }
}

impl From<pqcrit::Error> for CliError {
    fn from(e: pqcrit::Error) -> Self {
        use pqcrit::Error as E;
        match e {
            E::LinearSolver { .. } | E::NoConvergence { .. } | E::Continuation { .. } | E::SobolevSelfTest { .. } => {
                CliError::Solver(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Command-line values layered over a config file; every value read is
/// recorded for the manifest.
pub struct Settings {
    merged: KeyValueConfig,
    resolved: KeyValueConfig,
    inputs: BTreeMap<String, String>,
}

impl Settings {
    pub fn new(config: Option<&Path>, flags: KeyValueConfig) -> CliResult<Self> {
        let mut merged = KeyValueConfig::new();
        let mut inputs = BTreeMap::new();
        if let Some(path) = config {
            let text = read_text(path)?;
            inputs.insert(path.display().to_string(), checksum_hex(text.as_bytes()));
            merged = KeyValueConfig::parse(&text)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?;
        }
        merged.merge(&flags);
        Ok(Settings {
            merged,
            resolved: KeyValueConfig::new(),
            inputs,
        })
    }

    fn record(&mut self, key: &str, value: String) {
        self.resolved.set(key, value).expect("static keys are valid");
    }

    pub fn opt<T: FromStr + ToString>(&mut self, key: &str) -> CliResult<Option<T>> {
        let v = self.merged.parsed::<T>(key)?;
        if let Some(v) = &v {
            self.record(key, v.to_string());
        }
        Ok(v)
    }

    pub fn get<T: FromStr + ToString>(&mut self, key: &str, default: T) -> CliResult<T> {
        let v = self.merged.parsed::<T>(key)?.unwrap_or(default);
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn require<T: FromStr + ToString>(&mut self, key: &str) -> CliResult<T> {
        self.opt(key)?.ok_or_else(|| usage(format!("missing required setting '{key}'")))
    }

    pub fn opt_list<T: FromStr + ToString>(&mut self, key: &str) -> CliResult<Option<Vec<T>>> {
        let v = self.merged.list::<T>(key)?;
        if let Some(v) = &v {
            let s: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            self.record(key, s.join(", "));
        }
        Ok(v)
    }

    pub fn opt_path(&mut self, key: &str) -> CliResult<Option<PathBuf>> {
        Ok(self.opt::<String>(key)?.map(PathBuf::from))
    }

    pub fn flag(&mut self, key: &str) -> CliResult<bool> {
        self.get(key, false)
    }

    /// Read an input file and remember its checksum.
    pub fn input(&mut self, path: &Path) -> CliResult<String> {
        let text = read_text(path)?;
        self.inputs.insert(path.display().to_string(), checksum_hex(text.as_bytes()));
        Ok(text)
    }

    pub fn resolved(&self) -> &KeyValueConfig {
        &self.resolved
    }
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub seed: u64,
    pub tool_version: String,
    pub duration_seconds: f64,
    pub outputs: Vec<String>,
}

/// Output directory plus the bookkeeping for its manifest.
pub struct Run {
    pub command: &'static str,
    dir: Option<PathBuf>,
    out: Option<PathBuf>,
    outputs: Vec<String>,
    started: Instant,
}

impl Run {
    pub fn new(command: &'static str, out: Option<PathBuf>) -> Self {
        Run {
            command,
            dir: None,
            out,
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    /// The run directory: `--out`, or `runs/<unix time>-<config checksum>`.
    pub fn dir(&mut self, settings: &Settings) -> CliResult<PathBuf> {
        if let Some(d) = &self.dir {
            return Ok(d.clone());
        }
        let dir = match &self.out {
            Some(d) => d.clone(),
            None => {
                let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
                let sum = checksum_hex(format!("{}\n{}", self.command, settings.resolved().to_text()).as_bytes());
                PathBuf::from("runs").join(format!("{secs}-{}", &sum[..8]))
            }
        };
        fs::create_dir_all(&dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))?;
        self.dir = Some(dir.clone());
        Ok(dir)
    }

    pub fn write(&mut self, settings: &Settings, name: &str, contents: &str) -> CliResult<PathBuf> {
        let path = self.dir(settings)?.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.push(name.to_string());
        Ok(path)
    }

    /// Write `config.txt` and `manifest.json`.
    pub fn finish(&mut self, settings: &Settings, seed: u64) -> CliResult<PathBuf> {
        self.write(settings, "config.txt", &settings.resolved().to_text())?;
        let manifest = RunManifest {
            command: self.command.to_string(),
            config: settings.resolved().iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            inputs: settings.inputs.clone(),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            duration_seconds: self.started.elapsed().as_secs_f64(),
            outputs: self.outputs.clone(),
        };
        let text = pqcrit::json::to_json_string(&manifest)?;
        let dir = self.dir(settings)?;
        fs::write(dir.join("manifest.json"), text)?;
        Ok(dir)
    }
}
