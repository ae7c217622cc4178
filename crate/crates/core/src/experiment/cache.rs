//! Content-addressed stage directories and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

pub const CACHE_ENV: &str = "MTMONO_CACHE";
pub const DEFAULT_CACHE: &str = ".mtmono-cache";
const STAGE_FILE: &str = "stage.json";

/// `explicit`, else `$MTMONO_CACHE`, else `.mtmono-cache`.
pub fn cache_dir(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os(CACHE_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_CACHE),
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the cache root, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub key: String,
    pub seed: u64,
    /// Relative to the cache root.
    pub dir: String,
    pub inputs: Vec<String>,
    pub artifacts: Vec<Artifact>,
}

impl StageRecord {
    pub fn path(&self, root: &Path, file: &str) -> PathBuf {
        root.join(&self.dir).join(file)
    }

    pub fn has(&self, file: &str) -> bool {
        let want = format!("{}/{file}", self.dir);
        self.artifacts.iter().any(|a| a.path == want)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub config_hash: String,
    pub scheme: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn stage_names(&self) -> Vec<&str> {
        self.stages.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Wall-clock data kept apart from the manifest so that manifests of
/// repeated runs are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub name: String,
    pub cached: bool,
    pub seconds: f64,
}

fn rel(root: &Path, p: &Path) -> String {
    let r = p.strip_prefix(root).unwrap_or(p);
    r.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, out)?;
        } else if p.file_name().is_some_and(|n| n != STAGE_FILE) {
            out.push(p);
        }
    }
    Ok(())
}

fn hash_dir(root: &Path, dir: &Path) -> Result<Vec<Artifact>> {
    let mut files = Vec::new();
    walk(dir, &mut files)?;
    files
        .iter()
        .map(|p| {
            let bytes = fs::metadata(p).map_err(|e| Error::io(p, e))?.len();
            Ok(Artifact {
                path: rel(root, p),
                sha256: sha256_file(p)?,
                bytes,
            })
        })
        .collect()
}

/// Executes stages in order, reusing any stage directory whose key and
/// artifact hashes still match.
pub struct Runner {
    pub root: PathBuf,
    pub global_seed: u64,
    pub records: Vec<StageRecord>,
    pub timings: Vec<StageTiming>,
}

impl Runner {
    pub fn new(root: &Path, global_seed: u64) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Runner {
            root: root.to_path_buf(),
            global_seed,
            records: Vec::new(),
            timings: Vec::new(),
        })
    }

    pub fn stage_seed(&self, name: &str) -> u64 {
        rng::derive_named(self.global_seed, name)
    }

    fn key(name: &str, config: &serde_json::Value, inputs: &[&StageRecord], seed: u64) -> Result<String> {
        let inputs: Vec<serde_json::Value> = inputs
            .iter()
            .map(|r| serde_json::json!({ "stage": r.name, "artifacts": r.artifacts.iter().map(|a| &a.sha256).collect::<Vec<_>>() }))
            .collect();
        let blob = serde_json::json!({ "stage": name, "config": config, "inputs": inputs, "seed": seed });
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&blob)?)))
    }

    fn reusable(&self, dir: &Path, key: &str) -> Option<StageRecord> {
        let text = fs::read_to_string(dir.join(STAGE_FILE)).ok()?;
        let rec: StageRecord = serde_json::from_str(&text).ok()?;
        if rec.key != key || rec.artifacts.is_empty() {
            return None;
        }
        let now = hash_dir(&self.root, dir).ok()?;
        (now == rec.artifacts).then_some(rec)
    }

    /// Runs `body(dir, seed)` unless a complete cached copy exists. Errors
    /// are tagged with the stage name.
    pub fn stage<F>(&mut self, name: &str, config: serde_json::Value, inputs: &[&StageRecord], body: F) -> Result<StageRecord>
    where
        F: FnOnce(&Path, u64) -> Result<()>,
    {
        let start = Instant::now();
        let seed = self.stage_seed(name);
        let key = Self::key(name, &config, inputs, seed)?;
        let dir = self.root.join("stages").join(format!("{name}-{}", &key[..16]));
        let wrap = |e: Error| Error::Stage {
            stage: name.to_string(),
            source: Box::new(e),
        };
        let (rec, cached) = match self.reusable(&dir, &key) {
            Some(rec) => (rec, true),
            None => {
                if dir.exists() {
                    fs::remove_dir_all(&dir).map_err(|e| wrap(Error::io(&dir, e)))?;
                }
                fs::create_dir_all(&dir).map_err(|e| wrap(Error::io(&dir, e)))?;
                body(&dir, seed).map_err(wrap)?;
                let rec = StageRecord {
                    name: name.to_string(),
                    key,
                    seed,
                    dir: rel(&self.root, &dir),
                    inputs: inputs.iter().map(|r| r.name.clone()).collect(),
                    artifacts: hash_dir(&self.root, &dir).map_err(wrap)?,
                };
                let sf = dir.join(STAGE_FILE);
                let text = serde_json::to_string_pretty(&rec).map_err(|e| wrap(e.into()))?;
                fs::write(&sf, text).map_err(|e| wrap(Error::io(&sf, e)))?;
                (rec, false)
            }
        };
        self.timings.push(StageTiming {
            name: name.to_string(),
            cached,
            seconds: start.elapsed().as_secs_f64(),
        });
        self.records.push(rec.clone());
        Ok(rec)
    }
}
