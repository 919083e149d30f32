//! Append-only JSON-lines evaluation cache, one file per model.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    key: String,
    parameters: Vec<f64>,
    outputs: Vec<f64>,
}

/// Canonical cache key: shortest round-trip representation of each value.
pub fn cache_key(parameters: &[f64]) -> String {
    parameters
        .iter()
        .map(|v| format!("{v:e}"))
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Debug)]
pub struct EvaluationCache {
    dir: PathBuf,
    models: Mutex<HashMap<String, HashMap<String, Vec<f64>>>>,
}

impl EvaluationCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            dir,
            models: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn file_for(&self, model_id: &str) -> PathBuf {
        let safe: String = model_id
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        self.dir.join(format!("{safe}.jsonl"))
    }

    fn load(&self, model_id: &str) -> Result<HashMap<String, Vec<f64>>> {
        let path = self.file_for(model_id);
        let mut map = HashMap::new();
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(map),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(&path, e))?;
        for line in &lines {
            // unreadable lines (torn writes) only cost a re-evaluation
            if let Ok(entry) = serde_json::from_str::<CacheLine>(line) {
                map.insert(entry.key, entry.outputs);
            }
        }
        Ok(map)
    }

    pub fn get(&self, model_id: &str, parameters: &[f64]) -> Result<Option<Vec<f64>>> {
        let mut models = self.models.lock().expect("cache lock poisoned");
        if !models.contains_key(model_id) {
            let loaded = self.load(model_id)?;
            models.insert(model_id.to_string(), loaded);
        }
        Ok(models[model_id].get(&cache_key(parameters)).cloned())
    }

    pub fn insert(&self, model_id: &str, parameters: &[f64], outputs: &[f64]) -> Result<()> {
        let key = cache_key(parameters);
        let mut models = self.models.lock().expect("cache lock poisoned");
        if !models.contains_key(model_id) {
            let loaded = self.load(model_id)?;
            models.insert(model_id.to_string(), loaded);
        }
        let entries = models.get_mut(model_id).expect("loaded above");
        if entries.contains_key(&key) {
            return Ok(());
        }
        let line = serde_json::to_string(&CacheLine {
            key: key.clone(),
            parameters: parameters.to_vec(),
            outputs: outputs.to_vec(),
        })?;
        let path = self.file_for(model_id);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let prefix = if ends_mid_line(&path) { "\n" } else { "" };
        file.write_all(format!("{prefix}{line}\n").as_bytes())
            .map_err(|e| Error::io(&path, e))?;
        entries.insert(key, outputs.to_vec());
        Ok(())
    }

    /// Number of cached evaluations for a model.
    pub fn len(&self, model_id: &str) -> Result<usize> {
        let mut models = self.models.lock().expect("cache lock poisoned");
        if !models.contains_key(model_id) {
            let loaded = self.load(model_id)?;
            models.insert(model_id.to_string(), loaded);
        }
        Ok(models[model_id].len())
    }
}

fn ends_mid_line(path: &Path) -> bool {
    let Ok(mut f) = File::open(path) else {
        return false;
    };
    let mut last = [0u8; 1];
    f.seek(SeekFrom::End(-1)).is_ok() && f.read_exact(&mut last).is_ok() && last[0] != b'\n'
}
