//! Per-run state shared by the stages of one execution.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use crate::io::IoCounters;
use crate::slice::MemoryMeter;

/// Environment variable naming the directory for mid-writes and other
/// temporary volumes.
pub const TMPDIR_ENV: &str = "STACKSTREAM_TMPDIR";

pub fn default_tmp_dir() -> PathBuf {
    std::env::var_os(TMPDIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir)
}

#[derive(Debug, Clone)]
pub struct RunContext {
    meter: MemoryMeter,
    tmp_dir: PathBuf,
    temp_limit: Option<u64>,
    io: Arc<Mutex<BTreeMap<String, IoCounters>>>,
    passes: Arc<Mutex<BTreeMap<String, u32>>>,
}

impl Default for RunContext {
    fn default() -> Self {
        Self::new()
    }
}

impl RunContext {
    pub fn new() -> Self {
        RunContext {
            meter: MemoryMeter::new(),
            tmp_dir: default_tmp_dir(),
            temp_limit: None,
            io: Arc::default(),
            passes: Arc::default(),
        }
    }

    pub fn with_tmp_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.tmp_dir = dir.into();
        self
    }

    /// Caps the bytes temporary stores may occupy; larger requests fail
    /// before anything is written.
    pub fn with_temp_limit(mut self, bytes: u64) -> Self {
        self.temp_limit = Some(bytes);
        self
    }

    pub fn meter(&self) -> &MemoryMeter {
        &self.meter
    }

    pub fn tmp_dir(&self) -> &Path {
        &self.tmp_dir
    }

    pub fn temp_limit(&self) -> Option<u64> {
        self.temp_limit
    }

    /// Counters for the named source or sink, created on first use.
    pub fn io(&self, stage: &str) -> IoCounters {
        let mut map = self.io.lock().unwrap_or_else(|e| e.into_inner());
        map.entry(stage.to_string()).or_default().clone()
    }

    pub fn io_stats(&self) -> BTreeMap<String, crate::io::IoStats> {
        let map = self.io.lock().unwrap_or_else(|e| e.into_inner());
        map.iter().map(|(k, v)| (k.clone(), v.stats())).collect()
    }

    /// Records one pass over the data by a multi-pass stage.
    pub fn count_pass(&self, stage: &str) {
        let mut map = self.passes.lock().unwrap_or_else(|e| e.into_inner());
        *map.entry(stage.to_string()).or_default() += 1;
    }

    pub fn passes(&self, stage: &str) -> u32 {
        let map = self.passes.lock().unwrap_or_else(|e| e.into_inner());
        map.get(stage).copied().unwrap_or(0)
    }

    pub fn all_passes(&self) -> BTreeMap<String, u32> {
        self.passes.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}
