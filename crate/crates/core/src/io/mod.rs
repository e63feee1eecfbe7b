//! Slice-stack and chunked-store backends.

pub mod chunks;
pub mod manifest;
pub mod stack;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

pub use chunks::{read_in_chunks, ChunkGrid, ChunkWriter};
pub use manifest::{Layout, Manifest, SliceEntry};
pub use stack::{read_stack, StackWriter};

/// Name of the marker present while an output directory is incomplete.
pub const PARTIAL_MARKER: &str = ".partial";

#[derive(Debug, Default)]
struct Counts {
    slices_read: AtomicU64,
    files_opened: AtomicU64,
    chunks_read: AtomicU64,
    bytes_read: AtomicU64,
    slices_written: AtomicU64,
    files_written: AtomicU64,
    bytes_written: AtomicU64,
}

/// Shared I/O counters for one source or sink.
#[derive(Debug, Clone, Default)]
pub struct IoCounters {
    counts: Arc<Counts>,
}

/// Snapshot of [`IoCounters`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IoStats {
    pub slices_read: u64,
    pub files_opened: u64,
    pub chunks_read: u64,
    pub bytes_read: u64,
    pub slices_written: u64,
    pub files_written: u64,
    pub bytes_written: u64,
}

impl IoCounters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> IoStats {
        let c = &self.counts;
        IoStats {
            slices_read: c.slices_read.load(Ordering::SeqCst),
            files_opened: c.files_opened.load(Ordering::SeqCst),
            chunks_read: c.chunks_read.load(Ordering::SeqCst),
            bytes_read: c.bytes_read.load(Ordering::SeqCst),
            slices_written: c.slices_written.load(Ordering::SeqCst),
            files_written: c.files_written.load(Ordering::SeqCst),
            bytes_written: c.bytes_written.load(Ordering::SeqCst),
        }
    }

    pub(crate) fn slice_read(&self) {
        self.counts.slices_read.fetch_add(1, Ordering::SeqCst);
    }

    pub(crate) fn file_opened(&self, bytes: u64) {
        self.counts.files_opened.fetch_add(1, Ordering::SeqCst);
        self.counts.bytes_read.fetch_add(bytes, Ordering::SeqCst);
    }

    pub(crate) fn bytes_read(&self, bytes: u64) {
        self.counts.bytes_read.fetch_add(bytes, Ordering::SeqCst);
    }

    pub(crate) fn chunk_read(&self) {
        self.counts.chunks_read.fetch_add(1, Ordering::SeqCst);
    }

    pub(crate) fn slice_written(&self) {
        self.counts.slices_written.fetch_add(1, Ordering::SeqCst);
    }

    pub(crate) fn file_written(&self, bytes: u64) {
        self.counts.files_written.fetch_add(1, Ordering::SeqCst);
        self.counts.bytes_written.fetch_add(bytes, Ordering::SeqCst);
    }
}

/// Writes `bytes` to `path` through a temporary name and a rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Fails if `dir` holds the partial-output marker.
pub(crate) fn check_complete(dir: &Path) -> Result<()> {
    if dir.join(PARTIAL_MARKER).exists() {
        return Err(Error::PartialOutput(dir.to_path_buf()));
    }
    Ok(())
}

pub(crate) fn begin_output(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let marker = dir.join(PARTIAL_MARKER);
    fs::write(&marker, b"").map_err(|e| Error::io(&marker, e))
}

pub(crate) fn end_output(dir: &Path) -> Result<()> {
    let marker = dir.join(PARTIAL_MARKER);
    fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))
}
