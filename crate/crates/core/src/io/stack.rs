//! One raw file per slice (or one multipage file) plus a manifest.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use crate::dtype::SliceData;
use crate::error::{Error, Result};
use crate::slice::{MemoryMeter, Slice};
use crate::stream::{Stream, SliceStream};
use crate::volume::{PlaneMeta, VolumeMeta};

use super::manifest::{slice_file_name, Layout, Manifest, SliceEntry};
use super::{begin_output, check_complete, end_output, write_atomic, IoCounters};

struct StackSource {
    dir: PathBuf,
    entries: Vec<SliceEntry>,
    plane: PlaneMeta,
    w: usize,
    next: usize,
    open: Option<(String, File, u64)>,
    batch: VecDeque<Slice>,
    meter: MemoryMeter,
    io: IoCounters,
}

impl StackSource {
    fn read_one(&mut self, z: usize) -> Result<Slice> {
        let entry = &self.entries[z];
        let path = self.dir.join(&entry.file);
        let sb = self.plane.slice_bytes();
        let reopen = !matches!(&self.open, Some((name, _, _)) if *name == entry.file);
        if reopen {
            self.open = None;
            let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
            let len = f.metadata().map_err(|e| Error::io(&path, e))?.len();
            self.io.file_opened(0);
            self.open = Some((entry.file.clone(), f, len));
        }
        let (_, file, len) = self.open.as_mut().expect("file opened above");
        let expected = entry.offset + sb;
        if *len < expected {
            return Err(Error::ShortFile {
                path,
                expected,
                found: *len,
            });
        }
        file.seek(SeekFrom::Start(entry.offset)).map_err(|e| Error::io(&path, e))?;
        let mut buf = vec![0u8; sb as usize];
        file.read_exact(&mut buf).map_err(|e| Error::io(&path, e))?;
        self.io.bytes_read(sb);
        self.io.slice_read();
        Slice::new(&self.meter, self.plane, SliceData::from_le_bytes(self.plane.dtype, &buf))
    }

    fn pull(&mut self) -> Option<Result<Slice>> {
        if self.batch.is_empty() {
            let end = (self.next + self.w).min(self.entries.len());
            while self.next < end {
                let z = self.next;
                self.next += 1;
                match self.read_one(z) {
                    Ok(s) => self.batch.push_back(s),
                    Err(e) => {
                        self.batch.clear();
                        self.next = self.entries.len();
                        return Some(Err(e.at_stage("read", z)));
                    }
                }
            }
            if self.next >= self.entries.len() {
                self.open = None;
            }
        }
        self.batch.pop_front().map(Ok)
    }
}

/// Streams a slice stack in z order, reading `w` slices at a time. Each
/// file is opened once per sweep.
pub fn read_stack(dir: &Path, w: usize, meter: &MemoryMeter, io: &IoCounters) -> Result<SliceStream> {
    check_complete(dir)?;
    let manifest = Manifest::load(dir)?;
    let entries = match manifest.layout {
        Layout::Stack(entries) => entries,
        Layout::Chunks { .. } => {
            return Err(Error::Data(format!(
                "{} is a chunk store; read it with readInChunks",
                dir.display()
            )))
        }
    };
    let plane = manifest.meta.plane();
    let mut src = StackSource {
        dir: dir.to_path_buf(),
        entries,
        plane,
        w: w.max(1),
        next: 0,
        open: None,
        batch: VecDeque::new(),
        meter: meter.clone(),
        io: io.clone(),
    };
    Ok(Stream::new(plane, Some(manifest.meta.depth), std::iter::from_fn(move || src.pull())))
}

/// Writes slices as `NNN.raw` files. The directory carries a partial
/// marker until [`StackWriter::finish`] has written the manifest.
#[derive(Debug)]
pub struct StackWriter {
    dir: PathBuf,
    plane: PlaneMeta,
    depth_hint: usize,
    names: Vec<String>,
    io: IoCounters,
}

impl StackWriter {
    /// `depth` sizes the zero padding; unknown depths get six digits.
    pub fn create(dir: &Path, plane: PlaneMeta, depth: Option<usize>, io: &IoCounters) -> Result<Self> {
        begin_output(dir)?;
        Ok(StackWriter {
            dir: dir.to_path_buf(),
            plane,
            depth_hint: depth.unwrap_or(1_000_000),
            names: Vec::new(),
            io: io.clone(),
        })
    }

    pub fn write(&mut self, slice: &Slice) -> Result<()> {
        if slice.plane() != self.plane {
            return Err(Error::Data(format!(
                "writer for {:?} got a {:?} slice",
                self.plane,
                slice.plane()
            )));
        }
        let z = self.names.len();
        let name = slice_file_name(z, self.depth_hint.max(z + 1));
        let bytes = slice.data().to_le_bytes();
        write_atomic(&self.dir.join(&name), &bytes)?;
        self.io.file_written(bytes.len() as u64);
        self.io.slice_written();
        self.names.push(name);
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.names.len()
    }

    pub fn finish(self) -> Result<VolumeMeta> {
        let meta = VolumeMeta::from_plane(self.plane, self.names.len())?;
        let manifest = Manifest {
            meta,
            layout: Layout::Stack(
                self.names
                    .into_iter()
                    .map(|file| SliceEntry { file, offset: 0 })
                    .collect(),
            ),
        };
        manifest.save(&self.dir)?;
        end_output(&self.dir)?;
        Ok(meta)
    }
}

/// Writes a whole in-memory stream as one multipage file.
pub fn write_multipage(dir: &Path, file: &str, mut input: SliceStream, io: &IoCounters) -> Result<VolumeMeta> {
    begin_output(dir)?;
    let plane = input.plane();
    let mut bytes = Vec::new();
    let mut depth = 0;
    while let Some(s) = input.pull()? {
        bytes.extend_from_slice(&s.data().to_le_bytes());
        depth += 1;
        io.slice_written();
    }
    write_atomic(&dir.join(file), &bytes)?;
    io.file_written(bytes.len() as u64);
    let meta = VolumeMeta::from_plane(plane, depth)?;
    Manifest::multipage(meta, file).save(dir)?;
    end_output(dir)?;
    Ok(meta)
}
