//! Chunked stores and the chunk-to-slice adapter.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dtype::SliceData;
use crate::error::{Error, PlanError, Result};
use crate::slice::{MemoryMeter, Slice};
use crate::stream::{SliceStream, Stream};
use crate::volume::{PlaneMeta, VolumeMeta};

use super::manifest::{Layout, Manifest};
use super::{begin_output, check_complete, end_output, write_atomic, IoCounters};

/// Geometry of a chunked volume. Edge chunks may be partial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkGrid {
    meta: VolumeMeta,
    chunk: [usize; 3],
    grid: [usize; 3],
}

impl ChunkGrid {
    pub fn new(meta: VolumeMeta, chunk: [usize; 3]) -> Result<Self, PlanError> {
        if chunk.contains(&0) {
            return Err(PlanError::InvalidParameter(format!(
                "chunk dims must be >= 1, got {chunk:?}"
            )));
        }
        let dims = meta.dims();
        let grid = [0, 1, 2].map(|a| dims[a].div_ceil(chunk[a]));
        Ok(ChunkGrid { meta, chunk, grid })
    }

    /// Grid of abstract chunks without a backing volume, for cost models.
    pub fn of_counts(grid: [usize; 3], chunk: [usize; 3]) -> Result<Self, PlanError> {
        let meta = VolumeMeta::new(
            grid[0] * chunk[0],
            grid[1] * chunk[1],
            grid[2] * chunk[2],
            crate::dtype::Dtype::U8,
        )?;
        Self::new(meta, chunk)
    }

    pub fn meta(&self) -> VolumeMeta {
        self.meta
    }

    pub fn chunk(&self) -> [usize; 3] {
        self.chunk
    }

    pub fn grid(&self) -> [usize; 3] {
        self.grid
    }

    pub fn count(&self) -> usize {
        self.grid.iter().product()
    }

    /// Chunk indices `[xi, yi, zi]` in z, y, x order.
    pub fn indices(&self) -> impl Iterator<Item = [usize; 3]> {
        let [gx, gy, gz] = self.grid;
        (0..gz).flat_map(move |z| (0..gy).flat_map(move |y| (0..gx).map(move |x| [x, y, z])))
    }

    pub fn file_name(&self, idx: [usize; 3]) -> String {
        format!("c_{}_{}_{}.raw", idx[2], idx[1], idx[0])
    }

    /// First voxel and actual extent of a chunk.
    pub fn region(&self, idx: [usize; 3]) -> ([usize; 3], [usize; 3]) {
        let dims = self.meta.dims();
        let origin = [0, 1, 2].map(|a| idx[a] * self.chunk[a]);
        let extent = [0, 1, 2].map(|a| self.chunk[a].min(dims[a] - origin[a]));
        (origin, extent)
    }

    /// Bytes of one full x-y layer of chunks: `c_z * n_x * n_y * b`.
    pub fn layer_bytes(&self) -> u64 {
        self.chunk[2].min(self.meta.depth) as u64 * self.meta.slice_bytes()
    }
}

pub(crate) fn read_chunk_bytes(dir: &Path, grid: &ChunkGrid, idx: [usize; 3], io: &IoCounters) -> Result<Vec<u8>> {
    let path = dir.join(grid.file_name(idx));
    let (_, e) = grid.region(idx);
    let expected = (e[0] * e[1] * e[2] * grid.meta.dtype.byte_width()) as u64;
    let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
    io.file_opened(bytes.len() as u64);
    io.chunk_read();
    if bytes.len() as u64 != expected {
        return Err(Error::ShortFile {
            path,
            expected,
            found: bytes.len() as u64,
        });
    }
    Ok(bytes)
}

struct ChunkSource {
    dir: PathBuf,
    grid: ChunkGrid,
    next_layer: usize,
    ready: VecDeque<Slice>,
    meter: MemoryMeter,
    io: IoCounters,
}

impl ChunkSource {
    /// Reads one x-y layer of chunks and cuts it into slices. While the
    /// slices are assembled both the raw layer and the slices are live,
    /// which is the two-layer charge.
    fn load_layer(&mut self) -> Result<()> {
        let zi = self.next_layer;
        self.next_layer += 1;
        let meta = self.grid.meta;
        let plane = meta.plane();
        let bw = meta.dtype.byte_width();
        let [gx, gy, _] = self.grid.grid;
        let (_, lz) = self.grid.region([0, 0, zi]);
        let ez = lz[2];
        let _layer = self.meter.charge_aux(ez as u64 * meta.slice_bytes());
        let mut planes = vec![vec![0u8; plane.voxels() * bw]; ez];
        for yi in 0..gy {
            for xi in 0..gx {
                let idx = [xi, yi, zi];
                let bytes = read_chunk_bytes(&self.dir, &self.grid, idx, &self.io)?;
                let (o, e) = self.grid.region(idx);
                for (z, plane) in planes.iter_mut().enumerate().take(e[2]) {
                    for y in 0..e[1] {
                        let src = ((z * e[1] + y) * e[0]) * bw;
                        let dst = ((o[1] + y) * meta.nx + o[0]) * bw;
                        plane[dst..dst + e[0] * bw].copy_from_slice(&bytes[src..src + e[0] * bw]);
                    }
                }
            }
        }
        for p in planes {
            let s = Slice::new(&self.meter, plane, SliceData::from_le_bytes(plane.dtype, &p))?;
            self.io.slice_read();
            self.ready.push_back(s);
        }
        Ok(())
    }

    fn pull(&mut self) -> Option<Result<Slice>> {
        if self.ready.is_empty() {
            if self.next_layer >= self.grid.grid[2] {
                return None;
            }
            if let Err(e) = self.load_layer() {
                self.next_layer = self.grid.grid[2];
                self.ready.clear();
                return Some(Err(e.at_stage("readInChunks", self.next_layer)));
            }
        }
        self.ready.pop_front().map(Ok)
    }
}

/// Streams a chunked store as z-ordered slices. Every chunk file is read
/// exactly once per sweep.
pub fn read_in_chunks(dir: &Path, meter: &MemoryMeter, io: &IoCounters) -> Result<SliceStream> {
    check_complete(dir)?;
    let manifest = Manifest::load(dir)?;
    let grid = match manifest.layout {
        Layout::Chunks { chunk, .. } => ChunkGrid::new(manifest.meta, chunk)?,
        Layout::Stack(_) => {
            return Err(Error::Data(format!(
                "{} is a slice stack; read it with read",
                dir.display()
            )))
        }
    };
    let mut src = ChunkSource {
        dir: dir.to_path_buf(),
        grid,
        next_layer: 0,
        ready: VecDeque::new(),
        meter: meter.clone(),
        io: io.clone(),
    };
    Ok(Stream::new(
        manifest.meta.plane(),
        Some(manifest.meta.depth),
        std::iter::from_fn(move || src.pull()),
    ))
}

/// Buffers one layer of `c_z` slices and writes it as chunk files.
#[derive(Debug)]
pub struct ChunkWriter {
    dir: PathBuf,
    plane: PlaneMeta,
    chunk: [usize; 3],
    layer: Vec<Slice>,
    layers_written: usize,
    depth: usize,
    files: Vec<String>,
    io: IoCounters,
}

impl ChunkWriter {
    pub fn create(dir: &Path, plane: PlaneMeta, chunk: [usize; 3], io: &IoCounters) -> Result<Self> {
        if chunk.contains(&0) {
            return Err(PlanError::InvalidParameter(format!("chunk dims must be >= 1, got {chunk:?}")).into());
        }
        begin_output(dir)?;
        Ok(ChunkWriter {
            dir: dir.to_path_buf(),
            plane,
            chunk,
            layer: Vec::with_capacity(chunk[2]),
            layers_written: 0,
            depth: 0,
            files: Vec::new(),
            io: io.clone(),
        })
    }

    /// Takes ownership of the slice until its layer is flushed.
    pub fn push(&mut self, slice: Slice) -> Result<()> {
        if slice.plane() != self.plane {
            return Err(Error::Data("chunk writer got a slice of another geometry".into()));
        }
        self.layer.push(slice);
        self.depth += 1;
        if self.layer.len() == self.chunk[2] {
            self.flush()?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if self.layer.is_empty() {
            return Ok(());
        }
        let (nx, ny) = (self.plane.nx, self.plane.ny);
        let bw = self.plane.dtype.byte_width();
        let ez = self.layer.len();
        let [cx, cy, _] = self.chunk;
        let planes: Vec<Vec<u8>> = self.layer.iter().map(|s| s.data().to_le_bytes()).collect();
        let zi = self.layers_written;
        for yi in 0..ny.div_ceil(cy) {
            for xi in 0..nx.div_ceil(cx) {
                let (ox, oy) = (xi * cx, yi * cy);
                let (ex, ey) = (cx.min(nx - ox), cy.min(ny - oy));
                let mut bytes = Vec::with_capacity(ex * ey * ez * bw);
                for p in &planes {
                    for y in 0..ey {
                        let src = ((oy + y) * nx + ox) * bw;
                        bytes.extend_from_slice(&p[src..src + ex * bw]);
                    }
                }
                let name = format!("c_{zi}_{yi}_{xi}.raw");
                write_atomic(&self.dir.join(&name), &bytes)?;
                self.io.file_written(bytes.len() as u64);
                self.files.push(name);
            }
        }
        for _ in 0..ez {
            self.io.slice_written();
        }
        self.layer.clear();
        self.layers_written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<ChunkGrid> {
        self.flush()?;
        let meta = VolumeMeta::from_plane(self.plane, self.depth)?;
        let grid = ChunkGrid::new(meta, self.chunk)?;
        Manifest::chunks(&grid).save(&self.dir)?;
        end_output(&self.dir)?;
        Ok(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtype::Dtype;

    #[test]
    fn grid_counts_and_partial_extents() {
        let meta = VolumeMeta::new(12, 10, 9, Dtype::U8).unwrap();
        let g = ChunkGrid::new(meta, [4, 4, 4]).unwrap();
        assert_eq!(g.grid(), [3, 3, 3]);
        assert_eq!(g.count(), 27);
        assert_eq!(g.region([2, 2, 2]), ([8, 8, 8], [4, 2, 1]));
        assert_eq!(g.file_name([1, 2, 0]), "c_0_2_1.raw");
        let order: Vec<_> = g.indices().take(4).collect();
        assert_eq!(order, vec![[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]]);
    }

    #[test]
    fn zero_chunk_rejected() {
        let meta = VolumeMeta::cube(4, Dtype::U8).unwrap();
        assert!(ChunkGrid::new(meta, [0, 1, 1]).is_err());
    }
}
