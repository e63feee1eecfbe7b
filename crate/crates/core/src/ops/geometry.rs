//! Extent edits and axis permutations.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::context::RunContext;
use crate::dtype::{SliceData, Voxel};
use crate::error::{Error, PlanError, Result};
use crate::io::chunks::{read_chunk_bytes, ChunkGrid, ChunkWriter};
use crate::slice::Slice;
use crate::stream::{SliceStream, Stream};
use crate::volume::{PlaneMeta, VolumeMeta};
use crate::with_voxel;

/// Half-open box `[x0, x1) x [y0, y1) x [z0, z1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub z0: usize,
    pub x1: usize,
    pub y1: usize,
    pub z1: usize,
}

impl Region {
    pub fn new(lo: [usize; 3], hi: [usize; 3]) -> Self {
        Region {
            x0: lo[0],
            y0: lo[1],
            z0: lo[2],
            x1: hi[0],
            y1: hi[1],
            z1: hi[2],
        }
    }

    pub fn full(meta: &VolumeMeta) -> Self {
        Region::new([0, 0, 0], meta.dims())
    }

    pub fn output_meta(&self, meta: &VolumeMeta) -> Result<VolumeMeta, PlanError> {
        let dims = meta.dims();
        let lo = [self.x0, self.y0, self.z0];
        let hi = [self.x1, self.y1, self.z1];
        for a in 0..3 {
            if lo[a] >= hi[a] || hi[a] > dims[a] {
                return Err(PlanError::InvalidParameter(format!(
                    "crop box {self} lies outside volume {}x{}x{}",
                    dims[0], dims[1], dims[2]
                )));
            }
        }
        VolumeMeta::new(hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2], meta.dtype)
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{},{},{}", self.x0, self.y0, self.z0, self.x1, self.y1, self.z1)
    }
}

impl FromStr for Region {
    type Err = PlanError;

    fn from_str(s: &str) -> Result<Self, PlanError> {
        let v: Vec<usize> = s
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| PlanError::InvalidParameter(format!("bad crop box `{s}`")))?;
        if v.len() != 6 {
            return Err(PlanError::InvalidParameter(format!(
                "crop box needs x0,y0,z0,x1,y1,z1, got `{s}`"
            )));
        }
        Ok(Region::new([v[0], v[1], v[2]], [v[3], v[4], v[5]]))
    }
}

fn crop_slice(r: &Region, s: &Slice) -> Result<Slice> {
    let p = s.plane();
    let out = PlaneMeta::new(r.x1 - r.x0, r.y1 - r.y0, p.dtype)?;
    let data = with_voxel!(p.dtype, T => {
        let v = s.values::<T>();
        let mut o = Vec::with_capacity(out.voxels());
        for y in r.y0..r.y1 {
            o.extend_from_slice(&v[y * p.nx + r.x0..y * p.nx + r.x1]);
        }
        T::wrap(o)
    });
    s.derive(out, data)
}

/// Keeps slices `z0..z1` and crops each in x-y. Input after `z1` is not
/// pulled.
pub fn crop_stream(region: Region, input: SliceStream) -> Result<SliceStream> {
    let plane = input.plane();
    let in_meta = VolumeMeta::from_plane(plane, input.depth().unwrap_or(region.z1.max(1)))?;
    let out = region.output_meta(&in_meta)?;
    let mut input = input;
    let mut z = 0usize;
    Ok(Stream::new(
        out.plane(),
        Some(out.depth),
        std::iter::from_fn(move || loop {
            if z >= region.z1 {
                return None;
            }
            match input.pull() {
                Ok(Some(s)) => {
                    z += 1;
                    if z - 1 < region.z0 {
                        continue;
                    }
                    return Some(crop_slice(&region, &s));
                }
                Ok(None) => {
                    return Some(Err(Error::Data(format!(
                        "crop expected slices up to z={} but the input ended at {z}",
                        region.z1
                    ))))
                }
                Err(e) => return Some(Err(e)),
            }
        }),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    Clamp,
}

impl fmt::Display for PadMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PadMode::Zero => "zero",
            PadMode::Clamp => "clamp",
        })
    }
}

/// Padding before and after each axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PadSpec {
    pub x: [usize; 2],
    pub y: [usize; 2],
    pub z: [usize; 2],
    pub mode: PadMode,
}

impl PadSpec {
    pub fn output_meta(&self, meta: &VolumeMeta) -> Result<VolumeMeta, PlanError> {
        VolumeMeta::new(
            meta.nx + self.x[0] + self.x[1],
            meta.ny + self.y[0] + self.y[1],
            meta.depth + self.z[0] + self.z[1],
            meta.dtype,
        )
    }

    fn pad_slice(&self, s: &Slice) -> Result<Slice> {
        let p = s.plane();
        let out = PlaneMeta::new(p.nx + self.x[0] + self.x[1], p.ny + self.y[0] + self.y[1], p.dtype)?;
        let clamp = self.mode == PadMode::Clamp;
        let data = with_voxel!(p.dtype, T => {
            let v = s.values::<T>();
            let mut o = Vec::with_capacity(out.voxels());
            for y in 0..out.ny {
                let sy = y as isize - self.y[0] as isize;
                let y_in = (0..p.ny as isize).contains(&sy);
                for x in 0..out.nx {
                    let sx = x as isize - self.x[0] as isize;
                    let x_in = (0..p.nx as isize).contains(&sx);
                    let val = if x_in && y_in {
                        v[sy as usize * p.nx + sx as usize]
                    } else if clamp {
                        let cx = sx.clamp(0, p.nx as isize - 1) as usize;
                        let cy = sy.clamp(0, p.ny as isize - 1) as usize;
                        v[cy * p.nx + cx]
                    } else {
                        T::default()
                    };
                    o.push(val);
                }
            }
            T::wrap(o)
        });
        s.derive(out, data)
    }
}

struct PadState {
    spec: PadSpec,
    input: SliceStream,
    out_plane: PlaneMeta,
    before: usize,
    after: usize,
    first: Option<Slice>,
    last: Option<Slice>,
    input_done: bool,
}

impl PadState {
    fn zero_like(&self) -> Result<Slice> {
        // a zero slice needs a meter; borrow it from a live slice
        let holder = self.first.as_ref().or(self.last.as_ref());
        match holder {
            Some(h) => h.derive(self.out_plane, SliceData::zeros(self.out_plane.dtype, self.out_plane.voxels())),
            None => Err(Error::Data("pad has no slice to size a zero slice from".into())),
        }
    }

    fn step(&mut self) -> Result<Option<Slice>> {
        let clamp = self.spec.mode == PadMode::Clamp;
        if self.first.is_none() && !self.input_done && self.last.is_none() {
            match self.input.pull()? {
                Some(s) => self.first = Some(self.spec.pad_slice(&s)?),
                None => {
                    self.input_done = true;
                    return Ok(None);
                }
            }
        }
        if self.before > 0 {
            self.before -= 1;
            let first = self.first.as_ref().expect("first slice held");
            return if clamp { Ok(Some(first.retain())) } else { self.zero_like().map(Some) };
        }
        if let Some(p) = self.first.take() {
            if self.after > 0 {
                self.last = Some(p.retain());
            }
            return Ok(Some(p));
        }
        if !self.input_done {
            match self.input.pull()? {
                Some(s) => {
                    let p = self.spec.pad_slice(&s)?;
                    if self.after > 0 {
                        self.last = Some(p.retain());
                    }
                    return Ok(Some(p));
                }
                None => self.input_done = true,
            }
        }
        if self.after > 0 {
            self.after -= 1;
            let out = if clamp {
                let last = self.last.as_ref().expect("last slice held");
                last.retain()
            } else {
                self.zero_like()?
            };
            if self.after == 0 {
                self.last = None;
            }
            return Ok(Some(out));
        }
        Ok(None)
    }
}

/// Pads each slice in x-y and synthesizes boundary slices in z. Clamped
/// z padding repeats the edge slice by reference.
pub fn pad_stream(spec: PadSpec, input: SliceStream) -> Result<SliceStream> {
    let plane = input.plane();
    let out_plane = PlaneMeta::new(plane.nx + spec.x[0] + spec.x[1], plane.ny + spec.y[0] + spec.y[1], plane.dtype)?;
    let depth = input.depth().map(|d| if d == 0 { 0 } else { d + spec.z[0] + spec.z[1] });
    let mut st = PadState {
        spec,
        input,
        out_plane,
        before: spec.z[0],
        after: spec.z[1],
        first: None,
        last: None,
        input_done: false,
    };
    Ok(Stream::new(out_plane, depth, std::iter::from_fn(move || st.step().transpose())))
}

/// Output axis `i` takes input axis `order[i]` (0 = x, 1 = y, 2 = z).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisOrder(pub [usize; 3]);

impl AxisOrder {
    pub const IDENTITY: AxisOrder = AxisOrder([0, 1, 2]);

    pub fn new(order: [usize; 3]) -> Result<Self, PlanError> {
        let mut seen = [false; 3];
        for &a in &order {
            if a > 2 || seen[a] {
                return Err(PlanError::InvalidParameter(format!("{order:?} is not a permutation of x,y,z")));
            }
            seen[a] = true;
        }
        Ok(AxisOrder(order))
    }

    /// Moves `axis` to the stacking direction: x gives `yzx`, y gives
    /// `xzy`, z is the identity.
    pub fn reslice(axis: usize) -> Result<Self, PlanError> {
        match axis {
            0 => Ok(AxisOrder([1, 2, 0])),
            1 => Ok(AxisOrder([0, 2, 1])),
            2 => Ok(AxisOrder::IDENTITY),
            _ => Err(PlanError::InvalidParameter(format!("no axis {axis}"))),
        }
    }

    /// True when z stays the stacking axis, so one sweep suffices.
    pub fn in_plane(&self) -> bool {
        self.0[2] == 2
    }

    pub fn output_meta(&self, meta: &VolumeMeta) -> Result<VolumeMeta, PlanError> {
        let d = meta.dims();
        VolumeMeta::new(d[self.0[0]], d[self.0[1]], d[self.0[2]], meta.dtype)
    }
}

impl fmt::Display for AxisOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &a in &self.0 {
            f.write_str(["x", "y", "z"][a])?;
        }
        Ok(())
    }
}

impl FromStr for AxisOrder {
    type Err = PlanError;

    fn from_str(s: &str) -> Result<Self, PlanError> {
        let axes: Vec<usize> = s
            .chars()
            .map(|c| match c {
                'x' => Ok(0),
                'y' => Ok(1),
                'z' => Ok(2),
                _ => Err(PlanError::InvalidParameter(format!("bad axis order `{s}`"))),
            })
            .collect::<Result<_, _>>()?;
        if axes.len() != 3 {
            return Err(PlanError::InvalidParameter(format!("axis order needs three letters, got `{s}`")));
        }
        AxisOrder::new([axes[0], axes[1], axes[2]])
    }
}

fn transpose_slice(s: &Slice) -> Result<Slice> {
    let p = s.plane();
    let out = PlaneMeta::new(p.ny, p.nx, p.dtype)?;
    let data = with_voxel!(p.dtype, T => {
        let v = s.values::<T>();
        let mut o = Vec::with_capacity(p.voxels());
        for x in 0..p.nx {
            for y in 0..p.ny {
                o.push(v[y * p.nx + x]);
            }
        }
        T::wrap(o)
    });
    s.derive(out, data)
}

/// Slices buffered per chunk layer of the temporary store.
pub const PERMUTE_LAYER: usize = 8;

static TEMP_SEQ: AtomicU64 = AtomicU64::new(0);

struct TempDir(PathBuf);

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn temp_error(dir: &std::path::Path, required: u64, e: Error) -> Error {
    match e {
        Error::Io { ref source, .. } if source.raw_os_error() == Some(28) => Error::TempSpace {
            dir: dir.to_path_buf(),
            required,
        },
        e => e,
    }
}

struct TwoPass {
    stage: String,
    order: AxisOrder,
    input: Option<SliceStream>,
    ctx: RunContext,
    tmp: Option<TempDir>,
    grid: Option<ChunkGrid>,
    next: usize,
    out_plane: PlaneMeta,
}

impl TwoPass {
    fn first_pass(&mut self) -> Result<()> {
        let mut input = self.input.take().expect("first pass runs once");
        let plane = input.plane();
        let depth = input.depth().unwrap_or(0);
        let required = depth as u64 * plane.slice_bytes();
        let dir = self.ctx.tmp_dir().join(format!(
            "stackstream-permute-{}-{}",
            std::process::id(),
            TEMP_SEQ.fetch_add(1, Ordering::SeqCst)
        ));
        if let Some(limit) = self.ctx.temp_limit() {
            if required > limit {
                return Err(Error::TempSpace { dir, required });
            }
        }
        let a = self.order.0[2];
        let mut chunk = [plane.nx, plane.ny, PERMUTE_LAYER.min(depth.max(1))];
        chunk[a] = 1;
        self.ctx.count_pass(&self.stage);
        let io = self.ctx.io(&self.stage);
        let mut writer = ChunkWriter::create(&dir, plane, chunk, &io).map_err(|e| temp_error(&dir, required, e))?;
        self.tmp = Some(TempDir(dir.clone()));
        while let Some(s) = input.pull()? {
            writer.push(s).map_err(|e| temp_error(&dir, required, e))?;
        }
        drop(input);
        self.grid = Some(writer.finish().map_err(|e| temp_error(&dir, required, e))?);
        self.ctx.count_pass(&self.stage);
        Ok(())
    }

    fn second_pass_slice(&mut self, j: usize) -> Result<Slice> {
        let grid = self.grid.expect("first pass done");
        let dir = self.tmp.as_ref().expect("temp store exists").0.clone();
        let order = self.order.0;
        let a = order[2];
        let out = self.out_plane;
        let bw = out.dtype.byte_width();
        let io = self.ctx.io(&self.stage);
        let mut bytes = vec![0u8; out.voxels() * bw];
        for zi in 0..grid.grid()[2] {
            let mut idx = [0, 0, zi];
            idx[a] = j;
            let chunk = read_chunk_bytes(&dir, &grid, idx, &io)?;
            let (o, e) = grid.region(idx);
            let mut i = 0;
            for lz in 0..e[2] {
                for ly in 0..e[1] {
                    for lx in 0..e[0] {
                        let g = [o[0] + lx, o[1] + ly, o[2] + lz];
                        let dst = (g[order[1]] * out.nx + g[order[0]]) * bw;
                        bytes[dst..dst + bw].copy_from_slice(&chunk[i..i + bw]);
                        i += bw;
                    }
                }
            }
        }
        Slice::new(self.ctx.meter(), out, SliceData::from_le_bytes(out.dtype, &bytes))
    }

    fn step(&mut self) -> Result<Option<Slice>> {
        if self.input.is_some() {
            self.first_pass()?;
        }
        let total = self.grid.map(|g| g.meta().dims()[self.order.0[2]]).unwrap_or(0);
        if self.next >= total {
            self.tmp = None;
            return Ok(None);
        }
        let j = self.next;
        self.next += 1;
        self.second_pass_slice(j).map(Some)
    }
}

/// Reorders the axes of the volume. Permutations that keep z as the
/// stacking axis run in one sweep; the others write the volume to a
/// temporary chunk store and read it back along the new z axis.
pub fn permute_stream(order: AxisOrder, stage: &str, input: SliceStream, ctx: &RunContext) -> Result<SliceStream> {
    let plane = input.plane();
    let depth = input.depth();
    if order.in_plane() {
        if order == AxisOrder::IDENTITY {
            return Ok(input);
        }
        let out = PlaneMeta::new(plane.ny, plane.nx, plane.dtype)?;
        return Ok(crate::stream::map(input, stage, out, |s: Slice| transpose_slice(&s)));
    }
    let d = depth.ok_or_else(|| PlanError::InvalidStage {
        stage: stage.to_string(),
        reason: "permuting z needs a stream of known depth".into(),
    })?;
    let in_meta = VolumeMeta::from_plane(plane, d)?;
    let out_meta = order.output_meta(&in_meta)?;
    let mut st = TwoPass {
        stage: stage.to_string(),
        order,
        input: Some(input),
        ctx: ctx.clone(),
        tmp: None,
        grid: None,
        next: 0,
        out_plane: out_meta.plane(),
    };
    let name = stage.to_string();
    let mut index = 0usize;
    Ok(Stream::new(
        out_meta.plane(),
        Some(out_meta.depth),
        std::iter::from_fn(move || {
            let i = index;
            index += 1;
            st.step().map_err(|e| e.at_stage(&name, i)).transpose()
        }),
    ))
}
