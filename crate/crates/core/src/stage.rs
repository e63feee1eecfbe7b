//! Stage descriptors: what a pipeline node does, its window, and the
//! streaming class it belongs to.

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use crate::error::PlanError;
use crate::ops::{
    gaussian::Gaussian, AxisOrder, Convolution, FusedConvolution, JoinFn, Kernel3D, MorphOp, PadSpec,
    PointOp, RankFilter, Region, SlabKernel, StructuringElement,
};
use crate::volume::{Pattern, VolumeMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassKind {
    SinglePixel,
    LocalNeighbourhood,
    Geometric,
    GlobalNeighbourhood,
    GlobalReduction,
    Iterative,
}

/// Slices that must be resident per sweep step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZWindow {
    Slices(usize),
    /// The kernel depth `k`.
    Kernel,
    /// Anything from one slice to the kernel depth.
    UpToKernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweeps {
    Exactly(u32),
    Between(u32, u32),
    /// Reductions may sample, reading a fraction of the stack.
    AtMostOne,
    MoreThanOne,
    Many,
}

impl Sweeps {
    pub fn admits(&self, n: u32) -> bool {
        match *self {
            Sweeps::Exactly(k) => n == k,
            Sweeps::Between(a, b) => (a..=b).contains(&n),
            Sweeps::AtMostOne => n <= 1,
            Sweeps::MoreThanOne | Sweeps::Many => n > 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlgorithmClass {
    kind: ClassKind,
    z_window: ZWindow,
    sweeps: Sweeps,
}

impl AlgorithmClass {
    pub fn new(kind: ClassKind, z_window: ZWindow, sweeps: Sweeps) -> Result<Self, PlanError> {
        if kind == ClassKind::SinglePixel && (z_window != ZWindow::Slices(1) || sweeps != Sweeps::Exactly(1)) {
            return Err(PlanError::InvalidParameter(
                "single-pixel algorithms use a one-slice window and one sweep".into(),
            ));
        }
        Ok(AlgorithmClass { kind, z_window, sweeps })
    }

    /// The streaming needs listed for each class of algorithm.
    pub fn of(kind: ClassKind) -> Self {
        let (z_window, sweeps) = match kind {
            ClassKind::SinglePixel => (ZWindow::Slices(1), Sweeps::Exactly(1)),
            ClassKind::LocalNeighbourhood => (ZWindow::Kernel, Sweeps::Exactly(1)),
            ClassKind::Geometric => (ZWindow::Slices(1), Sweeps::Between(1, 2)),
            ClassKind::GlobalNeighbourhood => (ZWindow::UpToKernel, Sweeps::MoreThanOne),
            ClassKind::GlobalReduction => (ZWindow::Slices(1), Sweeps::AtMostOne),
            ClassKind::Iterative => (ZWindow::UpToKernel, Sweeps::Many),
        };
        AlgorithmClass { kind, z_window, sweeps }
    }

    pub fn kind(&self) -> ClassKind {
        self.kind
    }

    pub fn z_window(&self) -> ZWindow {
        self.z_window
    }

    pub fn sweeps(&self) -> Sweeps {
        self.sweeps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Source,
    Transform,
    Tee,
    Join,
    Sink,
}

#[derive(Debug, Clone)]
pub enum OpKind {
    Generate { meta: VolumeMeta, pattern: Pattern },
    /// `meta` lets plans be built before the directory exists (mid-writes).
    Read { dir: PathBuf, meta: Option<VolumeMeta> },
    ReadChunks { dir: PathBuf, meta: Option<(VolumeMeta, [usize; 3])> },
    Pointwise(PointOp),
    Convolve(Arc<Kernel3D>),
    FusedConvolve { outer: Arc<Kernel3D>, inner: Arc<Kernel3D> },
    Gaussian { sigma: f64 },
    Morphology { op: MorphOp, se: StructuringElement },
    Crop(Region),
    Pad(PadSpec),
    Permute(AxisOrder),
    Tee,
    /// Kernel branches reading one shared window; out-edge `i` carries
    /// branch `i`.
    SharedWindow { branches: Vec<PlanStage> },
    Join(JoinFn),
    Write { dir: PathBuf },
    WriteChunks { dir: PathBuf, chunk: [usize; 3] },
    Histogram { out: Option<PathBuf>, range: Option<(f64, f64)> },
    SampledMean { out: Option<PathBuf>, stride: usize },
    Discard,
}

impl OpKind {
    pub fn keyword(&self) -> &'static str {
        match self {
            OpKind::Generate { .. } => "generate",
            OpKind::Read { .. } => "read",
            OpKind::ReadChunks { .. } => "readInChunks",
            OpKind::Pointwise(p) => match p {
                PointOp::Identity => "identity",
                PointOp::Threshold(_) => "threshold",
                PointOp::Square => "square",
                PointOp::Invert => "invert",
                PointOp::Scale(_) => "scale",
                PointOp::Convert(_) => "convert",
            },
            OpKind::Convolve(_) => "convolve",
            OpKind::FusedConvolve { .. } => "fused",
            OpKind::Gaussian { .. } => "gaussian",
            OpKind::Morphology { op, .. } => match op {
                MorphOp::Median => "median",
                MorphOp::Erode => "erode",
                MorphOp::Dilate => "dilate",
            },
            OpKind::Crop(_) => "crop",
            OpKind::Pad(_) => "pad",
            OpKind::Permute(_) => "permute",
            OpKind::Tee => "tee",
            OpKind::SharedWindow { .. } => "shared",
            OpKind::Join(_) => "join",
            OpKind::Write { .. } => "write",
            OpKind::WriteChunks { .. } => "writeInChunks",
            OpKind::Histogram { .. } => "histogram",
            OpKind::SampledMean { .. } => "mean",
            OpKind::Discard => "sink",
        }
    }
}

/// One node of a pipeline graph.
#[derive(Debug, Clone)]
pub struct PlanStage {
    pub name: String,
    pub op: OpKind,
    /// Slices per window. Kernel stages need `window >= k_z`.
    pub window: usize,
    /// Clamp-to-edge slices added before and after the stack.
    pub padding: usize,
    /// Set when the user fixed the window; the optimizer leaves it alone.
    pub window_locked: bool,
}

impl PlanStage {
    /// A stage with its smallest valid window.
    pub fn new(name: impl Into<String>, op: OpKind) -> Self {
        let mut s = PlanStage {
            name: name.into(),
            op,
            window: 1,
            padding: 0,
            window_locked: false,
        };
        s.window = s.kernel_depth().unwrap_or(1);
        s
    }

    pub fn with_window(mut self, w: usize) -> Self {
        self.window = w;
        self.window_locked = true;
        self
    }

    pub fn with_padding(mut self, p: usize) -> Self {
        self.padding = p;
        self
    }

    pub fn role(&self) -> Role {
        match self.op {
            OpKind::Generate { .. } | OpKind::Read { .. } | OpKind::ReadChunks { .. } => Role::Source,
            OpKind::Tee | OpKind::SharedWindow { .. } => Role::Tee,
            OpKind::Join(_) => Role::Join,
            OpKind::Write { .. }
            | OpKind::WriteChunks { .. }
            | OpKind::Histogram { .. }
            | OpKind::SampledMean { .. }
            | OpKind::Discard => Role::Sink,
            _ => Role::Transform,
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(
            self.op,
            OpKind::Read { .. } | OpKind::ReadChunks { .. } | OpKind::Write { .. } | OpKind::WriteChunks { .. }
        )
    }

    /// The slab kernel for local-neighbourhood stages.
    pub fn slab_kernel(&self) -> Result<Option<Arc<dyn SlabKernel>>, PlanError> {
        Ok(Some(match &self.op {
            OpKind::Convolve(k) => Arc::new(Convolution::new(Arc::clone(k))),
            OpKind::FusedConvolve { outer, inner } => {
                Arc::new(FusedConvolution::new(Arc::clone(outer), Arc::clone(inner)))
            }
            OpKind::Gaussian { sigma } => Arc::new(Gaussian::new(*sigma)?),
            OpKind::Morphology { op, se } => Arc::new(RankFilter::new(*op, se.clone())),
            _ => return Ok(None),
        }))
    }

    pub fn kernel_depth(&self) -> Option<usize> {
        match &self.op {
            OpKind::Convolve(k) => Some(k.depth()),
            OpKind::FusedConvolve { outer, inner } => Some(outer.depth() + inner.depth() - 1),
            OpKind::Gaussian { sigma } => Some(Gaussian::new(*sigma).map(|g| 2 * g.radius() + 1).unwrap_or(1)),
            OpKind::Morphology { se, .. } => Some(se.dims()[2]),
            OpKind::SharedWindow { branches } => branches.iter().filter_map(|b| b.kernel_depth()).max(),
            _ => None,
        }
    }

    pub fn is_kernel(&self) -> bool {
        matches!(
            self.op,
            OpKind::Convolve(_) | OpKind::FusedConvolve { .. } | OpKind::Gaussian { .. } | OpKind::Morphology { .. }
        )
    }

    /// Whether the planner may choose this stage's window.
    pub fn is_windowed(&self) -> bool {
        self.is_kernel()
            || matches!(
                self.op,
                OpKind::Pointwise(_)
                    | OpKind::Read { .. }
                    | OpKind::Write { .. }
                    | OpKind::Histogram { .. }
            )
    }

    /// How far the window advances per step.
    pub fn stride(&self) -> usize {
        match &self.op {
            _ if self.is_kernel() => self.window + 1 - self.kernel_depth().unwrap_or(1).min(self.window),
            OpKind::SampledMean { stride, .. } => *stride,
            _ if self.is_windowed() => self.window,
            _ => 1,
        }
    }

    /// Slices produced per step.
    pub fn outputs_per_step(&self) -> usize {
        match self.role() {
            Role::Sink => 0,
            _ => self.stride(),
        }
    }

    /// Smallest and largest sensible window on an input of `depth` slices.
    pub fn window_range(&self, depth: usize) -> (usize, usize) {
        if self.window_locked || !self.is_windowed() {
            return (self.window, self.window);
        }
        let lo = self.kernel_depth().unwrap_or(1);
        (lo, lo.max(depth + 2 * self.padding))
    }

    pub fn class(&self) -> AlgorithmClass {
        let kind = match &self.op {
            _ if self.is_kernel() => ClassKind::LocalNeighbourhood,
            OpKind::SharedWindow { .. } => ClassKind::LocalNeighbourhood,
            OpKind::Crop(_) | OpKind::Pad(_) | OpKind::Permute(_) => ClassKind::Geometric,
            OpKind::Histogram { .. } | OpKind::SampledMean { .. } => ClassKind::GlobalReduction,
            _ => ClassKind::SinglePixel,
        };
        AlgorithmClass::of(kind)
    }

    /// Sweeps over its input this stage performs.
    pub fn sweeps(&self) -> u32 {
        match &self.op {
            OpKind::Permute(order) if !order.in_plane() => 2,
            _ => 1,
        }
    }

    /// Checks the stage's own parameters.
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |reason: String| PlanError::InvalidStage {
            stage: self.name.clone(),
            reason,
        };
        if self.window == 0 {
            return Err(bad("window must be >= 1".into()));
        }
        if let Some(kz) = self.kernel_depth() {
            if self.window < kz && !matches!(self.op, OpKind::SharedWindow { .. }) {
                return Err(PlanError::WindowBelowKernel {
                    stage: self.name.clone(),
                    window: self.window,
                    kernel_depth: kz,
                });
            }
        }
        if self.padding > 0 && !self.is_kernel() {
            return Err(bad("only kernel stages take z padding; use a pad stage".into()));
        }
        if self.padding > 0 && self.padding >= self.window {
            return Err(bad("padding must be smaller than the window".into()));
        }
        match &self.op {
            OpKind::SampledMean { stride: 0, .. } => Err(bad("mean stride must be >= 1".into())),
            OpKind::Gaussian { sigma } => Gaussian::new(*sigma).map(|_| ()),
            OpKind::SharedWindow { branches } => {
                if branches.len() < 2 || branches.iter().any(|b| !b.is_kernel()) {
                    return Err(bad("a shared window needs two or more kernel branches".into()));
                }
                Ok(())
            }
            OpKind::WriteChunks { chunk, .. } if chunk.contains(&0) => Err(bad("chunk dims must be >= 1".into())),
            _ => Ok(()),
        }
    }

    /// Geometry of the output stream given the input geometries.
    pub fn output_meta(&self, inputs: &[VolumeMeta]) -> Result<VolumeMeta, PlanError> {
        let one = || {
            inputs.first().copied().ok_or_else(|| PlanError::InvalidGraph(format!(
                "stage `{}` has no input",
                self.name
            )))
        };
        match &self.op {
            OpKind::Generate { meta, .. } => Ok(*meta),
            OpKind::Read { meta, .. } => meta.ok_or_else(|| PlanError::InvalidStage {
                stage: self.name.clone(),
                reason: "source geometry is unresolved".into(),
            }),
            OpKind::ReadChunks { meta, .. } => meta.map(|m| m.0).ok_or_else(|| PlanError::InvalidStage {
                stage: self.name.clone(),
                reason: "source geometry is unresolved".into(),
            }),
            OpKind::Pointwise(p) => {
                let m = one()?;
                VolumeMeta::new(m.nx, m.ny, m.depth, p.output_dtype(m.dtype))
            }
            OpKind::Convolve(_)
            | OpKind::FusedConvolve { .. }
            | OpKind::Gaussian { .. }
            | OpKind::Morphology { .. } => {
                let m = one()?;
                let kz = self.kernel_depth().unwrap_or(1);
                let d = m.depth + 2 * self.padding;
                if d < kz {
                    return Err(PlanError::DepthBelowKernel {
                        stage: self.name.clone(),
                        depth: d,
                        kernel_depth: kz,
                    });
                }
                VolumeMeta::new(m.nx, m.ny, d + 1 - kz, m.dtype)
            }
            OpKind::Crop(r) => r.output_meta(&one()?),
            OpKind::Pad(p) => p.output_meta(&one()?),
            OpKind::Permute(o) => o.output_meta(&one()?),
            OpKind::SharedWindow { .. } | OpKind::Tee => one(),
            OpKind::Join(_) => {
                if inputs.len() != 2 {
                    return Err(PlanError::InvalidGraph(format!(
                        "join `{}` needs two inputs, got {}",
                        self.name,
                        inputs.len()
                    )));
                }
                if inputs[0] != inputs[1] {
                    return Err(PlanError::MetaMismatch(format!(
                        "join `{}`: {:?} vs {:?}",
                        self.name, inputs[0], inputs[1]
                    )));
                }
                Ok(inputs[0])
            }
            _ => one(),
        }
    }

    /// Output geometry of branch `i` of a shared window.
    pub fn branch_meta(&self, i: usize, input: VolumeMeta) -> Result<VolumeMeta, PlanError> {
        match &self.op {
            OpKind::SharedWindow { branches } => branches[i].output_meta(&[input]),
            _ => self.output_meta(&[input]),
        }
    }
}

impl fmt::Display for PlanStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.name, self.op.keyword())
    }
}
