//! Runs planned graphs: builds one lazy stream per edge, then drives the
//! sinks round-robin so no branch runs far ahead of the others.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::context::RunContext;
use crate::error::{Error, Result};
use crate::graph::PipelineGraph;
use crate::io::chunks::{read_in_chunks, ChunkGrid, ChunkWriter};
use crate::io::stack::{read_stack, StackWriter};
use crate::io::IoStats;
use crate::ops::{
    crop_stream, join_stream, kernel_stream, pad_stream, permute_stream, pointwise_stream, shared_window_streams,
    Histogram, HistogramFold, MeanAcc, PadMode, PadSpec, SlabKernel,
};
use crate::planner::Plan;
use crate::stage::{OpKind, PlanStage, Role};
use crate::stream::{self, SliceStream, Stream, WindowStream};
use crate::volume::VolumeMeta;

/// Makes a stage's output fail when slice `index` is pulled. Used to
/// check that aborted runs release everything.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailPoint {
    pub stage: String,
    pub index: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ExecOptions {
    /// More than one runs every producing stage on its own thread.
    pub threads: usize,
    pub fail: Option<FailPoint>,
}

/// What a sink left behind.
#[derive(Debug, Clone, PartialEq)]
pub enum SinkOutput {
    Stack { dir: PathBuf, meta: VolumeMeta },
    Chunks { dir: PathBuf, meta: VolumeMeta, chunk: [usize; 3] },
    Histogram(Histogram),
    Mean { value: f64, samples: u64 },
    Discarded { slices: u64 },
}

impl std::fmt::Display for SinkOutput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SinkOutput::Stack { dir, meta } => write!(
                f,
                "stack {} {}x{}x{} {}",
                dir.display(),
                meta.nx,
                meta.ny,
                meta.depth,
                meta.dtype
            ),
            SinkOutput::Chunks { dir, meta, chunk } => write!(
                f,
                "chunks {} {}x{}x{} {} chunk={}x{}x{}",
                dir.display(),
                meta.nx,
                meta.ny,
                meta.depth,
                meta.dtype,
                chunk[0],
                chunk[1],
                chunk[2]
            ),
            SinkOutput::Histogram(h) => write!(f, "histogram total={} bins={}", h.total(), h.counts().len()),
            SinkOutput::Mean { value, samples } => write!(f, "mean {value} over {samples} voxels"),
            SinkOutput::Discarded { slices } => write!(f, "discarded {slices} slices"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub segments: usize,
    pub io: BTreeMap<String, IoStats>,
    pub passes: BTreeMap<String, u32>,
    /// Slices the first segment's source produced.
    pub source_pulls: u64,
    pub peak_bytes: u64,
    pub peak_slices: u64,
    pub live_slices: u64,
    pub live_bytes: u64,
    pub outputs: Vec<(String, SinkOutput)>,
}

impl RunReport {
    /// Stable text: no timings, sorted maps.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "segments: {}", self.segments);
        let _ = writeln!(out, "source_pulls: {}", self.source_pulls);
        for (name, s) in &self.io {
            let _ = writeln!(
                out,
                "io {name}: slices_read={} files_opened={} chunks_read={} bytes_read={} slices_written={} files_written={} bytes_written={}",
                s.slices_read, s.files_opened, s.chunks_read, s.bytes_read, s.slices_written, s.files_written, s.bytes_written
            );
        }
        for (name, n) in &self.passes {
            let _ = writeln!(out, "passes {name}: {n}");
        }
        for (name, o) in &self.outputs {
            let _ = writeln!(out, "output {name}: {o}");
        }
        let _ = writeln!(out, "peak_bytes: {}", self.peak_bytes);
        let _ = writeln!(out, "peak_slices: {}", self.peak_slices);
        let _ = writeln!(out, "live_slices: {}", self.live_slices);
        out
    }
}

fn fail_after(s: SliceStream, stage: String, index: usize) -> SliceStream {
    let plane = s.plane();
    let depth = s.depth();
    let mut s = s;
    Stream::new(
        plane,
        depth,
        std::iter::from_fn(move || {
            if s.pulled() == index {
                return Some(Err(Error::Data("injected failure".into()).at_stage(&stage, index)));
            }
            s.pull().transpose()
        }),
    )
}

fn counted(s: SliceStream, ctx: &RunContext, name: &str) -> SliceStream {
    let io = ctx.io(name);
    let plane = s.plane();
    let depth = s.depth();
    let mut s = s;
    Stream::new(
        plane,
        depth,
        std::iter::from_fn(move || {
            let item = s.pull().transpose();
            if matches!(item, Some(Ok(_))) {
                io.slice_read();
            }
            item
        }),
    )
}

fn kernel_of(node: &PlanStage) -> Result<Arc<dyn SlabKernel>> {
    node.slab_kernel()?.ok_or_else(|| {
        Error::Data(format!("stage `{}` has no kernel", node.name))
    })
}

/// Output streams of one producing node, one per out-edge.
fn build_node(node: &PlanStage, mut inputs: Vec<SliceStream>, outs: usize, ctx: &RunContext) -> Result<Vec<SliceStream>> {
    let name = node.name.as_str();
    let meter = ctx.meter();
    let single = match &node.op {
        OpKind::Generate { meta, pattern } => counted(pattern.stream(*meta, meter), ctx, name),
        OpKind::Read { dir, .. } => read_stack(dir, node.window, meter, &ctx.io(name))?,
        OpKind::ReadChunks { dir, .. } => read_in_chunks(dir, meter, &ctx.io(name))?,
        OpKind::Pointwise(op) => pointwise_stream(*op, name, node.window, inputs.remove(0))?,
        OpKind::Convolve(_) | OpKind::FusedConvolve { .. } | OpKind::Gaussian { .. } | OpKind::Morphology { .. } => {
            let mut input = inputs.remove(0);
            if node.padding > 0 {
                let spec = PadSpec {
                    x: [0, 0],
                    y: [0, 0],
                    z: [node.padding, node.padding],
                    mode: PadMode::Clamp,
                };
                input = pad_stream(spec, input)?;
            }
            kernel_stream(kernel_of(node)?, name, node.window, input)?
        }
        OpKind::Crop(r) => crop_stream(*r, inputs.remove(0))?,
        OpKind::Pad(spec) => pad_stream(*spec, inputs.remove(0))?,
        OpKind::Permute(order) => permute_stream(*order, name, inputs.remove(0), ctx)?,
        OpKind::Tee => return Ok(stream::tee(inputs.remove(0), outs)),
        OpKind::SharedWindow { branches } => {
            let kernels = branches.iter().map(kernel_of).collect::<Result<Vec<_>>>()?;
            let names = branches.iter().map(|b| b.name.clone()).collect();
            return shared_window_streams(kernels, names, inputs.remove(0));
        }
        OpKind::Join(f) => {
            let b = inputs.remove(1);
            let a = inputs.remove(0);
            join_stream(*f, name, a, b)?
        }
        _ => unreachable!("sinks are driven, not built"),
    };
    Ok(vec![single])
}

enum Driver {
    Write {
        input: WindowStream,
        writer: Option<StackWriter>,
        dir: PathBuf,
    },
    Chunks {
        input: SliceStream,
        writer: Option<ChunkWriter>,
        dir: PathBuf,
    },
    Hist {
        input: WindowStream,
        fold: Option<HistogramFold>,
        out: Option<PathBuf>,
    },
    Mean {
        input: WindowStream,
        acc: MeanAcc,
        out: Option<PathBuf>,
    },
    Discard {
        input: SliceStream,
        slices: u64,
    },
}

struct Sink {
    name: String,
    driver: Driver,
    done: bool,
}

impl Sink {
    fn new(node: &PlanStage, input: SliceStream, ctx: &RunContext) -> Result<Self> {
        let plane = input.plane();
        let depth = input.depth();
        let driver = match &node.op {
            OpKind::Write { dir } => Driver::Write {
                input: stream::batched(node.window, input)?,
                writer: Some(StackWriter::create(dir, plane, depth, &ctx.io(&node.name))?),
                dir: dir.clone(),
            },
            OpKind::WriteChunks { dir, chunk } => Driver::Chunks {
                input,
                writer: Some(ChunkWriter::create(dir, plane, *chunk, &ctx.io(&node.name))?),
                dir: dir.clone(),
            },
            OpKind::Histogram { out, range } => Driver::Hist {
                input: stream::batched(node.window, input)?,
                fold: Some(HistogramFold::new(plane.dtype, *range)?),
                out: out.clone(),
            },
            OpKind::SampledMean { out, stride } => Driver::Mean {
                input: stream::windowed(1, *stride, 0, input)?,
                acc: MeanAcc::default(),
                out: out.clone(),
            },
            OpKind::Discard => Driver::Discard { input, slices: 0 },
            _ => unreachable!("only sinks are driven"),
        };
        Ok(Sink {
            name: node.name.clone(),
            driver,
            done: false,
        })
    }

    /// Consumes one unit of input; false once the input is exhausted.
    fn step(&mut self) -> Result<bool> {
        let name = self.name.clone();
        let more = match &mut self.driver {
            Driver::Write { input, writer, .. } => match input.pull()? {
                Some(win) => {
                    let z = input.pulled();
                    let w = writer.as_mut().expect("writer lives until finish");
                    for s in win.iter() {
                        w.write(s).map_err(|e| e.at_stage(&name, z))?;
                    }
                    true
                }
                None => false,
            },
            Driver::Chunks { input, writer, .. } => match input.pull()? {
                Some(s) => {
                    let z = input.pulled() - 1;
                    writer
                        .as_mut()
                        .expect("writer lives until finish")
                        .push(s)
                        .map_err(|e| e.at_stage(&name, z))?;
                    true
                }
                None => false,
            },
            Driver::Hist { input, fold, .. } => match input.pull()? {
                Some(win) => {
                    fold.as_mut().expect("fold lives until finish").add_window(&win)?;
                    true
                }
                None => false,
            },
            Driver::Mean { input, acc, .. } => match input.pull()? {
                Some(win) => {
                    acc.add(win[0].data());
                    true
                }
                None => false,
            },
            Driver::Discard { input, slices } => match input.pull()? {
                Some(_) => {
                    *slices += 1;
                    true
                }
                None => false,
            },
        };
        if !more {
            self.done = true;
        }
        Ok(more)
    }

    fn finish(self) -> Result<(String, SinkOutput)> {
        let out = match self.driver {
            Driver::Write { writer, dir, .. } => {
                let meta = writer.expect("writer lives until finish").finish()?;
                SinkOutput::Stack { dir, meta }
            }
            Driver::Chunks { writer, dir, .. } => {
                let grid: ChunkGrid = writer.expect("writer lives until finish").finish()?;
                SinkOutput::Chunks {
                    dir,
                    meta: grid.meta(),
                    chunk: grid.chunk(),
                }
            }
            Driver::Hist { fold, out, .. } => {
                let h = fold.expect("fold lives until finish").finish()?;
                if let Some(path) = out {
                    write_text(&path, &h.to_text())?;
                }
                SinkOutput::Histogram(h)
            }
            Driver::Mean { acc, out, .. } => {
                if let Some(path) = out {
                    write_text(&path, &format!("{}\n", acc.mean()))?;
                }
                SinkOutput::Mean {
                    value: acc.mean(),
                    samples: acc.count,
                }
            }
            Driver::Discard { slices, .. } => SinkOutput::Discarded { slices },
        };
        Ok((self.name, out))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs one graph to completion. Every stream and thread is gone when
/// this returns, whether it succeeded or not.
pub fn run_graph(g: &PipelineGraph, ctx: &RunContext, opts: &ExecOptions) -> Result<Vec<(String, SinkOutput)>> {
    g.validate()?;
    let mut handles: Vec<JoinHandle<()>> = Vec::new();
    let result = drive(g, ctx, opts, &mut handles);
    for h in handles {
        let _ = h.join();
    }
    result
}

fn drive(
    g: &PipelineGraph,
    ctx: &RunContext,
    opts: &ExecOptions,
    handles: &mut Vec<JoinHandle<()>>,
) -> Result<Vec<(String, SinkOutput)>> {
    let mut edges: Vec<Option<SliceStream>> = (0..g.edges().len()).map(|_| None).collect();
    let mut sinks = Vec::new();
    let fail_at = |node: &PlanStage, s: SliceStream| match &opts.fail {
        Some(f) if f.stage == node.name => fail_after(s, f.stage.clone(), f.index),
        _ => s,
    };
    for id in g.topo_order()? {
        let node = g.node(id);
        let inputs: Vec<SliceStream> = g
            .in_edges(id)
            .into_iter()
            .map(|e| edges[e].take().expect("producers are built first"))
            .collect();
        if node.role() == Role::Sink {
            let input = inputs.into_iter().next().expect("sinks have one input");
            sinks.push(Sink::new(node, fail_at(node, input), ctx)?);
            continue;
        }
        let outs = g.out_edges(id);
        let streams = build_node(node, inputs, outs.len(), ctx)?;
        for (e, s) in outs.into_iter().zip(streams) {
            let s = fail_at(node, s);
            let s = if opts.threads > 1 {
                let (s, h) = stream::spawn(s, 1);
                handles.push(h);
                s
            } else {
                s
            };
            edges[e] = Some(s);
        }
    }
    while sinks.iter().any(|s| !s.done) {
        for sink in sinks.iter_mut().filter(|s| !s.done) {
            sink.step()?;
        }
    }
    sinks.into_iter().map(Sink::finish).collect()
}

/// Runs every segment of a plan in order and removes the intermediate
/// volumes afterwards.
pub fn run_plan(plan: &Plan, ctx: &RunContext, opts: &ExecOptions) -> Result<RunReport> {
    if let crate::planner::Verdict::Infeasible { stage, reason } = &plan.ledger.verdict {
        return Err(Error::Data(format!("plan is infeasible at {stage}: {reason}")));
    }
    let mut outputs = Vec::new();
    let mut result = Ok(());
    for seg in &plan.segments {
        match run_graph(seg, ctx, opts) {
            Ok(o) => outputs.extend(o.into_iter().filter(|(n, _)| !n.starts_with("midwrite"))),
            Err(e) => {
                result = Err(e);
                break;
            }
        }
    }
    for dir in &plan.midwrite_dirs {
        let _ = fs::remove_dir_all(dir);
    }
    result?;
    Ok(report(plan.segments.first(), plan.segments.len(), ctx, outputs))
}

fn report(
    first: Option<&PipelineGraph>,
    segments: usize,
    ctx: &RunContext,
    outputs: Vec<(String, SinkOutput)>,
) -> RunReport {
    let io = ctx.io_stats();
    let source_pulls = first
        .and_then(|g| g.source().ok().map(|s| g.node(s).name.clone()))
        .and_then(|n| io.get(&n).map(|s| s.slices_read))
        .unwrap_or(0);
    let stats = ctx.meter().stats();
    RunReport {
        segments,
        io,
        passes: ctx.all_passes(),
        source_pulls,
        peak_bytes: stats.peak_bytes,
        peak_slices: stats.peak_slices,
        live_slices: stats.live_slices,
        live_bytes: stats.live_bytes,
        outputs,
    }
}

/// Runs a single graph as is, without planning.
pub fn execute(g: &PipelineGraph, ctx: &RunContext, opts: &ExecOptions) -> Result<RunReport> {
    let outputs = run_graph(g, ctx, opts)?;
    Ok(report(Some(g), 1, ctx, outputs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtype::Dtype;
    use crate::ops::{JoinFn, Kernel3D, PointOp};
    use crate::volume::Pattern;

    fn src(n: usize) -> PlanStage {
        PlanStage::new(
            "src",
            OpKind::Generate {
                meta: VolumeMeta::cube(n, Dtype::F32).unwrap(),
                pattern: Pattern::Ramp,
            },
        )
    }

    fn branchy() -> PipelineGraph {
        let mut g = PipelineGraph::new();
        let s = g.add(src(8));
        let t = g.add(PlanStage::new("tee", OpKind::Tee));
        let a = g.add(PlanStage::new("a", OpKind::Pointwise(PointOp::Square)));
        let b = g.add(PlanStage::new("b", OpKind::Pointwise(PointOp::Invert)));
        let j = g.add(PlanStage::new("join", OpKind::Join(JoinFn::Add)));
        let o = g.add(PlanStage::new("out", OpKind::Discard));
        for (x, y) in [(s, t), (t, a), (t, b), (a, j), (b, j), (j, o)] {
            g.connect(x, y);
        }
        g
    }

    #[test]
    fn single_sweep_pulls_depth() {
        let g = PipelineGraph::linear(vec![
            src(10),
            PlanStage::new("c", OpKind::Convolve(Arc::new(Kernel3D::mean_box([3, 3, 3]).unwrap()))).with_window(5),
            PlanStage::new("out", OpKind::Discard),
        ]);
        let ctx = RunContext::new();
        let r = execute(&g, &ctx, &ExecOptions::default()).unwrap();
        assert_eq!(r.source_pulls, 10);
        assert_eq!(r.outputs[0].1, SinkOutput::Discarded { slices: 8 });
        assert_eq!(r.live_slices, 0);
    }

    #[test]
    fn branches_threaded_and_not() {
        for threads in [1, 4] {
            let ctx = RunContext::new();
            let r = execute(&branchy(), &ctx, &ExecOptions { threads, fail: None }).unwrap();
            assert_eq!(r.outputs[0].1, SinkOutput::Discarded { slices: 8 });
            assert_eq!(ctx.meter().live_slices(), 0);
        }
    }

    #[test]
    fn injected_failure_releases_everything() {
        for threads in [1, 3] {
            for stage in ["src", "a", "b", "join", "out"] {
                let ctx = RunContext::new();
                let opts = ExecOptions {
                    threads,
                    fail: Some(FailPoint {
                        stage: stage.into(),
                        index: 3,
                    }),
                };
                let err = execute(&branchy(), &ctx, &opts).unwrap_err();
                assert!(err.to_string().contains("injected"), "{err}");
                assert_eq!(ctx.meter().live_slices(), 0, "{stage} threads={threads}");
            }
        }
    }
}
