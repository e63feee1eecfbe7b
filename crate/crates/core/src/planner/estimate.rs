//! Closed-form memory estimates per stage and their sum over a sweep.

use crate::budget::MemEstimate;
use crate::error::PlanError;
use crate::graph::PipelineGraph;
use crate::ops::geometry::PERMUTE_LAYER;
use crate::ops::reduce::histogram_bytes;
use crate::ops::{gaussian::Gaussian, SlabKernel};
use crate::stage::{OpKind, PlanStage, Role};
use crate::volume::VolumeMeta;

/// Widest square slice `n` such that a `k`-slice window plus one output
/// slice fits in `m` bytes: `floor(sqrt(m / ((k + 1) b)))`.
pub fn max_width(m: u64, k: u64, b: u64) -> u64 {
    assert!(k >= 1 && b >= 1, "kernel depth and voxel size must be positive");
    let area = m / ((k + 1) * b);
    // integer square root, corrected for float rounding
    let mut n = (area as f64).sqrt() as u64;
    while n * n > area {
        n -= 1;
    }
    while (n + 1) * (n + 1) <= area {
        n += 1;
    }
    n
}

/// Memory of one stage given the geometry of its input (for sources, of
/// its output).
pub fn estimate_stage(stage: &PlanStage, input: &VolumeMeta) -> Result<MemEstimate, PlanError> {
    let s_in = input.slice_bytes();
    let out = match &stage.op {
        OpKind::Generate { .. } | OpKind::Read { .. } | OpKind::ReadChunks { .. } => *input,
        OpKind::Join(_) => stage.output_meta(&[*input, *input])?,
        _ => stage.output_meta(&[*input])?,
    };
    let s_out = out.slice_bytes();
    let w = stage.window as u64;
    let est = match &stage.op {
        OpKind::Generate { .. } => MemEstimate::new(0, s_out, 0),
        OpKind::Read { .. } => MemEstimate::new(0, w * s_out, 0),
        OpKind::ReadChunks { meta, .. } => {
            let cz = meta.map_or(input.depth, |(_, c)| c[2].min(input.depth)) as u64;
            MemEstimate::new(0, s_out, 2 * cz * s_out)
        }
        OpKind::Pointwise(_) => MemEstimate::new(w * s_in, w * s_out, 0),
        OpKind::Convolve(_) | OpKind::FusedConvolve { .. } | OpKind::Gaussian { .. } | OpKind::Morphology { .. } => {
            let kz = stage.kernel_depth().unwrap_or(1) as u64;
            let produced = w + 1 - kz.min(w);
            let mut gamma = scratch(stage, input)?;
            if stage.padding > 0 {
                // the clamped edge slice stays referenced
                gamma += s_in;
            }
            MemEstimate::new(w * s_in, produced * s_out, gamma)
        }
        OpKind::Crop(_) => MemEstimate::new(s_in, s_out, 0),
        OpKind::Pad(_) => MemEstimate::new(s_in, s_out, s_out),
        OpKind::Permute(order) => {
            if order.in_plane() {
                MemEstimate::new(s_in, s_out, 0)
            } else {
                let layer = PERMUTE_LAYER.min(input.depth.max(1)) as u64;
                MemEstimate::new(s_in, s_out, layer * s_in)
            }
        }
        OpKind::Tee => MemEstimate::ZERO,
        OpKind::SharedWindow { branches } => {
            let k = stage.kernel_depth().unwrap_or(1) as u64;
            let mut beta = 0;
            let mut gamma = 0;
            for b in branches {
                let l = b.kernel_depth().unwrap_or(1) as u64;
                let bo = b.output_meta(&[*input])?;
                beta += (k - l + 1) * bo.slice_bytes();
                gamma += scratch(b, input)?;
            }
            MemEstimate::new(k * s_in, beta, gamma)
        }
        OpKind::Join(_) => MemEstimate::new(2 * s_in, s_out, 0),
        OpKind::Write { .. } => MemEstimate::new(w * s_in, 0, 0),
        OpKind::WriteChunks { chunk, .. } => {
            let cz = chunk[2].min(input.depth) as u64;
            MemEstimate::new(s_in, 0, cz * s_in)
        }
        OpKind::Histogram { .. } => MemEstimate::new(w * s_in, 0, 2 * histogram_bytes(input.dtype)),
        OpKind::SampledMean { .. } => MemEstimate::new(s_in, 0, 0),
        OpKind::Discard => MemEstimate::new(s_in, 0, 0),
    };
    Ok(est)
}

fn scratch(stage: &PlanStage, input: &VolumeMeta) -> Result<u64, PlanError> {
    Ok(match &stage.op {
        OpKind::Gaussian { sigma } => Gaussian::new(*sigma)?.scratch_bytes(input.plane()),
        _ => 0,
    })
}

/// Geometry of every edge, in edge order, and of every node's output.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub edges: Vec<VolumeMeta>,
    pub inputs: Vec<Option<VolumeMeta>>,
    pub outputs: Vec<Option<VolumeMeta>>,
}

impl Geometry {
    /// The meta a stage's estimate is computed from.
    pub fn basis(&self, id: usize) -> VolumeMeta {
        self.inputs[id].or(self.outputs[id]).expect("every node has a geometry")
    }
}

/// Propagates source geometry through the graph.
pub fn geometry(g: &PipelineGraph) -> Result<Geometry, PlanError> {
    let order = g.topo_order()?;
    let n = g.len();
    let mut edges: Vec<Option<VolumeMeta>> = vec![None; g.edges().len()];
    let mut inputs = vec![None; n];
    let mut outputs = vec![None; n];
    for id in order {
        let node = g.node(id);
        let ins: Vec<VolumeMeta> = g
            .in_edges(id)
            .iter()
            .map(|&e| edges[e].expect("producers come first in topological order"))
            .collect();
        inputs[id] = ins.first().copied();
        let outs = g.out_edges(id);
        if let OpKind::SharedWindow { .. } = node.op {
            let input = ins[0];
            for (i, &e) in outs.iter().enumerate() {
                edges[e] = Some(node.branch_meta(i, input)?);
            }
            outputs[id] = Some(input);
            continue;
        }
        let meta = node.output_meta(&ins)?;
        if node.role() != Role::Sink {
            outputs[id] = Some(meta);
        }
        for e in outs {
            edges[e] = Some(meta);
        }
    }
    Ok(Geometry {
        edges: edges.into_iter().map(|m| m.expect("all edges resolved")).collect(),
        inputs,
        outputs,
    })
}

/// Slices a tee may have to hold for its slowest branch: the largest
/// per-step burst summed along any branch.
pub fn tee_lag(g: &PipelineGraph, tee: usize) -> usize {
    g.succs(tee)
        .into_iter()
        .map(|start| {
            let mut lag = 0;
            let mut cur = start;
            loop {
                let n = g.node(cur);
                lag += burst(n);
                if n.role() != Role::Transform {
                    break;
                }
                match g.succs(cur).as_slice() {
                    [next] => cur = *next,
                    _ => break,
                }
            }
            lag
        })
        .max()
        .unwrap_or(0)
}

fn burst(n: &PlanStage) -> usize {
    match &n.op {
        OpKind::Crop(r) => r.z0 + 1,
        OpKind::SampledMean { stride, .. } => *stride,
        _ if n.is_windowed() => n.window,
        _ => 1,
    }
}
