//! Static planning: estimates every stage from metadata alone, checks the
//! budget, and repairs or improves the graph before anything is read.

pub mod estimate;
pub mod ledger;
pub mod midwrite;
pub mod optimize;
pub mod rewrite;

use std::path::PathBuf;

use crate::budget::Budget;
use crate::error::{PlanError, Result};
use crate::graph::PipelineGraph;
use crate::io::manifest::{Layout, Manifest};
use crate::stage::{OpKind, Role};

pub use estimate::{estimate_stage, geometry, max_width, tee_lag, Geometry};
pub use ledger::{fmt_slices, Composition, LedgerEntry, MemoryLedger, RepairAction, Verdict};
pub use midwrite::{insert_midwrites, midwrite_dir, split_at, Midwrites};
pub use optimize::optimize_windows;
pub use rewrite::{fuse_chains, fuse_convolutions, share_windows};

/// Output slices a stage may have queued for its consumer when stages
/// run on their own threads.
pub const THREAD_QUEUE_SLICES: u64 = 2;

#[derive(Debug, Clone)]
pub struct PlanOptions {
    pub fuse: bool,
    pub share_windows: bool,
    pub optimize: bool,
    pub threads: usize,
    pub tmp_dir: PathBuf,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            fuse: false,
            share_windows: true,
            optimize: true,
            threads: 1,
            tmp_dir: std::env::temp_dir(),
        }
    }
}

impl PlanOptions {
    pub fn queue_slices(&self) -> u64 {
        if self.threads > 1 {
            THREAD_QUEUE_SLICES
        } else {
            0
        }
    }
}

/// An executable plan: segments run one after the other, each reading
/// what the previous one wrote.
#[derive(Debug, Clone)]
pub struct Plan {
    pub segments: Vec<PipelineGraph>,
    pub ledger: MemoryLedger,
    pub midwrite_dirs: Vec<PathBuf>,
    pub queue_slices: u64,
}

impl Plan {
    pub fn is_feasible(&self) -> bool {
        self.ledger.verdict.is_feasible()
    }
}

/// Fills in the volume geometry of read stages from their manifests.
pub fn resolve_sources(g: &PipelineGraph) -> Result<PipelineGraph> {
    let mut g = g.clone();
    for id in 0..g.len() {
        let node = g.node_mut(id);
        match &mut node.op {
            OpKind::Read { dir, meta } if meta.is_none() => {
                let m = Manifest::load(dir)?;
                if let Layout::Chunks { .. } = m.layout {
                    return Err(PlanError::InvalidStage {
                        stage: node.name.clone(),
                        reason: format!("{} holds chunks; use readInChunks", dir.display()),
                    }
                    .into());
                }
                *meta = Some(m.meta);
            }
            OpKind::ReadChunks { dir, meta } if meta.is_none() => {
                let m = Manifest::load(dir)?;
                let Layout::Chunks { chunk, .. } = m.layout else {
                    return Err(PlanError::InvalidStage {
                        stage: node.name.clone(),
                        reason: format!("{} holds a slice stack; use read", dir.display()),
                    }
                    .into());
                };
                *meta = Some((m.meta, chunk));
            }
            _ => {}
        }
    }
    Ok(g)
}

/// Stages with a two-pass transpose inside a tee/join region: their two
/// sweeps would stall the other branches.
fn check_branch_permutes(g: &PipelineGraph) -> std::result::Result<(), PlanError> {
    let mut open = vec![0usize; g.len()];
    for id in g.topo_order()? {
        let node = g.node(id);
        let input = g.preds(id).iter().map(|&p| open[p]).max().unwrap_or(0);
        if let OpKind::Permute(order) = &node.op {
            if !order.in_plane() && input > 0 {
                return Err(PlanError::InvalidStage {
                    stage: node.name.clone(),
                    reason: "a transpose that moves z needs two sweeps and cannot sit between a tee and its join"
                        .into(),
                });
            }
        }
        open[id] = match node.role() {
            Role::Tee => input + 1,
            Role::Join => input.saturating_sub(1),
            _ => input,
        };
    }
    Ok(())
}

fn check_chunk_layers(g: &PipelineGraph, budget: &Budget) -> std::result::Result<(), PlanError> {
    let geo = geometry(g)?;
    for id in 0..g.len() {
        let node = g.node(id);
        if let OpKind::ReadChunks { .. } = node.op {
            let est = estimate_stage(node, &geo.basis(id))?;
            if est.internal >= budget.cap() {
                return Err(PlanError::ChunkLayersExceedBudget {
                    stage: node.name.clone(),
                    required: est.internal,
                    budget: budget.cap(),
                });
            }
        }
    }
    Ok(())
}

fn credits(actions: &[RepairAction]) -> Vec<(String, u64)> {
    actions
        .iter()
        .filter_map(|a| match a {
            RepairAction::Fuse { fused, saved, .. } => Some((fused.clone(), *saved)),
            RepairAction::ShareWindow { branches, saved, .. } => {
                Some((format!("shared({})", branches.join(",")), *saved))
            }
            _ => None,
        })
        .collect()
}

fn notes(g: &PipelineGraph) -> Vec<String> {
    let mut out = Vec::new();
    for node in g.nodes() {
        if let OpKind::SampledMean { stride, .. } = node.op {
            if stride > 1 {
                out.push(format!(
                    "{}: stride {stride} exceeds its window of 1; slices between samples are skipped",
                    node.name
                ));
            }
        }
    }
    out
}

fn build_ledger(
    segments: &[PipelineGraph],
    budget: &Budget,
    queue: u64,
    actions: Vec<RepairAction>,
    verdict: Verdict,
    notes: Vec<String>,
) -> std::result::Result<MemoryLedger, PlanError> {
    let credit = credits(&actions);
    let mut entries = Vec::new();
    let mut compositions = Vec::new();
    let mut segment_peaks = Vec::new();
    let mut segment_stages = Vec::new();
    for (i, seg) in segments.iter().enumerate() {
        let l = ledger::segment_ledger(seg, i, queue, &credit)?;
        entries.extend(l.entries);
        compositions.extend(l.compositions);
        segment_peaks.push(l.peak);
        segment_stages.push(seg.len());
    }
    let slice_bytes = match segments.first() {
        Some(g) => geometry(g)?.basis(g.source()?).slice_bytes(),
        None => 0,
    };
    Ok(MemoryLedger {
        entries,
        peak_estimate: segment_peaks.iter().copied().max().unwrap_or(0),
        segment_peaks,
        segment_stages,
        budget: *budget,
        verdict,
        actions,
        compositions,
        notes,
        slice_bytes,
    })
}

fn infeasible_reason(g: &PipelineGraph, budget: &Budget, queue: u64) -> std::result::Result<Verdict, PlanError> {
    let geo = geometry(g)?;
    let ests = ledger::node_estimates(g, &geo, queue)?;
    let (id, est) = ests
        .iter()
        .max_by_key(|(id, e)| (e.total(), std::cmp::Reverse(*id)))
        .copied()
        .expect("graphs have a source");
    let total: u64 = ests.iter().map(|(_, e)| e.total()).sum();
    Ok(Verdict::Infeasible {
        stage: g.node(id).name.clone(),
        reason: format!(
            "pipeline needs {total} bytes plus {} bytes of stage allowance, budget is {} bytes; this stage alone takes {} bytes",
            budget.overhead_epsilon().saturating_mul(g.len() as u64),
            budget.cap(),
            est.total()
        ),
    })
}

/// Ledger of `g` as given: no rewrites, no repair, windows untouched.
pub fn estimate_pipeline(g: &PipelineGraph, budget: &Budget) -> std::result::Result<MemoryLedger, PlanError> {
    g.validate()?;
    let fits = midwrite::fits(g, budget, 0)?;
    let verdict = if fits { Verdict::Fits } else { infeasible_reason(g, budget, 0)? };
    build_ledger(std::slice::from_ref(g), budget, 0, Vec::new(), verdict, notes(g))
}

/// Plans `g` under `budget`: optional fusion, window sharing, mid-write
/// repair when the minimum windows do not fit, then window sizing.
/// An infeasible plan is returned with its verdict rather than as an
/// error; errors mean the graph itself is malformed.
pub fn plan(g: &PipelineGraph, budget: &Budget, opts: &PlanOptions) -> Result<Plan> {
    let g = resolve_sources(g)?;
    g.validate()?;
    check_branch_permutes(&g)?;
    check_chunk_layers(&g, budget)?;
    let queue = opts.queue_slices();
    let mut actions = Vec::new();
    let mut g = g;
    if opts.fuse {
        let (next, acts) = fuse_chains(&g)?;
        g = next;
        actions.extend(acts);
    }
    if opts.share_windows {
        let (next, acts) = share_windows(&g)?;
        g = next;
        actions.extend(acts);
    }
    let notes = notes(&g);
    let (mut segments, verdict, dirs) = if midwrite::fits(&g, budget, queue)? {
        (vec![g], Verdict::Fits, Vec::new())
    } else if g.is_linear() {
        match insert_midwrites(&g, budget, &opts.tmp_dir, queue)? {
            Midwrites::Split {
                segments,
                actions: acts,
                ..
            } => {
                let dirs = acts
                    .iter()
                    .filter_map(|a| match a {
                        RepairAction::Midwrite { path, .. } => Some(path.clone()),
                        _ => None,
                    })
                    .collect();
                actions.extend(acts);
                (segments, Verdict::Repaired, dirs)
            }
            Midwrites::Infeasible { stage, reason } => (vec![g], Verdict::Infeasible { stage, reason }, Vec::new()),
        }
    } else {
        let v = infeasible_reason(&g, budget, queue)?;
        (vec![g], v, Vec::new())
    };
    if opts.optimize && verdict.is_feasible() {
        for seg in &mut segments {
            if let Some((better, acts)) = optimize_windows(seg, budget, queue)? {
                *seg = better;
                actions.extend(acts);
            }
        }
    }
    let ledger = build_ledger(&segments, budget, queue, actions, verdict, notes)?;
    Ok(Plan {
        segments,
        ledger,
        midwrite_dirs: dirs,
        queue_slices: queue,
    })
}

/// Where intermediate volumes go unless told otherwise.
pub fn default_tmp_dir() -> PathBuf {
    std::env::var_os("STACKSTREAM_TMPDIR").map_or_else(std::env::temp_dir, PathBuf::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtype::Dtype;
    use crate::ops::{AxisOrder, JoinFn, Kernel3D, PointOp};
    use crate::stage::PlanStage;
    use crate::volume::{Pattern, VolumeMeta};
    use std::sync::Arc;

    fn src(n: usize) -> PlanStage {
        PlanStage::new(
            "src",
            OpKind::Generate {
                meta: VolumeMeta::cube(n, Dtype::F32).unwrap(),
                pattern: Pattern::Ramp,
            },
        )
    }

    fn conv(name: &str, k: usize) -> PlanStage {
        PlanStage::new(name, OpKind::Convolve(Arc::new(Kernel3D::mean_box([k, k, k]).unwrap())))
    }

    #[test]
    fn chained_convolutions_ledger_text() {
        let g = PipelineGraph::linear(vec![src(16), conv("c1", 3), conv("c2", 5), PlanStage::new("out", OpKind::Discard)]);
        let l = estimate_pipeline(&g, &Budget::unbounded()).unwrap();
        let text = l.render();
        assert!(text.contains("composition: chain c1 -> c2 = 10 slices (additive)"), "{text}");
        assert!(text.contains("verdict: fits"));
    }

    #[test]
    fn shared_branches_in_ledger() {
        let mut g = PipelineGraph::new();
        let s = g.add(src(16));
        let t = g.add(PlanStage::new("tee", OpKind::Tee));
        let a = g.add(conv("a", 3));
        let b = g.add(conv("b", 3));
        let j = g.add(PlanStage::new("join", OpKind::Join(JoinFn::Add)));
        let o = g.add(PlanStage::new("out", OpKind::Discard));
        for (x, y) in [(s, t), (t, a), (t, b), (a, j), (b, j), (j, o)] {
            g.connect(x, y);
        }
        let opts = PlanOptions {
            optimize: false,
            ..PlanOptions::default()
        };
        let p = plan(&g, &Budget::unbounded(), &opts).unwrap();
        let text = p.ledger.render();
        assert!(text.contains("composition: branches a | b = 5 slices (shared window w=3 strides=1,1)"), "{text}");
    }

    #[test]
    fn permute_in_branch_rejected() {
        let mut g = PipelineGraph::new();
        let s = g.add(src(8));
        let t = g.add(PlanStage::new("tee", OpKind::Tee));
        let p = g.add(PlanStage::new("p", OpKind::Permute(AxisOrder::reslice(1).unwrap())));
        let q = g.add(PlanStage::new("q", OpKind::Pointwise(PointOp::Square)));
        let j = g.add(PlanStage::new("join", OpKind::Join(JoinFn::Add)));
        let o = g.add(PlanStage::new("out", OpKind::Discard));
        for (x, y) in [(s, t), (t, p), (t, q), (p, j), (q, j), (j, o)] {
            g.connect(x, y);
        }
        assert!(plan(&g, &Budget::unbounded(), &PlanOptions::default()).is_err());
    }

    #[test]
    fn tight_budget_without_chain_is_infeasible() {
        let g = PipelineGraph::linear(vec![src(16), conv("c", 5), PlanStage::new("out", OpKind::Discard)]);
        let p = plan(&g, &Budget::new(1024).unwrap(), &PlanOptions::default()).unwrap();
        assert!(matches!(p.ledger.verdict, Verdict::Infeasible { .. }));
    }
}
