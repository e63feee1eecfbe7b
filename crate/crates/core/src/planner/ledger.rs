//! Per-stage accounting of a plan against the budget.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::budget::{Budget, MemEstimate};
use crate::error::PlanError;
use crate::graph::PipelineGraph;
use crate::stage::{OpKind, Role};

use super::estimate::{estimate_stage, geometry, tee_lag, Geometry};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Fits,
    Repaired,
    Infeasible { stage: String, reason: String },
}

impl Verdict {
    pub fn is_feasible(&self) -> bool {
        !matches!(self, Verdict::Infeasible { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RepairAction {
    /// Write the stream after `after` to disk and read it back.
    Midwrite { after: String, path: PathBuf, bytes: u64 },
    WindowResize { stage: String, from: usize, to: usize },
    Fuse { first: String, second: String, fused: String, saved: u64 },
    ShareWindow { branches: Vec<String>, window: usize, strides: Vec<usize>, saved: u64 },
}

impl std::fmt::Display for RepairAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RepairAction::Midwrite { after, path, bytes } => write!(
                f,
                "midwrite after {after} -> {} (extra write and read of {bytes} bytes)",
                path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
            ),
            RepairAction::WindowResize { stage, from, to } => write!(f, "window {stage} {from} -> {to}"),
            RepairAction::Fuse {
                first,
                second,
                fused,
                saved,
            } => write!(f, "fuse {first} + {second} -> {fused} (saves {saved} bytes)"),
            RepairAction::ShareWindow {
                branches,
                window,
                strides,
                saved,
            } => write!(
                f,
                "share window {} w={window} strides={} (saves {saved} bytes)",
                branches.join(", "),
                strides.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    pub segment: usize,
    pub name: String,
    pub op: &'static str,
    pub window: usize,
    pub stride: usize,
    pub estimate: MemEstimate,
    /// Bytes this stage saves over the stages it replaced.
    pub credit: u64,
    /// Sum of totals up to and including this stage within its segment.
    pub running: u64,
    /// Input slice size, the unit of the `slices` column.
    pub slice_bytes: u64,
}

/// A named sub-total reported for chained kernels and branch groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    pub label: String,
    pub bytes: u64,
    pub slice_bytes: u64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryLedger {
    pub entries: Vec<LedgerEntry>,
    pub segment_peaks: Vec<u64>,
    pub segment_stages: Vec<usize>,
    pub peak_estimate: u64,
    pub budget: Budget,
    pub verdict: Verdict,
    pub actions: Vec<RepairAction>,
    pub compositions: Vec<Composition>,
    pub notes: Vec<String>,
    /// Reference slice size: the source's output slice.
    pub slice_bytes: u64,
}

/// Slice count as an integer when exact, else with two decimals.
pub fn fmt_slices(bytes: u64, slice: u64) -> String {
    if slice == 0 {
        return "-".into();
    }
    if bytes.is_multiple_of(slice) {
        (bytes / slice).to_string()
    } else {
        format!("{:.2}", bytes as f64 / slice as f64)
    }
}

/// Estimates of every node in topological order. `queue` extra output
/// slices are charged to every producing stage (threaded hand-off).
pub(crate) fn node_estimates(
    g: &PipelineGraph,
    geo: &Geometry,
    queue: u64,
) -> Result<Vec<(usize, MemEstimate)>, PlanError> {
    let mut out = Vec::with_capacity(g.len());
    for id in g.topo_order()? {
        let node = g.node(id);
        let basis = geo.basis(id);
        let mut est = estimate_stage(node, &basis)?;
        if let OpKind::Tee = node.op {
            est.internal += tee_lag(g, id) as u64 * basis.slice_bytes();
        }
        if queue > 0 && node.role() != Role::Sink {
            let per: u64 = g.out_edges(id).iter().map(|&e| geo.edges[e].slice_bytes()).sum();
            est.output += queue * per;
        }
        out.push((id, est));
    }
    Ok(out)
}

/// Sum of all stage totals of one segment.
pub fn segment_total(g: &PipelineGraph, queue: u64) -> Result<u64, PlanError> {
    let geo = geometry(g)?;
    Ok(node_estimates(g, &geo, queue)?.iter().map(|(_, e)| e.total()).sum())
}

pub(crate) struct SegmentLedger {
    pub entries: Vec<LedgerEntry>,
    pub peak: u64,
    pub compositions: Vec<Composition>,
}

pub(crate) fn segment_ledger(
    g: &PipelineGraph,
    segment: usize,
    queue: u64,
    credits: &[(String, u64)],
) -> Result<SegmentLedger, PlanError> {
    let geo = geometry(g)?;
    let ests = node_estimates(g, &geo, queue)?;
    let mut entries = Vec::new();
    let mut running = 0;
    for &(id, est) in &ests {
        let node = g.node(id);
        running += est.total();
        entries.push(LedgerEntry {
            segment,
            name: node.name.clone(),
            op: node.op.keyword(),
            window: node.window,
            stride: node.stride(),
            estimate: est,
            credit: credits.iter().find(|c| c.0 == node.name).map_or(0, |c| c.1),
            running,
            slice_bytes: geo.basis(id).slice_bytes(),
        });
    }
    let total_of = |id: usize| ests.iter().find(|e| e.0 == id).map_or(0, |e| e.1.total());
    let mut compositions = Vec::new();
    // runs of chained kernel stages
    let mut seen = vec![false; g.len()];
    for (id, _) in &ests {
        let id = *id;
        if seen[id] || !g.node(id).is_kernel() {
            continue;
        }
        let run: Vec<usize> = g.run_from(id).into_iter().take_while(|&i| g.node(i).is_kernel()).collect();
        for &i in &run {
            seen[i] = true;
        }
        if run.len() >= 2 {
            compositions.push(Composition {
                label: format!(
                    "chain {}",
                    run.iter().map(|&i| g.node(i).name.as_str()).collect::<Vec<_>>().join(" -> ")
                ),
                bytes: run.iter().map(|&i| total_of(i)).sum(),
                slice_bytes: geo.basis(id).slice_bytes(),
                note: "additive".into(),
            });
        }
    }
    for &(id, _) in &ests {
        let node = g.node(id);
        match &node.op {
            OpKind::Tee => {
                let firsts = g.succs(id);
                if firsts.iter().all(|&b| g.node(b).is_kernel()) {
                    compositions.push(Composition {
                        label: format!(
                            "branches {}",
                            firsts.iter().map(|&i| g.node(i).name.as_str()).collect::<Vec<_>>().join(" | ")
                        ),
                        bytes: firsts.iter().map(|&i| total_of(i)).sum(),
                        slice_bytes: geo.basis(id).slice_bytes(),
                        note: "additive".into(),
                    });
                }
            }
            OpKind::SharedWindow { branches } => {
                let k = node.kernel_depth().unwrap_or(1);
                compositions.push(Composition {
                    label: format!(
                        "branches {}",
                        branches.iter().map(|b| b.name.as_str()).collect::<Vec<_>>().join(" | ")
                    ),
                    bytes: total_of(id),
                    slice_bytes: geo.basis(id).slice_bytes(),
                    note: format!(
                        "shared window w={k} strides={}",
                        branches
                            .iter()
                            .map(|b| (k + 1 - b.kernel_depth().unwrap_or(1)).to_string())
                            .collect::<Vec<_>>()
                            .join(",")
                    ),
                });
            }
            _ => {}
        }
    }
    Ok(SegmentLedger {
        entries,
        peak: running,
        compositions,
    })
}

impl MemoryLedger {
    /// Stable text rendering: one line per stage, then sub-totals,
    /// repair actions, peak, budget and verdict.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let s = self.slice_bytes;
        let _ = writeln!(
            out,
            "{:<18} {:<13} {:>4} {:>4} {:>12} {:>12} {:>12} {:>10} {:>12} {:>8} {:>12}",
            "stage", "op", "w", "s", "alpha", "beta", "gamma", "credit", "total", "slices", "running"
        );
        for (seg, &peak) in self.segment_peaks.iter().enumerate() {
            if self.segment_peaks.len() > 1 {
                let _ = writeln!(out, "segment {seg}");
            }
            for e in self.entries.iter().filter(|e| e.segment == seg) {
                let _ = writeln!(
                    out,
                    "{:<18} {:<13} {:>4} {:>4} {:>12} {:>12} {:>12} {:>10} {:>12} {:>8} {:>12}",
                    e.name,
                    e.op,
                    e.window,
                    e.stride,
                    e.estimate.input,
                    e.estimate.output,
                    e.estimate.internal,
                    e.credit,
                    e.estimate.total(),
                    fmt_slices(e.estimate.total(), e.slice_bytes),
                    e.running
                );
            }
            if self.segment_peaks.len() > 1 {
                let _ = writeln!(
                    out,
                    "segment {seg} peak: {peak} bytes ({} slices)",
                    fmt_slices(peak, s)
                );
            }
        }
        for c in &self.compositions {
            let _ = writeln!(
                out,
                "composition: {} = {} slices ({})",
                c.label,
                fmt_slices(c.bytes, c.slice_bytes),
                c.note
            );
        }
        for a in &self.actions {
            let _ = writeln!(out, "action: {a}");
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        let stages = self.segment_stages.iter().copied().max().unwrap_or(0);
        let _ = writeln!(
            out,
            "peak_estimate: {} bytes ({} slices)",
            self.peak_estimate,
            fmt_slices(self.peak_estimate, s)
        );
        let _ = writeln!(
            out,
            "budget: {} bytes (epsilon {} x {} stages)",
            self.budget.cap(),
            self.budget.overhead_epsilon(),
            stages
        );
        let _ = match &self.verdict {
            Verdict::Fits => writeln!(out, "verdict: fits"),
            Verdict::Repaired => writeln!(out, "verdict: repaired"),
            Verdict::Infeasible { stage, reason } => writeln!(out, "verdict: infeasible at {stage}: {reason}"),
        };
        out
    }

    /// Sum of the per-stage epsilon allowances of the largest segment.
    pub fn epsilon_allowance(&self) -> u64 {
        self.segment_stages.iter().copied().max().unwrap_or(0) as u64 * self.budget.overhead_epsilon()
    }
}
