//! Splitting a straight chain into budget-feasible pieces joined by
//! intermediate volumes on disk.

use std::path::{Path, PathBuf};

use crate::budget::Budget;
use crate::error::PlanError;
use crate::graph::PipelineGraph;
use crate::stage::{OpKind, PlanStage};

use super::estimate::geometry;
use super::ledger::{segment_total, RepairAction};

/// Directory of the `k`-th intermediate volume, written after `stage`.
pub fn midwrite_dir(tmp: &Path, k: usize, stage: &str) -> PathBuf {
    let safe: String = stage
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    tmp.join(format!("mid-{k}-after-{safe}"))
}

/// Cuts a straight chain after the transforms at chain positions
/// `splits` (position 1 is the first stage after the source). Each piece
/// but the last ends in a write; each piece but the first starts by
/// reading the previous piece back.
pub fn split_at(
    g: &PipelineGraph,
    splits: &[usize],
    tmp: &Path,
) -> Result<(Vec<PipelineGraph>, Vec<RepairAction>), PlanError> {
    let chain = g
        .chain()
        .ok_or_else(|| PlanError::InvalidGraph("mid-writes only split straight chains".into()))?;
    let geo = geometry(g)?;
    let n = chain.len();
    let mut cuts: Vec<usize> = splits.to_vec();
    cuts.sort_unstable();
    cuts.dedup();
    if cuts.iter().any(|&j| j == 0 || j + 1 >= n) {
        return Err(PlanError::InvalidParameter(format!(
            "split positions must lie between the source and the sink, got {splits:?}"
        )));
    }
    let mut segments = Vec::new();
    let mut actions = Vec::new();
    let mut head = g.node(chain[0]).clone();
    let mut start = 1;
    for (k, &j) in cuts.iter().enumerate() {
        let after = g.node(chain[j]);
        let meta = geo.outputs[chain[j]].expect("transforms have an output");
        let dir = midwrite_dir(tmp, k + 1, &after.name);
        let mut stages = vec![head];
        stages.extend(chain[start..=j].iter().map(|&i| g.node(i).clone()));
        stages.push(PlanStage::new(format!("midwrite{}", k + 1), OpKind::Write { dir: dir.clone() }));
        segments.push(PipelineGraph::linear(stages));
        actions.push(RepairAction::Midwrite {
            after: after.name.clone(),
            path: dir.clone(),
            bytes: meta.volume_bytes(),
        });
        head = PlanStage::new(format!("midread{}", k + 1), OpKind::Read { dir, meta: Some(meta) });
        start = j + 1;
    }
    let mut stages = vec![head];
    stages.extend(chain[start..].iter().map(|&i| g.node(i).clone()));
    segments.push(PipelineGraph::linear(stages));
    Ok((segments, actions))
}

pub(crate) fn fits(g: &PipelineGraph, budget: &Budget, queue: u64) -> Result<bool, PlanError> {
    Ok(budget.admits(segment_total(g, queue)?, g.len()))
}

/// Result of mid-write repair.
#[derive(Debug, Clone)]
pub enum Midwrites {
    Split {
        splits: Vec<usize>,
        segments: Vec<PipelineGraph>,
        actions: Vec<RepairAction>,
    },
    Infeasible {
        stage: String,
        reason: String,
    },
}

/// Greedy repair: each piece runs as far along the chain as the budget
/// allows (the largest `j` whose prefix plus the write fits), then the
/// rest is repaired the same way.
pub fn insert_midwrites(g: &PipelineGraph, budget: &Budget, tmp: &Path, queue: u64) -> Result<Midwrites, PlanError> {
    let chain = g
        .chain()
        .ok_or_else(|| PlanError::InvalidGraph("mid-writes only split straight chains".into()))?;
    let n = chain.len();
    let mut splits: Vec<usize> = Vec::new();
    let mut start = 1;
    loop {
        let (segs, _) = split_at(g, &splits, tmp)?;
        if fits(segs.last().expect("at least one piece"), budget, queue)? {
            let (segments, actions) = split_at(g, &splits, tmp)?;
            return Ok(Midwrites::Split {
                splits,
                segments,
                actions,
            });
        }
        let mut chosen = None;
        for j in (start..n - 1).rev() {
            let mut trial = splits.clone();
            trial.push(j);
            let (segs, _) = split_at(g, &trial, tmp)?;
            if fits(&segs[segs.len() - 2], budget, queue)? {
                chosen = Some(j);
                break;
            }
        }
        match chosen {
            Some(j) => {
                splits.push(j);
                start = j + 1;
            }
            None => {
                let (segs, _) = split_at(g, &splits, tmp)?;
                let last = segs.last().expect("at least one piece");
                let culprit = if start < n - 1 { chain[start] } else { chain[n - 1] };
                let (need, probe_len) = {
                    let mut probe: Vec<PlanStage> = vec![last.node(0).clone()];
                    probe.push(g.node(culprit).clone());
                    if culprit != chain[n - 1] {
                        probe.push(PlanStage::new("probe-write", OpKind::Write { dir: tmp.join("probe") }));
                    }
                    let len = probe.len() as u64;
                    (segment_total(&PipelineGraph::linear(probe), queue)?, len)
                };
                return Ok(Midwrites::Infeasible {
                    stage: g.node(culprit).name.clone(),
                    reason: format!(
                        "needs {need} bytes with its read and write alone, plus {} bytes of stage allowance; budget is {} bytes",
                        budget.overhead_epsilon().saturating_mul(probe_len),
                        budget.cap()
                    ),
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtype::Dtype;
    use crate::ops::PointOp;
    use crate::volume::{Pattern, VolumeMeta};

    fn chain(n: usize) -> PipelineGraph {
        let mut stages = vec![PlanStage::new(
            "src",
            OpKind::Read {
                dir: "in".into(),
                meta: Some(VolumeMeta::cube(8, Dtype::U8).unwrap()),
            },
        )];
        for i in 0..n {
            stages.push(PlanStage::new(format!("sq{}", i + 1), OpKind::Pointwise(PointOp::Square)));
        }
        stages.push(PlanStage::new("out", OpKind::Write { dir: "out".into() }));
        PipelineGraph::linear(stages)
    }

    #[test]
    fn one_split_after_second_stage() {
        let s = 64;
        // three stage estimates plus the write: read, two stages and the
        // write take 6 slices, a third stage would make it 8
        let budget = Budget::new(3 * 2 * s + s).unwrap().with_epsilon(0);
        match insert_midwrites(&chain(4), &budget, Path::new("/tmp/x"), 0).unwrap() {
            Midwrites::Split { splits, segments, actions } => {
                assert_eq!(splits, vec![2]);
                assert_eq!(segments.len(), 2);
                assert!(matches!(&actions[0], RepairAction::Midwrite { after, .. } if after == "sq2"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn roomy_budget_needs_no_split() {
        let budget = Budget::new(1 << 30).unwrap();
        assert!(matches!(
            insert_midwrites(&chain(4), &budget, Path::new("/tmp/x"), 0).unwrap(),
            Midwrites::Split { splits, .. } if splits.is_empty()
        ));
    }

    #[test]
    fn tiny_budget_is_infeasible() {
        let budget = Budget::new(3 * 64).unwrap().with_epsilon(0);
        assert!(matches!(
            insert_midwrites(&chain(2), &budget, Path::new("/tmp/x"), 0).unwrap(),
            Midwrites::Infeasible { stage, .. } if stage == "sq1"
        ));
    }

    #[test]
    fn generated_sources_can_be_split() {
        let mut g = chain(2);
        g.node_mut(0).op = OpKind::Generate {
            meta: VolumeMeta::cube(8, Dtype::U8).unwrap(),
            pattern: Pattern::Ramp,
        };
        let (segs, acts) = split_at(&g, &[1], Path::new("/t")).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(acts.len(), 1);
        assert!(matches!(segs[1].node(0).op, OpKind::Read { .. }));
    }
}
