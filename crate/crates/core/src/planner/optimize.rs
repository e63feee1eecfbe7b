//! Window sizing: give every windowed stage as large a window as the
//! budget allows, measured by the summed stage memory.

use crate::budget::Budget;
use crate::error::PlanError;
use crate::graph::PipelineGraph;

use super::estimate::geometry;
use super::ledger::{segment_total, RepairAction};

/// Evaluations after which the exact search gives up and the greedy
/// pass decides instead.
pub const SEARCH_LIMIT: usize = 2_000_000;

struct Search<'a> {
    g: PipelineGraph,
    vars: Vec<usize>,
    ranges: Vec<(usize, usize)>,
    budget: &'a Budget,
    queue: u64,
    evals: usize,
    best: Option<(u64, Vec<usize>)>,
    exhausted: bool,
}

impl Search<'_> {
    fn cost(&mut self, windows: &[usize]) -> Result<u64, PlanError> {
        self.evals += 1;
        for (&id, &w) in self.vars.iter().zip(windows) {
            self.g.node_mut(id).window = w;
        }
        segment_total(&self.g, self.queue)
    }

    fn fits(&mut self, windows: &[usize]) -> Result<bool, PlanError> {
        let c = self.cost(windows)?;
        Ok(self.budget.admits(c, self.g.len()))
    }

    /// Windows `prefix`, then `fill` for the rest taken from the range.
    fn filled(&self, prefix: &[usize], hi: bool) -> Vec<usize> {
        let mut w = prefix.to_vec();
        w.extend(self.ranges[prefix.len()..].iter().map(|r| if hi { r.1 } else { r.0 }));
        w
    }

    /// Largest value for variable `prefix.len()` that still fits with the
    /// remaining variables at their minimum. Memory grows with every
    /// window, so the feasible values form a prefix of the range.
    fn largest_feasible(&mut self, prefix: &[usize]) -> Result<Option<usize>, PlanError> {
        let (lo, hi) = self.ranges[prefix.len()];
        let mut w = self.filled(prefix, false);
        let i = prefix.len();
        if !self.fits(&w)? {
            return Ok(None);
        }
        let (mut good, mut bad) = (lo, hi + 1);
        while bad - good > 1 {
            let mid = good + (bad - good) / 2;
            w[i] = mid;
            if self.fits(&w)? {
                good = mid;
            } else {
                bad = mid;
            }
        }
        Ok(Some(good))
    }

    fn descend(&mut self, prefix: &mut Vec<usize>) -> Result<(), PlanError> {
        if self.evals > SEARCH_LIMIT {
            self.exhausted = true;
            return Ok(());
        }
        let top = self.filled(prefix, true);
        let upper = self.cost(&top)?;
        if let Some((best, _)) = &self.best {
            // ties keep the earlier, lexicographically larger choice
            if upper <= *best {
                return Ok(());
            }
        }
        if self.budget.admits(upper, self.g.len()) {
            self.best = Some((upper, top));
            return Ok(());
        }
        let Some(max) = self.largest_feasible(prefix)? else {
            return Ok(());
        };
        let lo = self.ranges[prefix.len()].0;
        for v in (lo..=max).rev() {
            prefix.push(v);
            self.descend(prefix)?;
            prefix.pop();
            if self.exhausted {
                break;
            }
        }
        Ok(())
    }

    /// Upstream first, each variable as large as fits with the rest at
    /// their minimum.
    fn greedy(&mut self) -> Result<Option<Vec<usize>>, PlanError> {
        let mut prefix = Vec::new();
        for _ in 0..self.vars.len() {
            match self.largest_feasible(&prefix)? {
                Some(v) => prefix.push(v),
                None => return Ok(None),
            }
        }
        Ok(Some(prefix))
    }
}

/// Chooses windows for the unlocked windowed stages of `g` maximising
/// the summed stage memory while the budget still admits the total.
/// Among equal totals, earlier stages (in topological order) get the
/// larger window. Returns `None` when even the minimum windows do not
/// fit.
pub fn optimize_windows(
    g: &PipelineGraph,
    budget: &Budget,
    queue: u64,
) -> Result<Option<(PipelineGraph, Vec<RepairAction>)>, PlanError> {
    let geo = geometry(g)?;
    let mut vars = Vec::new();
    let mut ranges = Vec::new();
    for id in g.topo_order()? {
        let node = g.node(id);
        let depth = geo.basis(id).depth;
        let (lo, hi) = node.window_range(depth);
        if lo < hi {
            vars.push(id);
            ranges.push((lo, hi));
        }
    }
    let mut search = Search {
        g: g.clone(),
        vars,
        ranges,
        budget,
        queue,
        evals: 0,
        best: None,
        exhausted: false,
    };
    let lows = search.filled(&[], false);
    if !search.fits(&lows)? {
        return Ok(None);
    }
    search.descend(&mut Vec::new())?;
    let chosen = if search.exhausted {
        search.greedy()?
    } else {
        search.best.take().map(|b| b.1)
    };
    let Some(windows) = chosen else {
        return Ok(None);
    };
    let mut out = g.clone();
    let mut actions = Vec::new();
    for (&id, &w) in search.vars.iter().zip(&windows) {
        let node = out.node_mut(id);
        if node.window != w {
            actions.push(RepairAction::WindowResize {
                stage: node.name.clone(),
                from: node.window,
                to: w,
            });
            node.window = w;
        }
    }
    Ok(Some((out, actions)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtype::Dtype;
    use crate::ops::{Kernel3D, PointOp};
    use crate::stage::{OpKind, PlanStage};
    use crate::volume::{Pattern, VolumeMeta};
    use std::sync::Arc;

    fn conv_chain(depth: usize) -> PipelineGraph {
        PipelineGraph::linear(vec![
            PlanStage::new(
                "src",
                OpKind::Generate {
                    meta: VolumeMeta::new(4, 4, depth, Dtype::U8).unwrap(),
                    pattern: Pattern::Ramp,
                },
            ),
            PlanStage::new("conv", OpKind::Convolve(Arc::new(Kernel3D::mean_box([3, 3, 3]).unwrap()))),
            PlanStage::new("out", OpKind::Discard),
        ])
    }

    fn window_of(g: &PipelineGraph, name: &str) -> usize {
        g.node(g.find(name).unwrap()).window
    }

    #[test]
    fn convolve_window_fills_budget() {
        let s = 16;
        // source and sink hold one slice each; the convolve gets 10
        let budget = Budget::new(12 * s + 1).unwrap().with_epsilon(0);
        let (g, acts) = optimize_windows(&conv_chain(40), &budget, 0).unwrap().unwrap();
        assert_eq!(window_of(&g, "conv"), 6);
        assert_eq!(acts.len(), 1);
    }

    #[test]
    fn unbounded_takes_whole_depth() {
        let (g, _) = optimize_windows(&conv_chain(20), &Budget::unbounded().with_epsilon(0), 0)
            .unwrap()
            .unwrap();
        assert_eq!(window_of(&g, "conv"), 20);
    }

    #[test]
    fn ties_favour_upstream() {
        let meta = VolumeMeta::new(4, 4, 30, Dtype::U8).unwrap();
        let g = PipelineGraph::linear(vec![
            PlanStage::new("src", OpKind::Read { dir: "x".into(), meta: Some(meta) }),
            PlanStage::new("a", OpKind::Pointwise(PointOp::Square)),
            PlanStage::new("b", OpKind::Pointwise(PointOp::Square)),
            PlanStage::new("out", OpKind::Write { dir: "y".into() }),
        ]);
        let s = 16;
        // minimum is 1 + 2 + 2 + 1 slices; two spare slices
        let budget = Budget::new(8 * s + 1).unwrap().with_epsilon(0);
        let (g, _) = optimize_windows(&g, &budget, 0).unwrap().unwrap();
        assert_eq!(
            ["src", "a", "b", "out"].map(|n| window_of(&g, n)),
            [3, 1, 1, 1],
        );
    }

    #[test]
    fn too_small_gives_none() {
        let budget = Budget::new(16).unwrap().with_epsilon(0);
        assert!(optimize_windows(&conv_chain(10), &budget, 0).unwrap().is_none());
    }
}
