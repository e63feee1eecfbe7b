//! Pipeline DAGs of stages joined by slice streams.

use std::collections::{BTreeSet, VecDeque};

use crate::error::PlanError;
use crate::stage::{OpKind, PlanStage, Role};

/// Nodes plus directed edges. The order of a node's out-edges is the
/// branch order of a tee; the order of a join's in-edges is its operand
/// order.
#[derive(Debug, Clone, Default)]
pub struct PipelineGraph {
    nodes: Vec<PlanStage>,
    edges: Vec<(usize, usize)>,
}

impl PipelineGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A straight chain `stages[0] -> stages[1] -> ...`.
    pub fn linear(stages: Vec<PlanStage>) -> Self {
        let mut g = Self::new();
        let mut prev = None;
        for s in stages {
            let id = g.add(s);
            if let Some(p) = prev {
                g.connect(p, id);
            }
            prev = Some(id);
        }
        g
    }

    pub fn add(&mut self, stage: PlanStage) -> usize {
        self.nodes.push(stage);
        self.nodes.len() - 1
    }

    pub fn connect(&mut self, from: usize, to: usize) {
        self.edges.push((from, to));
    }

    pub fn nodes(&self) -> &[PlanStage] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &PlanStage {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: usize) -> &mut PlanStage {
        &mut self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Index of the node named `name`.
    pub fn find(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn preds(&self, id: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.1 == id).map(|e| e.0).collect()
    }

    pub fn succs(&self, id: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.0 == id).map(|e| e.1).collect()
    }

    /// Edge indices into `id`, in operand order.
    pub fn in_edges(&self, id: usize) -> Vec<usize> {
        (0..self.edges.len()).filter(|&e| self.edges[e].1 == id).collect()
    }

    /// Edge indices out of `id`, in branch order.
    pub fn out_edges(&self, id: usize) -> Vec<usize> {
        (0..self.edges.len()).filter(|&e| self.edges[e].0 == id).collect()
    }

    pub fn sources(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.preds(i).is_empty()).collect()
    }

    pub fn sinks(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.succs(i).is_empty()).collect()
    }

    pub fn source(&self) -> Result<usize, PlanError> {
        match self.sources().as_slice() {
            [s] => Ok(*s),
            [] => Err(PlanError::InvalidGraph("no source stage".into())),
            many => Err(PlanError::InvalidGraph(format!(
                "{} source stages ({}); exactly one is allowed",
                many.len(),
                many.iter().map(|&i| self.nodes[i].name.as_str()).collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    /// Kahn order, ties broken by node index so the result is stable.
    pub fn topo_order(&self) -> Result<Vec<usize>, PlanError> {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        for &(_, b) in &self.edges {
            indeg[b] += 1;
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&i) = ready.iter().next() {
            ready.remove(&i);
            order.push(i);
            for j in self.succs(i) {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.insert(j);
                }
            }
        }
        if order.len() != n {
            return Err(PlanError::InvalidGraph("the graph has a cycle".into()));
        }
        Ok(order)
    }

    /// Structural checks: acyclic, one source, everything reachable from
    /// it and reaching a sink, and arities that match each role.
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.nodes.is_empty() {
            return Err(PlanError::InvalidGraph("empty pipeline".into()));
        }
        for &(a, b) in &self.edges {
            if a >= self.nodes.len() || b >= self.nodes.len() {
                return Err(PlanError::InvalidGraph(format!("edge {a} -> {b} names a missing node")));
            }
        }
        let mut names = BTreeSet::new();
        for n in &self.nodes {
            if !names.insert(n.name.as_str()) {
                return Err(PlanError::InvalidGraph(format!("duplicate stage name `{}`", n.name)));
            }
        }
        self.topo_order()?;
        let src = self.source()?;
        let fwd = self.reach(src, |g, i| g.succs(i));
        if let Some(i) = (0..self.nodes.len()).find(|i| !fwd.contains(i)) {
            return Err(PlanError::InvalidGraph(format!(
                "stage `{}` is not reachable from the source",
                self.nodes[i].name
            )));
        }
        for i in 0..self.nodes.len() {
            let node = &self.nodes[i];
            let (ins, outs) = (self.preds(i).len(), self.succs(i).len());
            let arity = |ok: bool, what: &str| {
                if ok {
                    Ok(())
                } else {
                    Err(PlanError::InvalidGraph(format!(
                        "stage `{}` {what} (has {ins} inputs, {outs} outputs)",
                        node.name
                    )))
                }
            };
            match node.role() {
                Role::Source => arity(ins == 0 && outs == 1, "is a source and needs exactly one consumer")?,
                Role::Sink => arity(ins == 1 && outs == 0, "is a sink and needs one input and no consumers")?,
                Role::Transform => arity(ins == 1 && outs == 1, "needs one input and one consumer")?,
                Role::Join => arity(ins == 2 && outs == 1, "joins exactly two streams into one")?,
                Role::Tee => {
                    arity(ins == 1 && outs >= 2, "splits one stream into two or more branches")?;
                    if let OpKind::SharedWindow { branches } = &node.op {
                        arity(branches.len() == outs, "needs one out-edge per shared branch")?;
                    }
                }
            }
            node.validate()?;
        }
        Ok(())
    }

    fn reach(&self, start: usize, next: impl Fn(&Self, usize) -> Vec<usize>) -> BTreeSet<usize> {
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for j in next(self, i) {
                if seen.insert(j) {
                    queue.push_back(j);
                }
            }
        }
        seen
    }

    /// The stages in order if the graph is one straight chain.
    pub fn chain(&self) -> Option<Vec<usize>> {
        let mut cur = self.source().ok()?;
        let mut out = vec![cur];
        loop {
            if self.preds(cur).len() > 1 {
                return None;
            }
            match self.succs(cur).as_slice() {
                [] => break,
                [next] => {
                    cur = *next;
                    out.push(cur);
                }
                _ => return None,
            }
        }
        (out.len() == self.nodes.len()).then_some(out)
    }

    pub fn is_linear(&self) -> bool {
        self.chain().is_some()
    }

    /// Follows single-input, single-output stages from `start` and returns
    /// them, stopping before any tee, join or sink.
    pub fn run_from(&self, start: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = start;
        loop {
            let node = &self.nodes[cur];
            if node.role() != Role::Transform || self.preds(cur).len() != 1 {
                break;
            }
            out.push(cur);
            match self.succs(cur).as_slice() {
                [next] => cur = *next,
                _ => break,
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtype::Dtype;
    use crate::ops::{JoinFn, PointOp};
    use crate::volume::{Pattern, VolumeMeta};

    fn gen() -> PlanStage {
        PlanStage::new(
            "src",
            OpKind::Generate {
                meta: VolumeMeta::cube(4, Dtype::U8).unwrap(),
                pattern: Pattern::Constant(1.0),
            },
        )
    }

    fn sq(name: &str) -> PlanStage {
        PlanStage::new(name, OpKind::Pointwise(PointOp::Square))
    }

    #[test]
    fn linear_chain_validates() {
        let g = PipelineGraph::linear(vec![gen(), sq("a"), PlanStage::new("out", OpKind::Discard)]);
        g.validate().unwrap();
        assert_eq!(g.chain(), Some(vec![0, 1, 2]));
        assert_eq!(g.topo_order().unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn rejects_cycles_multiple_sources_and_dangling() {
        let mut g = PipelineGraph::linear(vec![gen(), sq("a"), sq("b"), PlanStage::new("out", OpKind::Discard)]);
        g.connect(2, 1);
        assert!(g.validate().is_err());

        let mut g = PipelineGraph::linear(vec![gen(), PlanStage::new("out", OpKind::Discard)]);
        let mut other = gen();
        other.name = "src2".into();
        g.add(other);
        assert!(matches!(g.validate(), Err(PlanError::InvalidGraph(m)) if m.contains("source")));

        let g = PipelineGraph::linear(vec![gen(), sq("a")]);
        assert!(g.validate().is_err());
    }

    #[test]
    fn tee_and_join_arity() {
        let mut g = PipelineGraph::new();
        let s = g.add(gen());
        let t = g.add(PlanStage::new("tee", OpKind::Tee));
        let a = g.add(sq("a"));
        let b = g.add(sq("b"));
        let j = g.add(PlanStage::new("join", OpKind::Join(JoinFn::Add)));
        let o = g.add(PlanStage::new("out", OpKind::Discard));
        for (x, y) in [(s, t), (t, a), (t, b), (a, j), (b, j), (j, o)] {
            g.connect(x, y);
        }
        g.validate().unwrap();
        assert!(!g.is_linear());
        assert_eq!(g.run_from(a), vec![a]);

        let mut bad = PipelineGraph::new();
        let s = bad.add(gen());
        let t = bad.add(PlanStage::new("tee", OpKind::Tee));
        let o = bad.add(PlanStage::new("out", OpKind::Discard));
        bad.connect(s, t);
        bad.connect(t, o);
        assert!(bad.validate().is_err());
    }
}
