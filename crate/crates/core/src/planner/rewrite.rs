//! Graph rewrites that lower memory without changing results: fusing
//! chained convolutions and letting kernel branches share one window.

use std::sync::Arc;

use crate::dtype::Dtype;
use crate::error::PlanError;
use crate::graph::PipelineGraph;
use crate::ops::Kernel3D;
use crate::stage::{OpKind, PlanStage};

use super::estimate::{estimate_stage, geometry};
use super::ledger::RepairAction;

/// `K * L`, the kernel of `convolve_K . convolve_L`, with side lengths
/// `k + l - 1`.
pub fn fuse_convolutions(k: &Kernel3D, l: &Kernel3D) -> Kernel3D {
    k.convolve(l)
}

/// Replaces the nodes in `remove` by `node`. Edges into removed nodes
/// from outside now enter `node`, edges leaving them now leave `node`,
/// and edges between removed nodes disappear. Edge order is kept.
fn replace(g: &PipelineGraph, remove: &[usize], node: PlanStage) -> PipelineGraph {
    let mut out = PipelineGraph::new();
    let mut map = vec![usize::MAX; g.len()];
    for (i, slot) in map.iter_mut().enumerate() {
        if !remove.contains(&i) {
            *slot = out.add(g.node(i).clone());
        }
    }
    let new = out.add(node);
    for &i in remove {
        map[i] = new;
    }
    for &(a, b) in g.edges() {
        let inside = remove.contains(&a) && remove.contains(&b);
        if !inside {
            out.connect(map[a], map[b]);
        }
    }
    out
}

fn movable(s: &PlanStage) -> bool {
    s.padding == 0 && (!s.window_locked || Some(s.window) == s.kernel_depth())
}

/// Fuses adjacent pairs of plain convolutions on f32 streams. Returns the
/// rewritten graph and one action per fused pair.
pub fn fuse_chains(g: &PipelineGraph) -> Result<(PipelineGraph, Vec<RepairAction>), PlanError> {
    let mut g = g.clone();
    let mut actions = Vec::new();
    'outer: loop {
        let geo = geometry(&g)?;
        for &(a, b) in g.edges() {
            let (na, nb) = (g.node(a), g.node(b));
            let (OpKind::Convolve(inner), OpKind::Convolve(outer)) = (&na.op, &nb.op) else {
                continue;
            };
            let input = geo.basis(a);
            if input.dtype != Dtype::F32 || !movable(na) || !movable(nb) {
                continue;
            }
            if g.succs(a).len() != 1 || g.preds(b).len() != 1 {
                continue;
            }
            let before = estimate_stage(na, &input)?.total() + estimate_stage(nb, &geo.basis(b))?.total();
            let name = format!("{}+{}", na.name, nb.name);
            let fused = PlanStage::new(
                name.clone(),
                OpKind::FusedConvolve {
                    outer: Arc::clone(outer),
                    inner: Arc::clone(inner),
                },
            );
            let after = estimate_stage(&fused, &input)?.total();
            actions.push(RepairAction::Fuse {
                first: na.name.clone(),
                second: nb.name.clone(),
                fused: name,
                saved: before.saturating_sub(after),
            });
            g = replace(&g, &[a, b], fused);
            continue 'outer;
        }
        break;
    }
    Ok((g, actions))
}

/// Lets the kernel branches of a tee read one shared window when that
/// needs less memory than separate windows: for two branches with depths
/// `k >= l` that is `2k - l + 2` slices against `k + l + 2`, a saving
/// whenever `k < 2l`.
pub fn share_windows(g: &PipelineGraph) -> Result<(PipelineGraph, Vec<RepairAction>), PlanError> {
    let mut g = g.clone();
    let mut actions = Vec::new();
    'outer: loop {
        let geo = geometry(&g)?;
        for t in 0..g.len() {
            if !matches!(g.node(t).op, OpKind::Tee) {
                continue;
            }
            let firsts = g.succs(t);
            if !firsts
                .iter()
                .all(|&b| g.node(b).is_kernel() && movable(g.node(b)) && g.preds(b).len() == 1)
            {
                continue;
            }
            let input = geo.basis(t);
            let mut unshared = 0;
            for &b in &firsts {
                let mut minimal = g.node(b).clone();
                minimal.window = minimal.kernel_depth().unwrap_or(1);
                unshared += estimate_stage(&minimal, &input)?.total();
            }
            // branch order follows the edges leaving the branch stages
            let mut order: Vec<usize> = Vec::new();
            for &(a, _) in g.edges() {
                if firsts.contains(&a) && !order.contains(&a) {
                    order.push(a);
                }
            }
            let branches: Vec<PlanStage> = order.iter().map(|&b| g.node(b).clone()).collect();
            let names: Vec<String> = branches.iter().map(|b| b.name.clone()).collect();
            let mut shared = PlanStage::new(format!("shared({})", names.join(",")), OpKind::SharedWindow { branches });
            let k = shared.kernel_depth().unwrap_or(1);
            shared.window = k;
            let cost = estimate_stage(&shared, &input)?.total();
            if cost >= unshared {
                continue;
            }
            let strides = match &shared.op {
                OpKind::SharedWindow { branches } => {
                    branches.iter().map(|b| k + 1 - b.kernel_depth().unwrap_or(1)).collect()
                }
                _ => unreachable!(),
            };
            actions.push(RepairAction::ShareWindow {
                branches: names,
                window: k,
                strides,
                saved: unshared - cost,
            });
            let mut remove = vec![t];
            remove.extend(&order);
            g = replace(&g, &remove, shared);
            continue 'outer;
        }
        break;
    }
    Ok((g, actions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::JoinFn;
    use crate::volume::{Pattern, VolumeMeta};

    fn conv(name: &str, k: usize) -> PlanStage {
        PlanStage::new(name, OpKind::Convolve(Arc::new(Kernel3D::mean_box([k, k, k]).unwrap())))
    }

    fn source(dtype: Dtype) -> PlanStage {
        PlanStage::new(
            "src",
            OpKind::Generate {
                meta: VolumeMeta::cube(12, dtype).unwrap(),
                pattern: Pattern::Ramp,
            },
        )
    }

    #[test]
    fn fused_kernel_has_summed_sides() {
        let k = Kernel3D::mean_box([3, 3, 3]).unwrap();
        let l = Kernel3D::mean_box([5, 3, 1]).unwrap();
        assert_eq!(fuse_convolutions(&k, &l).dims(), [7, 5, 3]);
    }

    #[test]
    fn fusion_only_on_f32() {
        let stages = |d| vec![source(d), conv("a", 3), conv("b", 3), PlanStage::new("out", OpKind::Discard)];
        let (g, acts) = fuse_chains(&PipelineGraph::linear(stages(Dtype::F32))).unwrap();
        assert_eq!(g.len(), 3);
        assert!(matches!(acts.as_slice(), [RepairAction::Fuse { saved, .. }] if *saved == 2 * 144 * 4));
        let (g, acts) = fuse_chains(&PipelineGraph::linear(stages(Dtype::U8))).unwrap();
        assert_eq!((g.len(), acts.len()), (4, 0));
    }

    fn branchy(k: usize, l: usize) -> PipelineGraph {
        let mut g = PipelineGraph::new();
        let s = g.add(source(Dtype::F32));
        let t = g.add(PlanStage::new("tee", OpKind::Tee));
        let a = g.add(conv("a", k));
        let b = g.add(conv("b", l));
        let ca = g.add(PlanStage::new("crop", OpKind::Crop(crate::ops::Region::new([0, 0, (k - l) / 2], [12, 12, 12 - k + 1 + (k - l) / 2]))));
        let j = g.add(PlanStage::new("join", OpKind::Join(JoinFn::Add)));
        let o = g.add(PlanStage::new("out", OpKind::Discard));
        for (x, y) in [(s, t), (t, a), (t, b), (a, j), (b, ca), (ca, j), (j, o)] {
            g.connect(x, y);
        }
        g
    }

    #[test]
    fn shares_when_cheaper() {
        let (g, acts) = share_windows(&branchy(5, 3)).unwrap();
        g.validate().unwrap();
        match acts.as_slice() {
            [RepairAction::ShareWindow { window, strides, saved, .. }] => {
                assert_eq!(*window, 5);
                assert_eq!(strides, &vec![1, 3]);
                // (5+1)+(3+1) - (2*5-3+2) = 1 slice
                assert_eq!(*saved, 144 * 4);
            }
            other => panic!("{other:?}"),
        }
        // k >= 2l gives no saving
        let (_, acts) = share_windows(&branchy(7, 3)).unwrap();
        assert!(acts.is_empty());
    }
}
