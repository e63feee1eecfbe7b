mod common;

use std::sync::Arc;

use common::*;
use proptest::prelude::*;
use stackstream::ops::{kernel_stream, pointwise_stream, Convolution, Kernel3D, MorphOp, PointOp, RankFilter, SlabKernel, StructuringElement};
use stackstream::planner::{self, max_width};
use stackstream::{
    Budget, Dtype, ExecOptions, MemoryMeter, OpKind, Pattern, PipelineGraph, PlanOptions, PlanStage, RunContext, Volume,
    VolumeMeta,
};

fn dtype() -> impl Strategy<Value = Dtype> {
    prop_oneof![Just(Dtype::U8), Just(Dtype::U16), Just(Dtype::F32)]
}

fn dims() -> impl Strategy<Value = [usize; 3]> {
    [1usize..10, 1usize..10, 3usize..12]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn max_width_brackets_the_budget(m in 0u64..(1 << 50), k in 1u64..40, b in 1u64..9) {
        let w = max_width(m, k, b) as u128;
        let unit = ((k + 1) * b) as u128;
        prop_assert!(w * w * unit <= m as u128);
        prop_assert!((m as u128) < (w + 1) * (w + 1) * unit);
    }

    #[test]
    fn window_never_changes_pointwise_output(d in dims(), t in dtype(), w in 1usize..12, seed in any::<u64>()) {
        let meta = VolumeMeta::new(d[0], d[1], d[2], t).unwrap();
        let vol = Volume::generate(meta, Pattern::Random { seed });
        let m = MemoryMeter::new();
        let one = Volume::collect(pointwise_stream(PointOp::Square, "sq", 1, vol.stream(&m)).unwrap()).unwrap();
        let many = Volume::collect(pointwise_stream(PointOp::Square, "sq", w.min(d[2]), vol.stream(&m)).unwrap()).unwrap();
        prop_assert!(one == many);
        prop_assert_eq!(m.live_slices(), 0);
    }

    #[test]
    fn convolution_matches_dense_oracle(d in dims(), w in 3usize..12, seed in any::<u64>()) {
        let mut r = rng(seed);
        let vol = random_volume(&mut r, d, Dtype::U16);
        let weights: Vec<f64> = (0..27).map(|i| (i % 4) as f64).collect();
        let k = Arc::new(Kernel3D::new([3, 3, 3], weights.clone()).unwrap());
        let m = MemoryMeter::new();
        let kernel: Arc<dyn SlabKernel> = Arc::new(Convolution::new(k));
        let got = Volume::collect(kernel_stream(kernel, "c", w.min(d[2]), vol.stream(&m)).unwrap()).unwrap();
        let want = convolve(&Dense::from_volume(&vol), [3, 3, 3], &weights);
        prop_assert_eq!(check_equal(&Dense::from_volume(&got), &want), Ok(()));
    }

    #[test]
    fn erosion_never_exceeds_dilation(d in dims(), seed in any::<u64>()) {
        let meta = VolumeMeta::new(d[0], d[1], d[2], Dtype::U8).unwrap();
        let vol = Volume::generate(meta, Pattern::Random { seed });
        let m = MemoryMeter::new();
        let run = |op| {
            let k: Arc<dyn SlabKernel> = Arc::new(RankFilter::new(op, StructuringElement::ball(1)));
            Dense::from_volume(&Volume::collect(kernel_stream(k, "r", 3, vol.stream(&m)).unwrap()).unwrap())
        };
        let (lo, mid, hi) = (run(MorphOp::Erode), run(MorphOp::Median), run(MorphOp::Dilate));
        for i in 0..lo.v.len() {
            prop_assert!(lo.v[i] <= mid.v[i] && mid.v[i] <= hi.v[i]);
        }
    }

    #[test]
    fn planned_runs_stay_inside_their_estimate(n in 4usize..20, slices in 8u64..40, seed in any::<u64>()) {
        let meta = VolumeMeta::cube(n, Dtype::U8).unwrap();
        let s = meta.slice_bytes();
        let g = PipelineGraph::linear(vec![
            PlanStage::new("src", OpKind::Generate { meta, pattern: Pattern::Random { seed } }),
            PlanStage::new("sq", OpKind::Pointwise(PointOp::Square)),
            PlanStage::new("c", OpKind::Convolve(Arc::new(Kernel3D::mean_box([3, 3, 3]).unwrap()))),
            PlanStage::new("h", OpKind::Histogram { out: None, range: None }),
        ]);
        let budget = Budget::new(slices * s + 4096).unwrap().with_epsilon(0);
        let p = planner::plan(&g, &budget, &PlanOptions::default()).unwrap();
        prop_assume!(p.is_feasible());
        prop_assert!(p.ledger.peak_estimate < budget.cap());
        let ctx = RunContext::new();
        let r = stackstream::run_plan(&p, &ctx, &ExecOptions::default()).unwrap();
        prop_assert!(r.peak_bytes <= p.ledger.peak_estimate, "{} > {}", r.peak_bytes, p.ledger.peak_estimate);
        prop_assert_eq!(ctx.meter().live_slices(), 0);
    }
}
