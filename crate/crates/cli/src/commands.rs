//! The `plan`, `run`, `explain` and `gen` commands. Each returns its
//! stdout, stderr and exit code so tests can call them directly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use stackstream::costmodel::{layout_report, render_report, TraversalPolicy};
use stackstream::io::chunks::ChunkGrid;
use stackstream::planner::{self, geometry};
use stackstream::{
    context, Budget, Dtype, Error, ExecOptions, OpKind, PipelineGraph, PlanOptions, PlanStage, RunContext, Verdict,
    VolumeMeta,
};

use crate::build::{build, parse_pattern};
use crate::spec::{parse, PipelineSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Outcome {
    pub stdout: String,
    pub stderr: String,
    pub code: i32,
}

impl Outcome {
    fn fail(code: i32, msg: impl Into<String>) -> Self {
        Outcome {
            stdout: String::new(),
            stderr: msg.into(),
            code,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Flags {
    pub seed: u64,
    pub threads: usize,
    pub fuse: bool,
    pub force_exact_windows: bool,
    pub io: bool,
    /// Chunk edge assumed by the `--io` report for slice-stack inputs.
    pub io_chunk: usize,
    pub budget: Option<u64>,
    pub tmp_dir: PathBuf,
}

impl Default for Flags {
    fn default() -> Self {
        Flags {
            seed: 0,
            threads: 1,
            fuse: false,
            force_exact_windows: false,
            io: false,
            io_chunk: 16,
            budget: None,
            tmp_dir: context::default_tmp_dir(),
        }
    }
}

struct Loaded {
    spec: PipelineSpec,
    graph: PipelineGraph,
    budget: Budget,
}

fn load(path: &Path, flags: &Flags) -> Result<Loaded, Outcome> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Outcome::fail(EXIT_PARSE, format!("error: cannot read {}: {e}\n", path.display())))?;
    load_text(&text, &path.display().to_string(), flags)
}

fn load_text(text: &str, label: &str, flags: &Flags) -> Result<Loaded, Outcome> {
    let spec = parse(text).map_err(|e| Outcome::fail(EXIT_PARSE, format!("error: {label}:{e}\n")))?;
    let (graph, mut budget) = build(&spec, flags.seed).map_err(|e| Outcome::fail(EXIT_PARSE, format!("error: {label}:{e}\n")))?;
    if let Some(cap) = flags.budget {
        budget = Budget::new(cap)
            .map_err(|e| Outcome::fail(EXIT_PARSE, format!("error: {e}\n")))?
            .with_epsilon(budget.overhead_epsilon());
    }
    Ok(Loaded { spec, graph, budget })
}

fn options(flags: &Flags) -> PlanOptions {
    PlanOptions {
        fuse: flags.fuse,
        share_windows: true,
        optimize: !flags.force_exact_windows,
        threads: flags.threads,
        tmp_dir: flags.tmp_dir.clone(),
    }
}

fn error_code(e: &Error) -> i32 {
    if e.is_planning() {
        EXIT_INFEASIBLE
    } else {
        EXIT_RUNTIME
    }
}

/// Full kernel footprint of a neighbourhood stage.
fn kernel_dims(stage: &PlanStage) -> Option<[usize; 3]> {
    match &stage.op {
        OpKind::Convolve(k) => Some(k.dims()),
        OpKind::FusedConvolve { outer, inner } => {
            let (a, b) = (outer.dims(), inner.dims());
            Some([a[0] + b[0] - 1, a[1] + b[1] - 1, a[2] + b[2] - 1])
        }
        OpKind::Gaussian { .. } => stage.kernel_depth().map(|d| [d; 3]),
        OpKind::Morphology { se, .. } => Some(se.dims()),
        OpKind::SharedWindow { branches } => branches.iter().filter_map(kernel_dims).reduce(|a, b| {
            [a[0].max(b[0]), a[1].max(b[1]), a[2].max(b[2])]
        }),
        _ => None,
    }
}

/// Reread simulation for every neighbourhood stage, over the chunk grid
/// of the stage's input.
fn io_report(g: &PipelineGraph, flags: &Flags) -> Result<String, Error> {
    let geo = geometry(g)?;
    let src = g.source()?;
    let chunk = match &g.node(src).op {
        OpKind::ReadChunks { meta: Some((_, c)), .. } => Some(*c),
        _ => None,
    };
    let mut out = String::new();
    let mut any = false;
    for id in g.topo_order()? {
        let node = g.node(id);
        let Some(kernel) = kernel_dims(node) else { continue };
        any = true;
        let meta = geo.basis(id);
        let c = chunk.unwrap_or([flags.io_chunk; 3]);
        let c = [c[0].min(meta.nx), c[1].min(meta.ny), c[2].min(meta.depth)];
        let _ = writeln!(out, "stage {}:", node.name);
        match ChunkGrid::new(meta, c) {
            Ok(grid) => {
                let policies = TraversalPolicy::standard(flags.seed, kernel[2]);
                if let Err(e) = stackstream::costmodel::halo_extent(c, kernel) {
                    let _ = writeln!(out, "  skipped: {e}");
                    continue;
                }
                let reports = layout_report(&grid, kernel, &policies);
                out.push_str(&render_report(&grid, kernel, &reports));
            }
            Err(e) => {
                let _ = writeln!(out, "  skipped: {e}");
            }
        }
    }
    if !any {
        out.push_str("io: no neighbourhood stages\n");
    }
    Ok(out)
}

/// `plan`: the memory ledger and repair actions.
pub fn cmd_plan(path: &Path, flags: &Flags) -> Outcome {
    match load(path, flags) {
        Ok(l) => plan_loaded(&l, flags),
        Err(o) => o,
    }
}

fn plan_loaded(l: &Loaded, flags: &Flags) -> Outcome {
    let plan = match planner::plan(&l.graph, &l.budget, &options(flags)) {
        Ok(p) => p,
        Err(e) => return Outcome::fail(error_code(&e), format!("error: {e}\n")),
    };
    let mut stdout = plan.ledger.render();
    if flags.io {
        match io_report(&plan.segments[0], flags) {
            Ok(r) => stdout.push_str(&r),
            Err(e) => return Outcome::fail(error_code(&e), format!("error: {e}\n")),
        }
    }
    let code = if plan.is_feasible() { EXIT_OK } else { EXIT_INFEASIBLE };
    Outcome {
        stdout,
        stderr: String::new(),
        code,
    }
}

/// `explain`: canonical spec, graph, ledger and (with `--io`) the reread
/// simulation.
pub fn cmd_explain(path: &Path, flags: &Flags) -> Outcome {
    let l = match load(path, flags) {
        Ok(l) => l,
        Err(o) => return o,
    };
    let mut stdout = String::from("# spec\n");
    stdout.push_str(&l.spec.pretty());
    stdout.push_str("# graph\n");
    for (a, b) in l.graph.edges() {
        let _ = writeln!(stdout, "{} -> {}", l.graph.node(*a).name, l.graph.node(*b).name);
    }
    stdout.push_str("# plan\n");
    let planned = plan_loaded(&l, flags);
    stdout.push_str(&planned.stdout);
    Outcome {
        stdout,
        stderr: planned.stderr,
        code: planned.code,
    }
}

/// `run`: plan, execute, and report what the run did.
pub fn cmd_run(path: &Path, flags: &Flags) -> Outcome {
    match load(path, flags) {
        Ok(l) => run_loaded(&l, flags),
        Err(o) => o,
    }
}

pub fn run_text(text: &str, flags: &Flags) -> Outcome {
    match load_text(text, "<spec>", flags) {
        Ok(l) => run_loaded(&l, flags),
        Err(o) => o,
    }
}

fn run_loaded(l: &Loaded, flags: &Flags) -> Outcome {
    let plan = match planner::plan(&l.graph, &l.budget, &options(flags)) {
        Ok(p) => p,
        Err(e) => return Outcome::fail(error_code(&e), format!("error: {e}\n")),
    };
    let mut stdout = plan.ledger.render();
    if let Verdict::Infeasible { stage, .. } = &plan.ledger.verdict {
        return Outcome {
            stdout,
            stderr: format!("error: plan is infeasible at stage `{stage}`\n"),
            code: EXIT_INFEASIBLE,
        };
    }
    let ctx = RunContext::new().with_tmp_dir(&flags.tmp_dir);
    let exec = ExecOptions {
        threads: flags.threads,
        fail: None,
    };
    match stackstream::run_plan(&plan, &ctx, &exec) {
        Ok(report) => {
            stdout.push_str("# run\n");
            stdout.push_str(&report.render());
            let promised = plan.ledger.peak_estimate + plan.ledger.epsilon_allowance();
            let _ = writeln!(stdout, "peak_within_estimate: {}", report.peak_bytes <= promised);
            let code = if report.live_slices == 0 { EXIT_OK } else { EXIT_RUNTIME };
            let stderr = if code == EXIT_OK {
                String::new()
            } else {
                format!("error: {} slices still live after the run\n", report.live_slices)
            };
            Outcome { stdout, stderr, code }
        }
        Err(e) => Outcome {
            stdout,
            stderr: format!("error: {e}\n"),
            code: error_code(&e),
        },
    }
}

#[derive(Debug, Clone)]
pub struct GenArgs {
    pub dir: PathBuf,
    pub dims: [usize; 3],
    pub dtype: Dtype,
    pub pattern: String,
    pub value: f64,
    pub chunk: Option<[usize; 3]>,
}

/// `gen`: writes a synthetic volume as a slice stack or chunk store.
pub fn cmd_gen(args: &GenArgs, flags: &Flags) -> Outcome {
    let Some(pattern) = parse_pattern(&args.pattern, args.value, flags.seed) else {
        return Outcome::fail(
            EXIT_PARSE,
            format!("error: unknown pattern `{}` (constant, ramp, impulse, random)\n", args.pattern),
        );
    };
    let meta = match VolumeMeta::new(args.dims[0], args.dims[1], args.dims[2], args.dtype) {
        Ok(m) => m,
        Err(e) => return Outcome::fail(EXIT_PARSE, format!("error: {e}\n")),
    };
    let sink = match args.chunk {
        Some(chunk) => OpKind::WriteChunks {
            dir: args.dir.clone(),
            chunk,
        },
        None => OpKind::Write { dir: args.dir.clone() },
    };
    let g = PipelineGraph::linear(vec![
        PlanStage::new("generate", OpKind::Generate { meta, pattern }),
        PlanStage::new("write", sink),
    ]);
    let ctx = RunContext::new();
    match stackstream::execute(&g, &ctx, &ExecOptions::default()) {
        Ok(report) => Outcome {
            stdout: report.outputs.iter().map(|(n, o)| format!("{n}: {o}\n")).collect(),
            stderr: String::new(),
            code: EXIT_OK,
        },
        Err(e) => Outcome::fail(error_code(&e), format!("error: {e}\n")),
    }
}
