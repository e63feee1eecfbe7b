use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stackstream::Dtype;
use stackstream_cli::{cmd_explain, cmd_gen, cmd_plan, cmd_run, Flags, GenArgs, Outcome};

#[derive(Parser)]
#[command(name = "stackstream", version, about = "Plan and run memory-budgeted streaming pipelines over 3D slice stacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Seed for random sources and the reread simulation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run each stage on its own thread when above 1.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Fuse chained f32 convolutions into one kernel.
    #[arg(long)]
    fuse: bool,
    /// Keep the windows written in the spec instead of sizing them.
    #[arg(long)]
    force_exact_windows: bool,
    /// Override the budget from the spec, e.g. 512MiB.
    #[arg(long, value_parser = parse_budget)]
    budget: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the memory ledger and verdict.
    Plan {
        spec: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Append the chunk reread simulation.
        #[arg(long)]
        io: bool,
        /// Chunk edge assumed for slice-stack inputs in the --io report.
        #[arg(long, default_value_t = 16)]
        io_chunk: usize,
    },
    /// Plan and execute, then print the run report.
    Run {
        spec: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Print the canonical spec, the graph and the plan.
    Explain {
        spec: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        io: bool,
        #[arg(long, default_value_t = 16)]
        io_chunk: usize,
    },
    /// Write a synthetic test volume.
    Gen {
        dir: PathBuf,
        /// Volume size: N or NXxNYxNZ.
        #[arg(long, default_value = "64", value_parser = parse_dims)]
        dims: [usize; 3],
        #[arg(long, default_value = "u8")]
        dtype: Dtype,
        /// constant, ramp, impulse or random.
        #[arg(long, default_value = "ramp")]
        pattern: String,
        /// Value for the constant and impulse patterns.
        #[arg(long, default_value_t = 1.0)]
        value: f64,
        /// Write a chunk store with this chunk size instead of a stack.
        #[arg(long, value_parser = parse_dims)]
        chunk: Option<[usize; 3]>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_budget(s: &str) -> Result<u64, String> {
    stackstream::budget::parse_bytes(s).map_err(|e| e.to_string())
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split('x')
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| format!("`{s}` is not a size like 64 or 64x64x32"))?;
    match v.as_slice() {
        [n] => Ok([*n; 3]),
        [x, y, z] => Ok([*x, *y, *z]),
        _ => Err(format!("`{s}` is not a size like 64 or 64x64x32")),
    }
}

fn flags(c: &Common) -> Flags {
    Flags {
        seed: c.seed,
        threads: c.threads.max(1),
        fuse: c.fuse,
        force_exact_windows: c.force_exact_windows,
        budget: c.budget,
        ..Flags::default()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out: Outcome = match cli.command {
        Command::Plan { spec, common, io, io_chunk } => cmd_plan(
            &spec,
            &Flags {
                io,
                io_chunk,
                ..flags(&common)
            },
        ),
        Command::Run { spec, common } => cmd_run(&spec, &flags(&common)),
        Command::Explain { spec, common, io, io_chunk } => cmd_explain(
            &spec,
            &Flags {
                io,
                io_chunk,
                ..flags(&common)
            },
        ),
        Command::Gen {
            dir,
            dims,
            dtype,
            pattern,
            value,
            chunk,
            seed,
        } => cmd_gen(
            &GenArgs {
                dir,
                dims,
                dtype,
                pattern,
                value,
                chunk,
            },
            &Flags {
                seed,
                ..Flags::default()
            },
        ),
    };
    print!("{}", out.stdout);
    eprint!("{}", out.stderr);
    ExitCode::from(out.code as u8)
}
