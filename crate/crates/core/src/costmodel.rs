//! I/O cost of neighbourhood operators on slice stacks versus chunked
//! stores: halo geometry and simulated rereads under an LRU cache.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::PlanError;
use crate::io::ChunkGrid;

/// Chunk visiting order for curve traversals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveOrder {
    /// z outermost, x innermost.
    ZMajor,
    /// x outermost, z innermost.
    XMajor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraversalKind {
    SliceSweepUp,
    SliceSweepDown,
    ChunkRandom { seed: u64 },
    ChunkCurve(CurveOrder),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraversalPolicy {
    pub kind: TraversalKind,
    /// Units (chunks or slices) the cache holds.
    pub cache_capacity: usize,
}

impl TraversalPolicy {
    pub fn new(kind: TraversalKind, cache_capacity: usize) -> Self {
        TraversalPolicy { kind, cache_capacity }
    }

    pub fn is_slice(&self) -> bool {
        matches!(self.kind, TraversalKind::SliceSweepUp | TraversalKind::SliceSweepDown)
    }

    /// The three regimes compared in the layout report: chunks in random
    /// order with no reuse, a z-major curve keeping one 3x3x3
    /// neighbourhood, and a slice sweep keeping one kernel window.
    pub fn standard(seed: u64, kernel_depth: usize) -> Vec<TraversalPolicy> {
        vec![
            TraversalPolicy::new(TraversalKind::ChunkRandom { seed }, 0),
            TraversalPolicy::new(TraversalKind::ChunkCurve(CurveOrder::ZMajor), 27),
            TraversalPolicy::new(TraversalKind::SliceSweepUp, kernel_depth.max(1)),
        ]
    }
}

impl fmt::Display for TraversalPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            TraversalKind::SliceSweepUp => write!(f, "slice_sweep_up")?,
            TraversalKind::SliceSweepDown => write!(f, "slice_sweep_down")?,
            TraversalKind::ChunkRandom { seed } => write!(f, "chunk_random(seed={seed})")?,
            TraversalKind::ChunkCurve(CurveOrder::ZMajor) => write!(f, "chunk_curve(zyx)")?,
            TraversalKind::ChunkCurve(CurveOrder::XMajor) => write!(f, "chunk_curve(xyz)")?,
        }
        write!(f, " cache={}", self.cache_capacity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub policy: TraversalPolicy,
    /// Chunks or slices in the volume.
    pub units: usize,
    pub total_reads: u64,
    pub min_reads: u64,
    pub mean_reads: f64,
    pub max_reads: u64,
    /// Reads of units with a full neighbourhood, when they all agree.
    pub interior_reads: Option<u64>,
    /// `total_reads / units`.
    pub amplification: f64,
    /// Bytes read beyond one pass over the volume.
    pub halo_bytes: u64,
    reads: Vec<u64>,
}

impl CostReport {
    pub fn reads(&self) -> &[u64] {
        &self.reads
    }

    /// One `key=value` line per report.
    pub fn to_line(&self) -> String {
        format!(
            "io policy={} units={} reads={} min={} mean={:.3} max={} interior={} amplification={:.3} halo_bytes={}",
            self.policy.to_string().replace(' ', ","),
            self.units,
            self.total_reads,
            self.min_reads,
            self.mean_reads,
            self.max_reads,
            self.interior_reads.map_or("-".to_string(), |v| v.to_string()),
            self.amplification,
            self.halo_bytes
        )
    }
}

/// Input region needed to produce an output block of `chunk` voxels with a
/// kernel of `kernel` voxels: `c + k - 1` per axis.
pub fn halo_extent(chunk: [usize; 3], kernel: [usize; 3]) -> Result<[usize; 3], PlanError> {
    for a in 0..3 {
        if kernel[a] == 0 || chunk[a] == 0 {
            return Err(PlanError::InvalidParameter("chunk and kernel dims must be >= 1".into()));
        }
        if kernel[a] > chunk[a] {
            return Err(PlanError::InvalidParameter(format!(
                "kernel {kernel:?} exceeds chunk {chunk:?}; halos spanning several chunks are not modelled"
            )));
        }
    }
    Ok([0, 1, 2].map(|a| chunk[a] + kernel[a] - 1))
}

/// Chunks sharing a face, edge or corner with `idx`.
pub fn neighbour_count(grid: &ChunkGrid, idx: [usize; 3]) -> usize {
    let g = grid.grid();
    let span = |a: usize| {
        let lo = idx[a].saturating_sub(1);
        let hi = (idx[a] + 1).min(g[a] - 1);
        hi + 1 - lo
    };
    span(0) * span(1) * span(2) - 1
}

/// Least-recently-used set of units with an exact capacity. Positions
/// outside the volume take cache slots like real units but cost nothing
/// to load.
struct Lru {
    capacity: usize,
    stamp: u64,
    last: HashMap<[isize; 3], u64>,
    by_age: BTreeMap<u64, [isize; 3]>,
}

impl Lru {
    fn new(capacity: usize) -> Self {
        Lru {
            capacity,
            stamp: 0,
            last: HashMap::new(),
            by_age: BTreeMap::new(),
        }
    }

    /// Touches `key`; returns true when it had to be loaded.
    fn access(&mut self, key: [isize; 3]) -> bool {
        self.stamp += 1;
        if let Some(old) = self.last.insert(key, self.stamp) {
            self.by_age.remove(&old);
            self.by_age.insert(self.stamp, key);
            return false;
        }
        if self.capacity == 0 {
            self.last.remove(&key);
            return true;
        }
        self.by_age.insert(self.stamp, key);
        if self.last.len() > self.capacity {
            let (&age, &victim) = self.by_age.iter().next().expect("cache is non-empty");
            self.by_age.remove(&age);
            self.last.remove(&victim);
        }
        true
    }
}

fn summarize(policy: TraversalPolicy, reads: Vec<u64>, interior: Vec<bool>, unit_bytes: &[u64]) -> CostReport {
    let units = reads.len();
    let total: u64 = reads.iter().sum();
    let inner: Vec<u64> = reads.iter().zip(&interior).filter(|(_, &i)| i).map(|(&r, _)| r).collect();
    let interior_reads = match inner.split_first() {
        Some((&first, rest)) if rest.iter().all(|&r| r == first) => Some(first),
        _ => None,
    };
    let extra: u64 = reads
        .iter()
        .zip(unit_bytes)
        .map(|(&r, &b)| r.saturating_sub(1) * b)
        .sum();
    CostReport {
        policy,
        units,
        total_reads: total,
        min_reads: reads.iter().copied().min().unwrap_or(0),
        mean_reads: total as f64 / units.max(1) as f64,
        max_reads: reads.iter().copied().max().unwrap_or(0),
        interior_reads,
        amplification: total as f64 / units.max(1) as f64,
        halo_bytes: extra,
        reads,
    }
}

/// Simulates producing every output unit once. Chunk policies visit each
/// chunk and touch its neighbourhood (one chunk further along every axis
/// where the kernel is wider than one voxel); slice policies slide a
/// `k_z` window along z.
pub fn simulate_rereads(grid: &ChunkGrid, policy: TraversalPolicy, kernel: [usize; 3]) -> CostReport {
    let meta = grid.meta();
    if policy.is_slice() {
        let d = meta.depth;
        let r = (kernel[2] / 2) as isize;
        let mut cache = Lru::new(policy.cache_capacity);
        let mut reads = vec![0u64; d];
        let order: Vec<usize> = match policy.kind {
            TraversalKind::SliceSweepDown => (0..d).rev().collect(),
            _ => (0..d).collect(),
        };
        for z in order {
            let zs: Vec<isize> = if policy.kind == TraversalKind::SliceSweepDown {
                (z as isize - r..=z as isize + r).rev().collect()
            } else {
                (z as isize - r..=z as isize + r).collect()
            };
            for zz in zs {
                if cache.access([0, 0, zz]) && (0..d as isize).contains(&zz) {
                    reads[zz as usize] += 1;
                }
            }
        }
        let interior = (0..d).map(|z| z as isize >= r && z as isize + r < d as isize).collect();
        let bytes = vec![meta.slice_bytes(); d];
        return summarize(policy, reads, interior, &bytes);
    }

    let g = grid.grid();
    let radius = kernel.map(|k| isize::from(k > 1));
    let index = |c: [usize; 3]| (c[2] * g[1] + c[1]) * g[0] + c[0];
    let mut order: Vec<[usize; 3]> = match policy.kind {
        TraversalKind::ChunkCurve(CurveOrder::XMajor) => (0..g[0])
            .flat_map(|x| (0..g[1]).flat_map(move |y| (0..g[2]).map(move |z| [x, y, z])))
            .collect(),
        _ => grid.indices().collect(),
    };
    if let TraversalKind::ChunkRandom { seed } = policy.kind {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut cache = Lru::new(policy.cache_capacity);
    let mut reads = vec![0u64; grid.count()];
    for c in order {
        for dz in -radius[2]..=radius[2] {
            for dy in -radius[1]..=radius[1] {
                for dx in -radius[0]..=radius[0] {
                    let p = [c[0] as isize + dx, c[1] as isize + dy, c[2] as isize + dz];
                    let inside = (0..3).all(|a| (0..g[a] as isize).contains(&p[a]));
                    if cache.access(p) && inside {
                        reads[index(p.map(|v| v as usize))] += 1;
                    }
                }
            }
        }
    }
    let mut interior = vec![false; grid.count()];
    let mut bytes = vec![0u64; grid.count()];
    for c in grid.indices() {
        interior[index(c)] = (0..3).all(|a| c[a] as isize >= radius[a] && c[a] as isize + radius[a] < g[a] as isize);
        let (_, e) = grid.region(c);
        bytes[index(c)] = (e[0] * e[1] * e[2] * meta.dtype.byte_width()) as u64;
    }
    summarize(policy, reads, interior, &bytes)
}

/// Runs every policy over the same grid and kernel.
pub fn layout_report(grid: &ChunkGrid, kernel: [usize; 3], policies: &[TraversalPolicy]) -> Vec<CostReport> {
    policies.iter().map(|&p| simulate_rereads(grid, p, kernel)).collect()
}

/// Fixed-width table of a layout report.
pub fn render_report(grid: &ChunkGrid, kernel: [usize; 3], reports: &[CostReport]) -> String {
    let mut out = format!(
        "io layout: dims {:?} chunk {:?} grid {:?} kernel {:?}\n",
        grid.meta().dims(),
        grid.chunk(),
        grid.grid(),
        kernel
    );
    out.push_str(&format!(
        "{:<30} {:>6} {:>8} {:>5} {:>8} {:>5} {:>8} {:>13}\n",
        "policy", "units", "reads", "min", "mean", "max", "interior", "amplification"
    ));
    for r in reports {
        out.push_str(&format!(
            "{:<30} {:>6} {:>8} {:>5} {:>8.3} {:>5} {:>8} {:>13.3}\n",
            r.policy.to_string(),
            r.units,
            r.total_reads,
            r.min_reads,
            r.mean_reads,
            r.max_reads,
            r.interior_reads.map_or("-".to_string(), |v| v.to_string()),
            r.amplification
        ));
    }
    for r in reports {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}
