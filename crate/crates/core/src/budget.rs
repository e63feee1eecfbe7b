use std::fmt;
use std::ops::Add;

use crate::error::PlanError;

pub const KIB: u64 = 1 << 10;
pub const MIB: u64 = 1 << 20;
pub const GIB: u64 = 1 << 30;
pub const TIB: u64 = 1 << 40;

/// Per-stage allowance for constant-size bookkeeping.
pub const DEFAULT_EPSILON: u64 = MIB;

/// RAM cap for one pipeline plus the constant per-stage allowance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    cap: u64,
    overhead_epsilon: u64,
}

impl Budget {
    pub fn new(cap: u64) -> Result<Self, PlanError> {
        if cap == 0 {
            return Err(PlanError::InvalidParameter("budget must be > 0 bytes".into()));
        }
        Ok(Budget {
            cap,
            overhead_epsilon: DEFAULT_EPSILON,
        })
    }

    pub fn unbounded() -> Self {
        Budget {
            cap: u64::MAX,
            overhead_epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn with_epsilon(self, overhead_epsilon: u64) -> Self {
        Budget {
            overhead_epsilon,
            ..self
        }
    }

    pub fn cap(&self) -> u64 {
        self.cap
    }

    pub fn overhead_epsilon(&self) -> u64 {
        self.overhead_epsilon
    }

    /// Strict budget test `estimate + stages * epsilon < cap`.
    pub fn admits(&self, estimate: u64, stages: usize) -> bool {
        estimate
            .saturating_add(self.overhead_epsilon.saturating_mul(stages as u64))
            < self.cap
    }
}

/// Input, output and internal bytes of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MemEstimate {
    pub input: u64,
    pub output: u64,
    pub internal: u64,
}

impl MemEstimate {
    pub const ZERO: MemEstimate = MemEstimate {
        input: 0,
        output: 0,
        internal: 0,
    };

    pub fn new(input: u64, output: u64, internal: u64) -> Self {
        MemEstimate {
            input,
            output,
            internal,
        }
    }

    pub fn total(&self) -> u64 {
        self.input + self.output + self.internal
    }
}

impl Add for MemEstimate {
    type Output = MemEstimate;

    fn add(self, rhs: Self) -> Self {
        MemEstimate {
            input: self.input + rhs.input,
            output: self.output + rhs.output,
            internal: self.internal + rhs.internal,
        }
    }
}

/// Parses `<n>[B|KiB|MiB|GiB|TiB]`. Decimal units are rejected.
pub fn parse_bytes(text: &str) -> Result<u64, PlanError> {
    let t = text.trim();
    let split = t.find(|c: char| !c.is_ascii_digit()).unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let err = |why: &str| PlanError::InvalidParameter(format!("bad memory size `{text}`: {why}"));
    if num.is_empty() {
        return Err(err("missing number"));
    }
    let n: u64 = num.parse().map_err(|_| err("number out of range"))?;
    let mult = match unit.trim() {
        "" | "B" => 1,
        "KiB" => KIB,
        "MiB" => MIB,
        "GiB" => GIB,
        "TiB" => TIB,
        "KB" | "kB" | "MB" | "GB" | "TB" | "K" | "M" | "G" | "T" => {
            return Err(err("only binary units B/KiB/MiB/GiB/TiB are accepted"))
        }
        _ => return Err(err("unknown unit")),
    };
    n.checked_mul(mult).ok_or_else(|| err("overflow"))
}

/// Renders a byte count with the largest binary unit that divides it.
pub fn format_bytes(bytes: u64) -> String {
    for (unit, size) in [("TiB", TIB), ("GiB", GIB), ("MiB", MIB), ("KiB", KIB)] {
        if bytes >= size && bytes.is_multiple_of(size) {
            return format!("{}{unit}", bytes / size);
        }
    }
    format!("{bytes}B")
}

impl fmt::Display for MemEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "alpha={} beta={} gamma={} total={}",
            self.input,
            self.output,
            self.internal,
            self.total()
        )
    }
}
