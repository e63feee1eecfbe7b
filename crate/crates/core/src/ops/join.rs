//! Slice-aligned combination of two streams.

use std::fmt;
use std::str::FromStr;

use crate::dtype::Voxel;
use crate::error::{PlanError, Result};
use crate::slice::Slice;
use crate::stream::{self, SliceStream};
use crate::with_voxel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinFn {
    /// Saturating for integer voxels.
    Add,
    Max,
    Min,
}

impl JoinFn {
    pub fn combine(&self, a: &Slice, b: &Slice) -> Result<Slice> {
        let plane = a.plane();
        let data = with_voxel!(plane.dtype, T => {
            let out: Vec<T> = a
                .values::<T>()
                .iter()
                .zip(b.values::<T>())
                .map(|(&x, &y)| match self {
                    JoinFn::Add => x.saturating_add(y),
                    JoinFn::Max => if x.total_cmp(&y).is_ge() { x } else { y },
                    JoinFn::Min => if x.total_cmp(&y).is_le() { x } else { y },
                })
                .collect();
            T::wrap(out)
        });
        a.derive(plane, data)
    }
}

impl fmt::Display for JoinFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JoinFn::Add => "add",
            JoinFn::Max => "max",
            JoinFn::Min => "min",
        })
    }
}

impl FromStr for JoinFn {
    type Err = PlanError;

    fn from_str(s: &str) -> Result<Self, PlanError> {
        match s {
            "add" => Ok(JoinFn::Add),
            "max" => Ok(JoinFn::Max),
            "min" => Ok(JoinFn::Min),
            other => Err(PlanError::InvalidParameter(format!(
                "unknown join function `{other}` (expected add, max or min)"
            ))),
        }
    }
}

/// `map(f) . zip(a, b)`.
pub fn join_stream(f: JoinFn, stage: &str, a: SliceStream, b: SliceStream) -> Result<SliceStream> {
    let plane = a.plane();
    let pairs = stream::zip(a, b)?;
    Ok(stream::map(pairs, stage, plane, move |(x, y): (Slice, Slice)| f.combine(&x, &y)))
}

/// Voxelwise sum of two slice-aligned streams.
pub fn add_streams(a: SliceStream, b: SliceStream) -> Result<SliceStream> {
    join_stream(JoinFn::Add, "add", a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtype::Dtype;
    use crate::slice::MemoryMeter;
    use crate::volume::PlaneMeta;

    #[test]
    fn add_saturates_u8() {
        let m = MemoryMeter::new();
        let p = PlaneMeta::new(2, 2, Dtype::U8).unwrap();
        let a = Slice::filled(&m, p, 200.0).unwrap();
        let b = Slice::filled(&m, p, 100.0).unwrap();
        let c = JoinFn::Add.combine(&a, &b).unwrap();
        assert!(c.values::<u8>().iter().all(|&v| v == 255));
        let d = JoinFn::Min.combine(&a, &b).unwrap();
        assert!(d.values::<u8>().iter().all(|&v| v == 100));
    }

    #[test]
    fn parse_names() {
        assert_eq!("max".parse::<JoinFn>().unwrap(), JoinFn::Max);
        assert!("sub".parse::<JoinFn>().is_err());
    }
}
