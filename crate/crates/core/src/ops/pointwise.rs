//! Single-voxel operators.

use std::fmt;

use crate::dtype::{Dtype, SliceData, Voxel};
use crate::error::Result;
use crate::slice::Slice;
use crate::stream::{self, SliceStream};
use crate::with_voxel;

use super::kernel::with_depth;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointOp {
    Identity,
    /// `v >= t` becomes the dtype's "on" value, everything else 0.
    Threshold(f64),
    Square,
    /// `max - v` for integers, `-v` for floats.
    Invert,
    Scale(f64),
    Convert(Dtype),
}

impl PointOp {
    pub fn output_dtype(&self, input: Dtype) -> Dtype {
        match self {
            PointOp::Convert(d) => *d,
            _ => input,
        }
    }

    pub fn apply_value(&self, v: f64, dtype: Dtype) -> f64 {
        match *self {
            PointOp::Identity | PointOp::Convert(_) => v,
            PointOp::Threshold(t) => {
                if v >= t {
                    dtype.on_value()
                } else {
                    0.0
                }
            }
            PointOp::Square => v * v,
            PointOp::Invert => match dtype {
                Dtype::F32 => -v,
                _ => dtype.on_value() - v,
            },
            PointOp::Scale(c) => v * c,
        }
    }

    /// Applies the operator to one slice, allocating the result on the
    /// same meter.
    pub fn apply(&self, slice: &Slice) -> Result<Slice> {
        let plane = slice.plane();
        let out_plane = plane.with_dtype(self.output_dtype(plane.dtype));
        let data = match self {
            PointOp::Identity => slice.data().clone(),
            PointOp::Convert(_) => {
                SliceData::from_f64_iter(out_plane.dtype, (0..plane.voxels()).map(|i| slice.data().get_f64(i)))
            }
            op => with_voxel!(plane.dtype, T => {
                let out: Vec<T> = slice
                    .values::<T>()
                    .iter()
                    .map(|v| T::from_f64(op.apply_value(v.to_f64(), plane.dtype)))
                    .collect();
                T::wrap(out)
            }),
        };
        slice.derive(out_plane, data)
    }
}

impl fmt::Display for PointOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PointOp::Identity => write!(f, "identity"),
            PointOp::Threshold(t) => write!(f, "threshold t={t}"),
            PointOp::Square => write!(f, "square"),
            PointOp::Invert => write!(f, "invert"),
            PointOp::Scale(c) => write!(f, "scale c={c}"),
            PointOp::Convert(d) => write!(f, "convert dtype={d}"),
        }
    }
}

/// `flatten . map(f) . windowed(w, w, 0)`, holding `w` input and `w`
/// output slices per step.
pub fn pointwise_stream(op: PointOp, stage: &str, w: usize, input: SliceStream) -> Result<SliceStream> {
    let plane = input.plane();
    let out_plane = plane.with_dtype(op.output_dtype(plane.dtype));
    let depth = input.depth();
    let windows = stream::batched(w, input)?;
    let mapped = stream::map(windows, stage, out_plane, move |win: stream::Window| {
        win.iter().map(|s| op.apply(s)).collect::<Result<Vec<_>>>()
    });
    Ok(with_depth(stream::flatten(mapped), depth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slice::MemoryMeter;
    use crate::volume::PlaneMeta;

    fn one(meter: &MemoryMeter, dtype: Dtype, v: f64) -> Slice {
        Slice::filled(meter, PlaneMeta::new(3, 2, dtype).unwrap(), v).unwrap()
    }

    #[test]
    fn threshold_boundary() {
        let m = MemoryMeter::new();
        let lo = PointOp::Threshold(100.0).apply(&one(&m, Dtype::U8, 99.0)).unwrap();
        let hi = PointOp::Threshold(100.0).apply(&one(&m, Dtype::U8, 100.0)).unwrap();
        assert!(lo.values::<u8>().iter().all(|&v| v == 0));
        assert!(hi.values::<u8>().iter().all(|&v| v == 255));
    }

    #[test]
    fn square_float() {
        let m = MemoryMeter::new();
        let s = PointOp::Square.apply(&one(&m, Dtype::F32, 1.5)).unwrap();
        assert!(s.values::<f32>().iter().all(|&v| v == 2.25));
    }

    #[test]
    fn square_saturates() {
        let m = MemoryMeter::new();
        let s = PointOp::Square.apply(&one(&m, Dtype::U8, 20.0)).unwrap();
        assert!(s.values::<u8>().iter().all(|&v| v == 255));
    }

    #[test]
    fn convert_rounds_and_changes_dtype() {
        let m = MemoryMeter::new();
        let s = PointOp::Convert(Dtype::U8).apply(&one(&m, Dtype::F32, 3.6)).unwrap();
        assert_eq!(s.plane().dtype, Dtype::U8);
        assert!(s.values::<u8>().iter().all(|&v| v == 4));
    }

    #[test]
    fn invert_u16() {
        let m = MemoryMeter::new();
        let s = PointOp::Invert.apply(&one(&m, Dtype::U16, 5.0)).unwrap();
        assert!(s.values::<u16>().iter().all(|&v| v == 65530));
    }
}
