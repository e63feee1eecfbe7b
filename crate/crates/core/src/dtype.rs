//! Voxel types and the typed buffers that hold them.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::error::PlanError;

/// Voxel element type. Only byte widths 1, 2 and 4 exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dtype {
    U8,
    U16,
    F32,
}

impl Dtype {
    pub const fn byte_width(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U16 => 2,
            Dtype::F32 => 4,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            Dtype::U8 => "u8",
            Dtype::U16 => "u16",
            Dtype::F32 => "f32",
        }
    }

    pub const fn is_integer(self) -> bool {
        !matches!(self, Dtype::F32)
    }

    /// Value that thresholding maps to "on". Floats use 1.0.
    pub fn on_value(self) -> f64 {
        match self {
            Dtype::U8 => u8::MAX as f64,
            Dtype::U16 => u16::MAX as f64,
            Dtype::F32 => 1.0,
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dtype {
    type Err = PlanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "u8" => Ok(Dtype::U8),
            "u16" => Ok(Dtype::U16),
            "f32" => Ok(Dtype::F32),
            other => Err(PlanError::InvalidParameter(format!(
                "unknown dtype `{other}` (expected u8, u16 or f32)"
            ))),
        }
    }
}

/// Scalar voxel element.
pub trait Voxel: Copy + Default + PartialOrd + Send + Sync + fmt::Debug + 'static {
    const DTYPE: Dtype;

    fn to_f64(self) -> f64;
    /// Rounds to nearest and saturates for integer types.
    fn from_f64(v: f64) -> Self;
    fn total_cmp(&self, other: &Self) -> Ordering;
    fn saturating_add(self, other: Self) -> Self;
    fn view(data: &SliceData) -> Option<&[Self]>;
    fn wrap(values: Vec<Self>) -> SliceData;
    fn write_le(values: &[Self], out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Vec<Self>;
}

macro_rules! impl_int_voxel {
    ($t:ty, $dtype:ident) => {
        impl Voxel for $t {
            const DTYPE: Dtype = Dtype::$dtype;

            fn to_f64(self) -> f64 {
                self as f64
            }
            fn from_f64(v: f64) -> Self {
                if v.is_nan() {
                    0
                } else {
                    // `as` saturates at the type bounds
                    v.round() as $t
                }
            }
            fn total_cmp(&self, other: &Self) -> Ordering {
                self.cmp(other)
            }
            fn saturating_add(self, other: Self) -> Self {
                <$t>::saturating_add(self, other)
            }
            fn view(data: &SliceData) -> Option<&[Self]> {
                match data {
                    SliceData::$dtype(v) => Some(v),
                    _ => None,
                }
            }
            fn wrap(values: Vec<Self>) -> SliceData {
                SliceData::$dtype(values)
            }
            fn write_le(values: &[Self], out: &mut Vec<u8>) {
                out.reserve(values.len() * std::mem::size_of::<$t>());
                for v in values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            fn read_le(bytes: &[u8]) -> Vec<Self> {
                bytes
                    .chunks_exact(std::mem::size_of::<$t>())
                    .map(|c| <$t>::from_le_bytes(c.try_into().unwrap()))
                    .collect()
            }
        }
    };
}

impl_int_voxel!(u8, U8);
impl_int_voxel!(u16, U16);

impl Voxel for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn total_cmp(&self, other: &Self) -> Ordering {
        f32::total_cmp(self, other)
    }
    fn saturating_add(self, other: Self) -> Self {
        self + other
    }
    fn view(data: &SliceData) -> Option<&[Self]> {
        match data {
            SliceData::F32(v) => Some(v),
            _ => None,
        }
    }
    fn wrap(values: Vec<Self>) -> SliceData {
        SliceData::F32(values)
    }
    fn write_le(values: &[Self], out: &mut Vec<u8>) {
        out.reserve(values.len() * 4);
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn read_le(bytes: &[u8]) -> Vec<Self> {
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    }
}

/// Runs `$body` with `$T` bound to the voxel type for `$dtype`.
#[macro_export]
macro_rules! with_voxel {
    ($dtype:expr, $T:ident => $body:expr) => {
        match $dtype {
            $crate::Dtype::U8 => {
                type $T = u8;
                $body
            }
            $crate::Dtype::U16 => {
                type $T = u16;
                $body
            }
            $crate::Dtype::F32 => {
                type $T = f32;
                $body
            }
        }
    };
}

/// Typed, row-major voxel buffer.
#[derive(Debug, Clone, PartialEq)]
pub enum SliceData {
    U8(Vec<u8>),
    U16(Vec<u16>),
    F32(Vec<f32>),
}

impl SliceData {
    pub fn zeros(dtype: Dtype, len: usize) -> Self {
        match dtype {
            Dtype::U8 => SliceData::U8(vec![0; len]),
            Dtype::U16 => SliceData::U16(vec![0; len]),
            Dtype::F32 => SliceData::F32(vec![0.0; len]),
        }
    }

    pub fn filled(dtype: Dtype, len: usize, value: f64) -> Self {
        with_voxel!(dtype, T => T::wrap(vec![T::from_f64(value); len]))
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            SliceData::U8(_) => Dtype::U8,
            SliceData::U16(_) => Dtype::U16,
            SliceData::F32(_) => Dtype::F32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SliceData::U8(v) => v.len(),
            SliceData::U16(v) => v.len(),
            SliceData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn byte_len(&self) -> usize {
        self.len() * self.dtype().byte_width()
    }

    pub fn get_f64(&self, i: usize) -> f64 {
        match self {
            SliceData::U8(v) => v[i] as f64,
            SliceData::U16(v) => v[i] as f64,
            SliceData::F32(v) => v[i] as f64,
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.get_f64(i)).collect()
    }

    pub fn from_f64_iter(dtype: Dtype, values: impl Iterator<Item = f64>) -> Self {
        with_voxel!(dtype, T => T::wrap(values.map(T::from_f64).collect()))
    }

    /// Little-endian serialization.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        match self {
            SliceData::U8(v) => out.extend_from_slice(v),
            SliceData::U16(v) => u16::write_le(v, &mut out),
            SliceData::F32(v) => f32::write_le(v, &mut out),
        }
        out
    }

    pub fn from_le_bytes(dtype: Dtype, bytes: &[u8]) -> Self {
        with_voxel!(dtype, T => T::wrap(T::read_le(bytes)))
    }
}
