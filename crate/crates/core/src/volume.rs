//! Volume geometry and a dense in-memory volume used for generation and
//! for comparing streamed results.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dtype::{Dtype, SliceData};
use crate::error::{Error, PlanError, Result};
use crate::slice::{MemoryMeter, Slice};
use crate::stream::{self, SliceStream};

/// Geometry of one x-y plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PlaneMeta {
    pub nx: usize,
    pub ny: usize,
    pub dtype: Dtype,
}

impl PlaneMeta {
    pub fn new(nx: usize, ny: usize, dtype: Dtype) -> Result<Self, PlanError> {
        if nx == 0 || ny == 0 {
            return Err(PlanError::InvalidParameter(format!(
                "plane dimensions must be >= 1, got {nx}x{ny}"
            )));
        }
        Ok(PlaneMeta { nx, ny, dtype })
    }

    pub fn voxels(&self) -> usize {
        self.nx * self.ny
    }

    pub fn slice_bytes(&self) -> u64 {
        (self.nx * self.ny * self.dtype.byte_width()) as u64
    }

    pub fn with_dtype(self, dtype: Dtype) -> Self {
        PlaneMeta { dtype, ..self }
    }
}

/// Dimensions and voxel type of a slice stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VolumeMeta {
    pub nx: usize,
    pub ny: usize,
    pub depth: usize,
    pub dtype: Dtype,
}

impl VolumeMeta {
    pub fn new(nx: usize, ny: usize, depth: usize, dtype: Dtype) -> Result<Self, PlanError> {
        if nx == 0 || ny == 0 || depth == 0 {
            return Err(PlanError::InvalidParameter(format!(
                "volume dimensions must be >= 1, got {nx}x{ny}x{depth}"
            )));
        }
        Ok(VolumeMeta {
            nx,
            ny,
            depth,
            dtype,
        })
    }

    pub fn cube(n: usize, dtype: Dtype) -> Result<Self, PlanError> {
        Self::new(n, n, n, dtype)
    }

    pub fn plane(&self) -> PlaneMeta {
        PlaneMeta {
            nx: self.nx,
            ny: self.ny,
            dtype: self.dtype,
        }
    }

    pub fn slice_bytes(&self) -> u64 {
        slice_bytes(self)
    }

    pub fn volume_bytes(&self) -> u64 {
        self.slice_bytes() * self.depth as u64
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.nx, self.ny, self.depth]
    }

    pub fn from_plane(plane: PlaneMeta, depth: usize) -> Result<Self, PlanError> {
        Self::new(plane.nx, plane.ny, depth, plane.dtype)
    }
}

/// Bytes in one x-y slice: `n_x * n_y * b`.
pub fn slice_bytes(meta: &VolumeMeta) -> u64 {
    meta.nx as u64 * meta.ny as u64 * meta.dtype.byte_width() as u64
}

/// Synthetic volume content.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pattern {
    Constant(f64),
    /// Value `(x + y + z) mod (max + 1)` for integers, `x + y + z` for floats.
    Ramp,
    /// Zero everywhere except the central voxel, which holds the value.
    Impulse(f64),
    Random { seed: u64 },
}

impl Pattern {
    /// Values of slice `z`, generated independently of the other slices.
    pub fn slice_values(&self, meta: &VolumeMeta, z: usize) -> SliceData {
        let n = meta.nx * meta.ny;
        match *self {
            Pattern::Constant(v) => SliceData::filled(meta.dtype, n, v),
            Pattern::Ramp => {
                let modulus = match meta.dtype {
                    Dtype::U8 => Some(256usize),
                    Dtype::U16 => Some(65536),
                    Dtype::F32 => None,
                };
                SliceData::from_f64_iter(
                    meta.dtype,
                    (0..n).map(|i| {
                        let s = i % meta.nx + i / meta.nx + z;
                        match modulus {
                            Some(m) => (s % m) as f64,
                            None => s as f64,
                        }
                    }),
                )
            }
            Pattern::Impulse(v) => {
                let (cx, cy, cz) = (meta.nx / 2, meta.ny / 2, meta.depth / 2);
                SliceData::from_f64_iter(
                    meta.dtype,
                    (0..n).map(|i| {
                        if z == cz && i == cy * meta.nx + cx {
                            v
                        } else {
                            0.0
                        }
                    }),
                )
            }
            Pattern::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (z as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                match meta.dtype {
                    Dtype::U8 => SliceData::U8((0..n).map(|_| rng.gen()).collect()),
                    Dtype::U16 => SliceData::U16((0..n).map(|_| rng.gen()).collect()),
                    Dtype::F32 => SliceData::F32((0..n).map(|_| rng.gen_range(0.0..256.0)).collect()),
                }
            }
        }
    }

    /// Streams the pattern through `initialize`.
    pub fn stream(&self, meta: VolumeMeta, meter: &MemoryMeter) -> SliceStream {
        let pattern = *self;
        let meter = meter.clone();
        let plane = meta.plane();
        stream::initialize(meta.depth, plane, move |z| {
            Slice::new(&meter, plane, pattern.slice_values(&meta, z))
        })
    }
}

/// A whole volume held in memory, z-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    meta: VolumeMeta,
    slices: Vec<SliceData>,
}

impl Volume {
    pub fn from_slices(meta: VolumeMeta, slices: Vec<SliceData>) -> Result<Self> {
        if slices.len() != meta.depth {
            return Err(Error::Data(format!(
                "expected {} slices, got {}",
                meta.depth,
                slices.len()
            )));
        }
        for s in &slices {
            if s.dtype() != meta.dtype || s.len() != meta.nx * meta.ny {
                return Err(Error::Data("slice does not match volume geometry".into()));
            }
        }
        Ok(Volume { meta, slices })
    }

    pub fn generate(meta: VolumeMeta, pattern: Pattern) -> Self {
        let slices = (0..meta.depth).map(|z| pattern.slice_values(&meta, z)).collect();
        Volume { meta, slices }
    }

    pub fn from_fn(meta: VolumeMeta, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let slices = (0..meta.depth)
            .map(|z| {
                SliceData::from_f64_iter(
                    meta.dtype,
                    (0..meta.nx * meta.ny).map(|i| f(i % meta.nx, i / meta.nx, z)),
                )
            })
            .collect();
        Volume { meta, slices }
    }

    pub fn meta(&self) -> VolumeMeta {
        self.meta
    }

    pub fn slices(&self) -> &[SliceData] {
        &self.slices
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.slices[z].get_f64(y * self.meta.nx + x)
    }

    /// Streams the volume; every slice is a fresh metered copy.
    pub fn stream(&self, meter: &MemoryMeter) -> SliceStream {
        let slices = self.slices.clone();
        let plane = self.meta.plane();
        let meter = meter.clone();
        stream::initialize(self.meta.depth, plane, move |z| {
            Slice::new(&meter, plane, slices[z].clone())
        })
    }

    /// Drains a stream into memory.
    pub fn collect(mut input: SliceStream) -> Result<Self> {
        let plane = input.plane();
        let mut slices = Vec::new();
        while let Some(s) = input.pull()? {
            slices.push(s.data().clone());
        }
        if slices.is_empty() {
            return Err(Error::Data("stream produced no slices".into()));
        }
        let meta = VolumeMeta::from_plane(plane, slices.len())?;
        Volume::from_slices(meta, slices)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slice_bytes_examples() {
        let m = VolumeMeta::new(64, 32, 1, Dtype::U16).unwrap();
        assert_eq!(slice_bytes(&m), 4096);
        let unit = VolumeMeta::new(1, 1, 1, Dtype::U8).unwrap();
        assert_eq!(slice_bytes(&unit), 1);
        let wide = VolumeMeta::new(316_158, 316_158, 1, Dtype::U8).unwrap();
        let s = slice_bytes(&wide);
        assert_eq!(s, 316_158u64 * 316_158);
        // eleven such slices are 2^40 to within a few parts per million
        let rel = (11 * s) as f64 / (1u64 << 40) as f64 - 1.0;
        assert!(rel.abs() < 1e-5, "{rel}");
    }

    #[test]
    fn zero_dimensions_rejected() {
        assert!(VolumeMeta::new(0, 4, 4, Dtype::U8).is_err());
        assert!(VolumeMeta::new(4, 4, 0, Dtype::U8).is_err());
    }

    #[test]
    fn random_pattern_is_seeded() {
        let m = VolumeMeta::cube(4, Dtype::U8).unwrap();
        let a = Volume::generate(m, Pattern::Random { seed: 7 });
        let b = Volume::generate(m, Pattern::Random { seed: 7 });
        let c = Volume::generate(m, Pattern::Random { seed: 8 });
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn impulse_has_one_voxel() {
        let m = VolumeMeta::cube(5, Dtype::U8).unwrap();
        let v = Volume::generate(m, Pattern::Impulse(9.0));
        let total: f64 = v.slices().iter().flat_map(|s| s.to_f64_vec()).sum();
        assert_eq!(total, 9.0);
        assert_eq!(v.get(2, 2, 2), 9.0);
    }
}
