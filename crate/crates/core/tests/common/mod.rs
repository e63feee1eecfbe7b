//! Brute-force reference implementations working on whole in-memory
//! volumes, written independently of the streaming operators.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stackstream::{Dtype, Volume, VolumeMeta};

pub const FLOAT_REL_TOL: f64 = 1e-4;

/// Voxels as f64, x fastest then y then z.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub dims: [usize; 3],
    pub dtype: Dtype,
    pub v: Vec<f64>,
}

impl Dense {
    pub fn new(dims: [usize; 3], dtype: Dtype) -> Self {
        Dense {
            dims,
            dtype,
            v: vec![0.0; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_volume(vol: &Volume) -> Self {
        let m = vol.meta();
        let mut d = Dense::new(m.dims(), m.dtype);
        for z in 0..m.depth {
            for y in 0..m.ny {
                for x in 0..m.nx {
                    d.set(x, y, z, vol.get(x, y, z));
                }
            }
        }
        d
    }

    pub fn to_volume(&self) -> Volume {
        let meta = VolumeMeta::new(self.dims[0], self.dims[1], self.dims[2], self.dtype).unwrap();
        Volume::from_fn(meta, |x, y, z| self.at(x, y, z))
    }

    fn idx(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    pub fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        self.v[self.idx(x, y, z)]
    }

    /// Clamp-to-edge read in x and y.
    pub fn at_clamped(&self, x: isize, y: isize, z: usize) -> f64 {
        let cx = x.clamp(0, self.dims[0] as isize - 1) as usize;
        let cy = y.clamp(0, self.dims[1] as isize - 1) as usize;
        self.at(cx, cy, z)
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, val: f64) {
        let i = self.idx(x, y, z);
        self.v[i] = val;
    }

    pub fn map(&self, dtype: Dtype, f: impl Fn(f64) -> f64) -> Dense {
        Dense {
            dims: self.dims,
            dtype,
            v: self.v.iter().map(|&x| quantize(f(x), dtype)).collect(),
        }
    }
}

pub fn type_max(dtype: Dtype) -> f64 {
    match dtype {
        Dtype::U8 => 255.0,
        Dtype::U16 => 65535.0,
        Dtype::F32 => f64::INFINITY,
    }
}

/// Storage rounding: integers round half away from zero and saturate,
/// floats go through f32.
pub fn quantize(v: f64, dtype: Dtype) -> f64 {
    match dtype {
        Dtype::F32 => v as f32 as f64,
        _ => {
            if v.is_nan() {
                0.0
            } else {
                // adding zero folds -0 into +0, as an integer store would
                v.round().clamp(0.0, type_max(dtype)) + 0.0
            }
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_dtype(r: &mut ChaCha8Rng) -> Dtype {
    [Dtype::U8, Dtype::U16, Dtype::F32][r.gen_range(0..3)]
}

pub fn random_dims(r: &mut ChaCha8Rng, min: usize, max: usize) -> [usize; 3] {
    [r.gen_range(min..=max), r.gen_range(min..=max), r.gen_range(min..=max)]
}

pub fn random_value(r: &mut ChaCha8Rng, dtype: Dtype) -> f64 {
    match dtype {
        Dtype::U8 => r.gen_range(0..=255u32) as f64,
        // keep some values small so squaring does not always saturate
        Dtype::U16 => {
            if r.gen_bool(0.5) {
                r.gen_range(0..=300u32) as f64
            } else {
                r.gen_range(0..=65535u32) as f64
            }
        }
        Dtype::F32 => r.gen_range(-100.0f32..100.0) as f64,
    }
}

pub fn random_volume(r: &mut ChaCha8Rng, dims: [usize; 3], dtype: Dtype) -> Volume {
    let mut d = Dense::new(dims, dtype);
    for v in d.v.iter_mut() {
        *v = random_value(r, dtype);
    }
    d.to_volume()
}

/// Largest deviation, relative to `max(|expected|, 1)`.
pub fn max_rel_err(got: &Dense, want: &Dense) -> f64 {
    assert_eq!(got.dims, want.dims, "shape mismatch");
    got.v
        .iter()
        .zip(&want.v)
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max)
}

pub fn check_equal(got: &Dense, want: &Dense) -> Result<(), String> {
    if got.dims != want.dims {
        return Err(format!("dims {:?} vs oracle {:?}", got.dims, want.dims));
    }
    if got.dtype != want.dtype {
        return Err(format!("dtype {} vs oracle {}", got.dtype, want.dtype));
    }
    match got.v.iter().zip(&want.v).position(|(a, b)| a.to_bits() != b.to_bits()) {
        None => Ok(()),
        Some(i) => Err(format!("voxel {i}: {} vs oracle {}", got.v[i], want.v[i])),
    }
}

pub fn check_close(got: &Dense, want: &Dense, tol: f64) -> Result<(), String> {
    if got.dims != want.dims {
        return Err(format!("dims {:?} vs oracle {:?}", got.dims, want.dims));
    }
    let e = max_rel_err(got, want);
    if e <= tol {
        Ok(())
    } else {
        Err(format!("max relative error {e:e} above {tol:e}"))
    }
}

/// Integer outputs must match exactly, float outputs within the tolerance.
pub fn check(got: &Dense, want: &Dense) -> Result<(), String> {
    match want.dtype {
        Dtype::F32 => check_close(got, want, FLOAT_REL_TOL),
        _ => check_equal(got, want),
    }
}

// ---- pointwise ----

pub fn threshold(v: &Dense, t: f64) -> Dense {
    let on = match v.dtype {
        Dtype::F32 => 1.0,
        d => type_max(d),
    };
    v.map(v.dtype, |x| if x >= t { on } else { 0.0 })
}

pub fn square(v: &Dense) -> Dense {
    v.map(v.dtype, |x| x * x)
}

pub fn invert(v: &Dense) -> Dense {
    match v.dtype {
        Dtype::F32 => v.map(Dtype::F32, |x| -x),
        d => v.map(d, |x| type_max(d) - x),
    }
}

pub fn scale(v: &Dense, c: f64) -> Dense {
    v.map(v.dtype, |x| x * c)
}

pub fn convert(v: &Dense, to: Dtype) -> Dense {
    v.map(to, |x| x)
}

// ---- neighbourhood ----

/// Valid-mode convolution in z, clamp-to-edge in x and y.
/// `w[(c * ky + b) * kx + a]` multiplies `I(x + rx - a, y + ry - b, z + kz - 1 - c)`.
pub fn convolve(v: &Dense, kdims: [usize; 3], w: &[f64]) -> Dense {
    let [kx, ky, kz] = kdims;
    let (rx, ry) = ((kx / 2) as isize, (ky / 2) as isize);
    let od = v.dims[2] + 1 - kz;
    let mut out = Dense::new([v.dims[0], v.dims[1], od], v.dtype);
    for z in 0..od {
        for y in 0..v.dims[1] {
            for x in 0..v.dims[0] {
                let mut acc = 0.0;
                for c in 0..kz {
                    for b in 0..ky {
                        for a in 0..kx {
                            let wt = w[(c * ky + b) * kx + a];
                            acc += wt
                                * v.at_clamped(
                                    x as isize + rx - a as isize,
                                    y as isize + ry - b as isize,
                                    z + kz - 1 - c,
                                );
                        }
                    }
                }
                out.set(x, y, z, quantize(acc, v.dtype));
            }
        }
    }
    out
}

/// Dense isotropic Gaussian truncated at `ceil(3 sigma)`, normalized.
pub fn gaussian_kernel(sigma: f64) -> ([usize; 3], Vec<f64>) {
    let r = (3.0 * sigma).ceil() as isize;
    let n = (2 * r + 1) as usize;
    let mut w = Vec::with_capacity(n * n * n);
    for z in -r..=r {
        for y in -r..=r {
            for x in -r..=r {
                let d2 = (x * x + y * y + z * z) as f64;
                w.push((-d2 / (2.0 * sigma * sigma)).exp());
            }
        }
    }
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= sum);
    ([n, n, n], w)
}

pub fn gaussian(v: &Dense, sigma: f64) -> Dense {
    let (dims, w) = gaussian_kernel(sigma);
    convolve(v, dims, &w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rank {
    Median,
    Min,
    Max,
}

/// Rank filter over the mask's set voxels; median takes the lower middle.
pub fn rank_filter(v: &Dense, rank: Rank, mdims: [usize; 3], mask: &[bool]) -> Dense {
    let [mx, my, mz] = mdims;
    let (rx, ry) = ((mx / 2) as isize, (my / 2) as isize);
    let od = v.dims[2] + 1 - mz;
    let mut out = Dense::new([v.dims[0], v.dims[1], od], v.dtype);
    let mut hood = Vec::new();
    for z in 0..od {
        for y in 0..v.dims[1] {
            for x in 0..v.dims[0] {
                hood.clear();
                for c in 0..mz {
                    for b in 0..my {
                        for a in 0..mx {
                            if mask[(c * my + b) * mx + a] {
                                hood.push(v.at_clamped(
                                    x as isize + a as isize - rx,
                                    y as isize + b as isize - ry,
                                    z + c,
                                ));
                            }
                        }
                    }
                }
                hood.sort_by(f64::total_cmp);
                let val = match rank {
                    Rank::Median => hood[(hood.len() - 1) / 2],
                    Rank::Min => hood[0],
                    Rank::Max => hood[hood.len() - 1],
                };
                out.set(x, y, z, val);
            }
        }
    }
    out
}

pub fn cube_mask(r: usize) -> ([usize; 3], Vec<bool>) {
    let n = 2 * r + 1;
    ([n, n, n], vec![true; n * n * n])
}

pub fn ball_mask(r: usize) -> ([usize; 3], Vec<bool>) {
    let n = 2 * r + 1;
    let ri = r as isize;
    let mut m = Vec::with_capacity(n * n * n);
    for z in -ri..=ri {
        for y in -ri..=ri {
            for x in -ri..=ri {
                m.push(x * x + y * y + z * z <= ri * ri);
            }
        }
    }
    ([n, n, n], m)
}

// ---- geometry ----

pub fn crop(v: &Dense, lo: [usize; 3], hi: [usize; 3]) -> Dense {
    let mut out = Dense::new([hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]], v.dtype);
    for z in lo[2]..hi[2] {
        for y in lo[1]..hi[1] {
            for x in lo[0]..hi[0] {
                out.set(x - lo[0], y - lo[1], z - lo[2], v.at(x, y, z));
            }
        }
    }
    out
}

/// `before[a]` and `after[a]` voxels on axis `a`; zero fill or edge copy.
pub fn pad(v: &Dense, before: [usize; 3], after: [usize; 3], clamp: bool) -> Dense {
    let dims = [0, 1, 2].map(|a| v.dims[a] + before[a] + after[a]);
    let mut out = Dense::new(dims, v.dtype);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x, y, z];
                let src: [isize; 3] = [0, 1, 2].map(|a| p[a] as isize - before[a] as isize);
                let inside = (0..3).all(|a| src[a] >= 0 && src[a] < v.dims[a] as isize);
                let val = if inside {
                    v.at(src[0] as usize, src[1] as usize, src[2] as usize)
                } else if clamp {
                    let c: [usize; 3] = [0, 1, 2].map(|a| src[a].clamp(0, v.dims[a] as isize - 1) as usize);
                    v.at(c[0], c[1], c[2])
                } else {
                    0.0
                };
                out.set(x, y, z, val);
            }
        }
    }
    out
}

/// Output axis `i` runs along input axis `order[i]`.
pub fn permute(v: &Dense, order: [usize; 3]) -> Dense {
    let dims = [v.dims[order[0]], v.dims[order[1]], v.dims[order[2]]];
    let mut out = Dense::new(dims, v.dtype);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let c = [x, y, z];
                let mut p = [0usize; 3];
                for i in 0..3 {
                    p[order[i]] = c[i];
                }
                out.set(x, y, z, v.at(p[0], p[1], p[2]));
            }
        }
    }
    out
}

// ---- joins and reductions ----

pub fn join(a: &Dense, b: &Dense, f: &str) -> Dense {
    let mut out = a.clone();
    for (o, y) in out.v.iter_mut().zip(&b.v) {
        let r = match f {
            "add" => *o + y,
            "max" => o.max(*y),
            "min" => o.min(*y),
            _ => panic!("unknown join {f}"),
        };
        *o = quantize(r, a.dtype);
    }
    out
}

/// Integer histograms have one bin per value; float ones split
/// `[lo, hi)` into 256 bins and clamp outliers to the end bins.
pub fn histogram(v: &Dense, range: Option<(f64, f64)>) -> Vec<u64> {
    let bins = match v.dtype {
        Dtype::U8 => 256,
        Dtype::U16 => 65536,
        Dtype::F32 => 256,
    };
    let mut h = vec![0u64; bins];
    for &x in &v.v {
        let b = match (v.dtype, range) {
            (Dtype::F32, Some((lo, hi))) => {
                let t = ((x - lo) / (hi - lo) * 256.0).floor();
                if t < 0.0 {
                    0
                } else {
                    (t as usize).min(255)
                }
            }
            _ => x as usize,
        };
        h[b] += 1;
    }
    h
}

pub fn mean_of_slices(v: &Dense, stride: usize) -> f64 {
    let plane = v.dims[0] * v.dims[1];
    let mut sum = 0.0;
    let mut n = 0usize;
    for z in (0..v.dims[2]).step_by(stride) {
        sum += v.v[z * plane..(z + 1) * plane].iter().sum::<f64>();
        n += plane;
    }
    sum / n as f64
}

/// The combined kernel of two chained convolutions, by direct summation.
pub fn full_convolution(k: ([usize; 3], &[f64]), l: ([usize; 3], &[f64])) -> ([usize; 3], Vec<f64>) {
    let (kd, kw) = k;
    let (ld, lw) = l;
    let dims = [kd[0] + ld[0] - 1, kd[1] + ld[1] - 1, kd[2] + ld[2] - 1];
    let mut out = vec![0.0; dims[0] * dims[1] * dims[2]];
    for c in 0..kd[2] {
        for b in 0..kd[1] {
            for a in 0..kd[0] {
                for cc in 0..ld[2] {
                    for bb in 0..ld[1] {
                        for aa in 0..ld[0] {
                            let i = ((c + cc) * dims[1] + b + bb) * dims[0] + a + aa;
                            out[i] += kw[(c * kd[1] + b) * kd[0] + a] * lw[(cc * ld[1] + bb) * ld[0] + aa];
                        }
                    }
                }
            }
        }
    }
    (dims, out)
}
