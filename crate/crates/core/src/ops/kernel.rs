//! Convolution kernels and the window machinery shared by every
//! z-neighbourhood operator.

use std::fmt;
use std::sync::Arc;

use crate::dtype::Voxel;
use crate::error::{Error, PlanError, Result};
use crate::slice::Slice;
use crate::stream::{self, SliceStream, Stream};
use crate::volume::PlaneMeta;
use crate::with_voxel;

/// Dense 3D kernel with odd edge lengths, weights stored z-major then
/// row-major: `weights[(z * ky + y) * kx + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel3D {
    dims: [usize; 3],
    weights: Vec<f64>,
}

impl Kernel3D {
    pub fn new(dims: [usize; 3], weights: Vec<f64>) -> Result<Self, PlanError> {
        if dims.iter().any(|&d| d == 0 || d % 2 == 0) {
            return Err(PlanError::InvalidParameter(format!(
                "kernel dims must be odd and >= 1, got {dims:?}"
            )));
        }
        let n = dims[0] * dims[1] * dims[2];
        if weights.len() != n {
            return Err(PlanError::InvalidParameter(format!(
                "kernel {dims:?} needs {n} weights, got {}",
                weights.len()
            )));
        }
        Ok(Kernel3D { dims, weights })
    }

    pub fn identity() -> Self {
        Kernel3D {
            dims: [1, 1, 1],
            weights: vec![1.0],
        }
    }

    /// Normalized box of the given dims.
    pub fn mean_box(dims: [usize; 3]) -> Result<Self, PlanError> {
        let n = dims.iter().product::<usize>();
        Self::new(dims, vec![1.0 / n as f64; n])
    }

    /// Outer product of three 1D weight vectors.
    pub fn separable(wx: &[f64], wy: &[f64], wz: &[f64]) -> Result<Self, PlanError> {
        let mut w = Vec::with_capacity(wx.len() * wy.len() * wz.len());
        for &z in wz {
            for &y in wy {
                for &x in wx {
                    w.push(x * y * z);
                }
            }
        }
        Self::new([wx.len(), wy.len(), wz.len()], w)
    }

    /// Parses `kx ky kz` followed by the weights, whitespace separated.
    pub fn parse(text: &str) -> Result<Self, PlanError> {
        let bad = |m: String| PlanError::InvalidParameter(format!("kernel file: {m}"));
        let mut tokens = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace);
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            let t = tokens.next().ok_or_else(|| bad("missing dimensions".into()))?;
            *d = t.parse().map_err(|_| bad(format!("bad dimension `{t}`")))?;
        }
        let weights = tokens
            .map(|t| t.parse::<f64>().map_err(|_| bad(format!("bad weight `{t}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(dims, weights)
    }

    pub fn to_text(&self) -> String {
        let [kx, ky, kz] = self.dims;
        let mut s = format!("{kx} {ky} {kz}\n");
        for row in self.weights.chunks(kx) {
            let line: Vec<String> = row.iter().map(|w| format!("{w:?}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn depth(&self) -> usize {
        self.dims[2]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, x: usize, y: usize, z: usize) -> f64 {
        self.weights[(z * self.dims[1] + y) * self.dims[0] + x]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Full discrete convolution of the two weight arrays; edge lengths
    /// become `k + l - 1` per axis.
    pub fn convolve(&self, other: &Kernel3D) -> Kernel3D {
        let [ax, ay, az] = self.dims;
        let [bx, by, bz] = other.dims;
        let dims = [ax + bx - 1, ay + by - 1, az + bz - 1];
        let mut w = vec![0.0; dims[0] * dims[1] * dims[2]];
        for z in 0..az {
            for y in 0..ay {
                for x in 0..ax {
                    let a = self.weight(x, y, z);
                    if a == 0.0 {
                        continue;
                    }
                    for zz in 0..bz {
                        for yy in 0..by {
                            for xx in 0..bx {
                                let idx = ((z + zz) * dims[1] + (y + yy)) * dims[0] + x + xx;
                                w[idx] += a * other.weight(xx, yy, zz);
                            }
                        }
                    }
                }
            }
        }
        Kernel3D { dims, weights: w }
    }
}

/// Operator computing one output slice from `depth()` consecutive input
/// slices (the slab). The output corresponds to the slab's centre plane.
pub trait SlabKernel: Send + Sync + fmt::Debug {
    fn depth(&self) -> usize;

    fn compute(&self, slab: &[Slice]) -> Result<Slice>;

    /// Scratch bytes held while computing one output slice.
    fn scratch_bytes(&self, _plane: PlaneMeta) -> u64 {
        0
    }
}

#[inline]
pub(crate) fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// True 3D convolution at one voxel with clamp-to-edge in x and y.
/// `planes[j]` is slab plane `j`; the output sits at the slab centre.
#[inline]
pub(crate) fn convolve_at<T: Voxel>(k: &Kernel3D, planes: &[&[T]], nx: usize, ny: usize, x: usize, y: usize) -> f64 {
    let [kx, ky, kz] = k.dims;
    let (rx, ry) = ((kx / 2) as isize, (ky / 2) as isize);
    let mut acc = 0.0;
    for c in 0..kz {
        let plane = planes[kz - 1 - c];
        for b in 0..ky {
            let yy = clamp_index(y as isize + ry - b as isize, ny);
            let row = &plane[yy * nx..(yy + 1) * nx];
            let wrow = &k.weights[(c * ky + b) * kx..(c * ky + b + 1) * kx];
            for (a, &w) in wrow.iter().enumerate() {
                let xx = clamp_index(x as isize + rx - a as isize, nx);
                acc += w * row[xx].to_f64();
            }
        }
    }
    acc
}

fn check_slab(slab: &[Slice], depth: usize) -> Result<PlaneMeta> {
    if slab.len() != depth {
        return Err(Error::Data(format!(
            "slab holds {} slices, kernel needs {depth}",
            slab.len()
        )));
    }
    Ok(slab[0].plane())
}

/// Convolution with a dense kernel. Output keeps the input dtype
/// (rounded and saturated for integers).
#[derive(Debug, Clone)]
pub struct Convolution {
    kernel: Arc<Kernel3D>,
}

impl Convolution {
    pub fn new(kernel: Arc<Kernel3D>) -> Self {
        Convolution { kernel }
    }
}

impl SlabKernel for Convolution {
    fn depth(&self) -> usize {
        self.kernel.depth()
    }

    fn compute(&self, slab: &[Slice]) -> Result<Slice> {
        let plane = check_slab(slab, self.depth())?;
        let (nx, ny) = (plane.nx, plane.ny);
        let data = with_voxel!(plane.dtype, T => {
            let planes: Vec<&[T]> = slab.iter().map(|s| s.values::<T>()).collect();
            let mut out = Vec::with_capacity(nx * ny);
            for y in 0..ny {
                for x in 0..nx {
                    out.push(T::from_f64(convolve_at(&self.kernel, &planes, nx, ny, x, y)));
                }
            }
            T::wrap(out)
        });
        slab[0].derive(plane, data)
    }
}

/// Two chained convolutions `outer(inner(I))` evaluated in one pass.
///
/// Where the whole outer support lies inside the plane, the combined
/// kernel `outer * inner` is applied directly. In the x-y border band the
/// intermediate values are recomputed with their own clamping, so the
/// result equals the chained evaluation everywhere.
#[derive(Debug, Clone)]
pub struct FusedConvolution {
    outer: Arc<Kernel3D>,
    inner: Arc<Kernel3D>,
    combined: Kernel3D,
}

impl FusedConvolution {
    pub fn new(outer: Arc<Kernel3D>, inner: Arc<Kernel3D>) -> Self {
        let combined = outer.convolve(&inner);
        FusedConvolution {
            outer,
            inner,
            combined,
        }
    }

    pub fn outer(&self) -> &Arc<Kernel3D> {
        &self.outer
    }

    pub fn inner(&self) -> &Arc<Kernel3D> {
        &self.inner
    }

    pub fn combined(&self) -> &Kernel3D {
        &self.combined
    }

    fn border_at<T: Voxel>(&self, planes: &[&[T]], nx: usize, ny: usize, x: usize, y: usize) -> f64 {
        let [kx, ky, kz] = self.outer.dims;
        let lz = self.inner.depth();
        let (rx, ry) = ((kx / 2) as isize, (ky / 2) as isize);
        let mut acc = 0.0;
        for c in 0..kz {
            // intermediate plane kz-1-c is computed from input planes
            // kz-1-c .. kz-1-c+lz
            let j = kz - 1 - c;
            let sub = &planes[j..j + lz];
            for b in 0..ky {
                let yy = clamp_index(y as isize + ry - b as isize, ny);
                for a in 0..kx {
                    let w = self.outer.weight(a, b, c);
                    if w == 0.0 {
                        continue;
                    }
                    let xx = clamp_index(x as isize + rx - a as isize, nx);
                    acc += w * convolve_at(&self.inner, sub, nx, ny, xx, yy);
                }
            }
        }
        acc
    }
}

impl SlabKernel for FusedConvolution {
    fn depth(&self) -> usize {
        self.combined.depth()
    }

    fn compute(&self, slab: &[Slice]) -> Result<Slice> {
        let plane = check_slab(slab, self.depth())?;
        let (nx, ny) = (plane.nx, plane.ny);
        let (rx, ry) = (self.outer.dims[0] / 2, self.outer.dims[1] / 2);
        let data = with_voxel!(plane.dtype, T => {
            let planes: Vec<&[T]> = slab.iter().map(|s| s.values::<T>()).collect();
            let mut out = Vec::with_capacity(nx * ny);
            for y in 0..ny {
                for x in 0..nx {
                    let interior = x >= rx && x + rx < nx && y >= ry && y + ry < ny;
                    let v = if interior {
                        convolve_at(&self.combined, &planes, nx, ny, x, y)
                    } else {
                        self.border_at(&planes, nx, ny, x, y)
                    };
                    out.push(T::from_f64(v));
                }
            }
            T::wrap(out)
        });
        slab[0].derive(plane, data)
    }
}

/// `flatten . map(kernel) . windowed(w, w - k_z + 1, 0)`: each window of
/// `w` slices yields its `w - k_z + 1` valid centre slices. A shorter
/// final window covers the remainder when `d - w` is not a multiple of
/// the stride.
pub fn kernel_stream(
    kernel: Arc<dyn SlabKernel>,
    stage: &str,
    w: usize,
    input: SliceStream,
) -> Result<SliceStream> {
    let kz = kernel.depth();
    if w < kz {
        return Err(PlanError::WindowBelowKernel {
            stage: stage.to_string(),
            window: w,
            kernel_depth: kz,
        }
        .into());
    }
    let plane = input.plane();
    let depth = input.depth().map(|d| valid_depth(d, kz));
    let windows = stream::windowed_with_tail(w, w - kz + 1, kz, input)?;
    let per_window = stream::map(windows, stage, plane, move |win: stream::Window| {
        let outs = (0..=win.len() - kz)
            .map(|j| kernel.compute(&win[j..j + kz]))
            .collect::<Result<Vec<_>>>()?;
        Ok(outs)
    });
    let flat = stream::flatten(per_window);
    Ok(with_depth(flat, depth))
}

/// Replaces the advertised depth of a stream.
pub(crate) fn with_depth(mut s: SliceStream, depth: Option<usize>) -> SliceStream {
    let plane = s.plane();
    Stream::new(plane, depth, std::iter::from_fn(move || s.pull().transpose()))
}

/// Output of a kernel stage over `depth` slices, valid mode in z.
pub fn valid_depth(depth: usize, kz: usize) -> usize {
    (depth + 1).saturating_sub(kz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtype::Dtype;
    use crate::slice::MemoryMeter;
    use crate::volume::{Pattern, Volume, VolumeMeta};

    #[test]
    fn rejects_even_or_mismatched() {
        assert!(Kernel3D::new([2, 1, 1], vec![1.0, 1.0]).is_err());
        assert!(Kernel3D::new([3, 1, 1], vec![1.0]).is_err());
    }

    #[test]
    fn convolve_with_identity_is_noop() {
        let k = Kernel3D::mean_box([3, 3, 3]).unwrap();
        assert_eq!(k.convolve(&Kernel3D::identity()), k);
    }

    #[test]
    fn box_times_box_has_summed_dims() {
        let k = Kernel3D::mean_box([3, 3, 3]).unwrap();
        let kk = k.convolve(&k);
        assert_eq!(kk.dims(), [5, 5, 5]);
        assert!((kk.sum() - 1.0).abs() < 1e-12);
        // 1D profile of box*box is 1,2,3,2,1 over 9, per axis
        let p = [1.0, 2.0, 3.0, 2.0, 1.0];
        for z in 0..5 {
            for y in 0..5 {
                for x in 0..5 {
                    let expect = p[x] * p[y] * p[z] / 729.0;
                    assert!((kk.weight(x, y, z) - expect).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let k = Kernel3D::new([3, 1, 1], vec![0.25, 0.5, 0.25]).unwrap();
        assert_eq!(Kernel3D::parse(&k.to_text()).unwrap(), k);
        assert!(Kernel3D::parse("3 1").is_err());
    }

    #[test]
    fn box_on_constant_volume_is_constant() {
        let meta = VolumeMeta::cube(6, Dtype::U8).unwrap();
        let meter = MemoryMeter::new();
        let src = Volume::generate(meta, Pattern::Constant(5.0)).stream(&meter);
        let conv: Arc<dyn SlabKernel> = Arc::new(Convolution::new(Arc::new(Kernel3D::mean_box([3, 3, 3]).unwrap())));
        let out = Volume::collect(kernel_stream(conv, "box", 3, src).unwrap()).unwrap();
        assert_eq!(out.meta().depth, 4);
        assert!(out.slices().iter().all(|s| s.to_f64_vec().iter().all(|&v| v == 5.0)));
        assert_eq!(meter.live_slices(), 0);
    }

    #[test]
    fn window_smaller_than_kernel_is_planning_error() {
        let meta = VolumeMeta::cube(4, Dtype::U8).unwrap();
        let meter = MemoryMeter::new();
        let src = Volume::generate(meta, Pattern::Ramp).stream(&meter);
        let conv: Arc<dyn SlabKernel> = Arc::new(Convolution::new(Arc::new(Kernel3D::mean_box([3, 3, 3]).unwrap())));
        let err = kernel_stream(conv, "c", 2, src).unwrap_err();
        assert!(err.is_planning());
    }
}
