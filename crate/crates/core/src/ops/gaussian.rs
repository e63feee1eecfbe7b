//! Separable discrete Gaussian.

use crate::dtype::Voxel;
use crate::error::{PlanError, Result};
use crate::slice::Slice;
use crate::volume::PlaneMeta;
use crate::with_voxel;

use super::kernel::{clamp_index, Kernel3D, SlabKernel};

/// Normalized 1D weights truncated at radius `ceil(3 sigma)`.
pub fn gaussian_weights(sigma: f64) -> Result<Vec<f64>, PlanError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(PlanError::InvalidParameter(format!("gaussian sigma must be > 0, got {sigma}")));
    }
    let r = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / sum).collect())
}

/// The dense 3D kernel the separable filter is equivalent to.
pub fn gaussian_kernel3d(sigma: f64) -> Result<Kernel3D, PlanError> {
    let g = gaussian_weights(sigma)?;
    Kernel3D::separable(&g, &g, &g)
}

#[derive(Debug, Clone)]
pub struct Gaussian {
    sigma: f64,
    weights: Vec<f64>,
}

impl Gaussian {
    pub fn new(sigma: f64) -> Result<Self, PlanError> {
        Ok(Gaussian {
            sigma,
            weights: gaussian_weights(sigma)?,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.weights.len() / 2
    }
}

impl SlabKernel for Gaussian {
    fn depth(&self) -> usize {
        self.weights.len()
    }

    /// Two f64 planes: the z-filtered plane and the x-filtered plane.
    fn scratch_bytes(&self, plane: PlaneMeta) -> u64 {
        2 * plane.voxels() as u64 * 8
    }

    fn compute(&self, slab: &[Slice]) -> Result<Slice> {
        let k = self.weights.len();
        if slab.len() != k {
            return Err(crate::error::Error::Data(format!(
                "slab holds {} slices, gaussian needs {k}",
                slab.len()
            )));
        }
        let plane = slab[0].plane();
        let (nx, ny) = (plane.nx, plane.ny);
        let r = self.radius() as isize;
        let _scratch = slab[0].meter().charge_aux(self.scratch_bytes(plane));
        let g = &self.weights;
        let mut zp = vec![0.0f64; nx * ny];
        with_voxel!(plane.dtype, T => {
            for (c, s) in slab.iter().enumerate() {
                // symmetric weights, so slab order does not matter
                let w = g[c];
                for (acc, v) in zp.iter_mut().zip(s.values::<T>()) {
                    *acc += w * v.to_f64();
                }
            }
        });
        let mut xp = vec![0.0f64; nx * ny];
        for y in 0..ny {
            let row = &zp[y * nx..(y + 1) * nx];
            for x in 0..nx {
                let mut acc = 0.0;
                for (a, &w) in g.iter().enumerate() {
                    acc += w * row[clamp_index(x as isize + r - a as isize, nx)];
                }
                xp[y * nx + x] = acc;
            }
        }
        let data = with_voxel!(plane.dtype, T => {
            let mut out = Vec::with_capacity(nx * ny);
            for y in 0..ny {
                for x in 0..nx {
                    let mut acc = 0.0;
                    for (b, &w) in g.iter().enumerate() {
                        acc += w * xp[clamp_index(y as isize + r - b as isize, ny) * nx + x];
                    }
                    out.push(T::from_f64(acc));
                }
            }
            T::wrap(out)
        });
        slab[0].derive(plane, data)
    }
}
