//! Rank filters: median, erosion and dilation.

use std::fmt;

use crate::dtype::Voxel;
use crate::error::{Error, PlanError, Result};
use crate::slice::Slice;
use crate::with_voxel;

use super::kernel::{clamp_index, SlabKernel};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuringElement {
    dims: [usize; 3],
    mask: Vec<bool>,
}

impl StructuringElement {
    pub fn new(dims: [usize; 3], mask: Vec<bool>) -> Result<Self, PlanError> {
        if dims.iter().any(|&d| d == 0 || d % 2 == 0) {
            return Err(PlanError::InvalidParameter(format!(
                "structuring element dims must be odd, got {dims:?}"
            )));
        }
        if mask.len() != dims.iter().product::<usize>() {
            return Err(PlanError::InvalidParameter("structuring element mask size mismatch".into()));
        }
        let centre = (dims[2] / 2 * dims[1] + dims[1] / 2) * dims[0] + dims[0] / 2;
        if !mask[centre] {
            return Err(PlanError::InvalidParameter(
                "structuring element centre must be set".into(),
            ));
        }
        Ok(StructuringElement { dims, mask })
    }

    /// Full cube of edge `2r + 1`.
    pub fn cube(r: usize) -> Self {
        let e = 2 * r + 1;
        StructuringElement {
            dims: [e; 3],
            mask: vec![true; e * e * e],
        }
    }

    /// Voxels within Euclidean distance `r` of the centre.
    pub fn ball(r: usize) -> Self {
        let e = 2 * r + 1;
        let r2 = (r * r) as isize;
        let mut mask = Vec::with_capacity(e * e * e);
        for z in 0..e {
            for y in 0..e {
                for x in 0..e {
                    let (dx, dy, dz) = (x as isize - r as isize, y as isize - r as isize, z as isize - r as isize);
                    mask.push(dx * dx + dy * dy + dz * dz <= r2);
                }
            }
        }
        StructuringElement { dims: [e; 3], mask }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        self.mask[(z * self.dims[1] + y) * self.dims[0] + x]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MorphOp {
    Median,
    Erode,
    Dilate,
}

impl fmt::Display for MorphOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MorphOp::Median => "median",
            MorphOp::Erode => "erode",
            MorphOp::Dilate => "dilate",
        })
    }
}

#[derive(Debug, Clone)]
pub struct RankFilter {
    op: MorphOp,
    se: StructuringElement,
    offsets: Vec<(usize, isize, isize)>,
}

impl RankFilter {
    pub fn new(op: MorphOp, se: StructuringElement) -> Self {
        let [kx, ky, kz] = se.dims;
        let (rx, ry) = ((kx / 2) as isize, (ky / 2) as isize);
        let mut offsets = Vec::with_capacity(se.count());
        for z in 0..kz {
            for y in 0..ky {
                for x in 0..kx {
                    if se.contains(x, y, z) {
                        offsets.push((z, x as isize - rx, y as isize - ry));
                    }
                }
            }
        }
        RankFilter { op, se, offsets }
    }

    pub fn op(&self) -> MorphOp {
        self.op
    }

    pub fn se(&self) -> &StructuringElement {
        &self.se
    }
}

impl SlabKernel for RankFilter {
    fn depth(&self) -> usize {
        self.se.dims[2]
    }

    fn compute(&self, slab: &[Slice]) -> Result<Slice> {
        if slab.len() != self.depth() {
            return Err(Error::Data(format!(
                "slab holds {} slices, filter needs {}",
                slab.len(),
                self.depth()
            )));
        }
        let plane = slab[0].plane();
        let (nx, ny) = (plane.nx, plane.ny);
        let data = with_voxel!(plane.dtype, T => {
            let planes: Vec<&[T]> = slab.iter().map(|s| s.values::<T>()).collect();
            let mut hood: Vec<T> = Vec::with_capacity(self.offsets.len());
            let mut out = Vec::with_capacity(nx * ny);
            for y in 0..ny {
                for x in 0..nx {
                    hood.clear();
                    for &(z, dx, dy) in &self.offsets {
                        let xx = clamp_index(x as isize + dx, nx);
                        let yy = clamp_index(y as isize + dy, ny);
                        hood.push(planes[z][yy * nx + xx]);
                    }
                    let v = match self.op {
                        MorphOp::Median => {
                            let mid = (hood.len() - 1) / 2;
                            *hood.select_nth_unstable_by(mid, |a, b| a.total_cmp(b)).1
                        }
                        MorphOp::Erode => *hood.iter().min_by(|a, b| a.total_cmp(b)).unwrap(),
                        MorphOp::Dilate => *hood.iter().max_by(|a, b| a.total_cmp(b)).unwrap(),
                    };
                    out.push(v);
                }
            }
            T::wrap(out)
        });
        slab[0].derive(plane, data)
    }
}
