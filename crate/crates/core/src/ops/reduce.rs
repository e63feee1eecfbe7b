//! Global reductions built on `fold`.

use std::fmt::Write as _;
use std::ops::AddAssign;

use crate::dtype::{Dtype, SliceData};
use crate::error::{Error, PlanError, Result};
use crate::slice::{AuxCharge, MemoryMeter};
use crate::stream::{self, SliceStream, Window};

/// Voxel counts per bin. Integer dtypes get one bin per value; `f32`
/// uses 256 uniform bins over a declared `[lo, hi)` range, with values
/// outside the range counted in the end bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    dtype: Dtype,
    range: Option<(f64, f64)>,
    counts: Vec<u64>,
}

pub const FLOAT_BINS: usize = 256;

/// Bin count for a dtype: `2^(8b)` for integers, 256 for floats.
pub fn bin_count(dtype: Dtype) -> usize {
    match dtype {
        Dtype::U8 => 256,
        Dtype::U16 => 65536,
        Dtype::F32 => FLOAT_BINS,
    }
}

/// Bytes of one histogram accumulator.
pub fn histogram_bytes(dtype: Dtype) -> u64 {
    bin_count(dtype) as u64 * 8
}

impl Histogram {
    pub fn new(dtype: Dtype, range: Option<(f64, f64)>) -> Result<Self, PlanError> {
        match (dtype, range) {
            (Dtype::F32, None) => {
                return Err(PlanError::InvalidParameter(
                    "f32 histograms need a range lo,hi".into(),
                ))
            }
            (_, Some((lo, hi))) if !(lo < hi && lo.is_finite() && hi.is_finite()) => {
                return Err(PlanError::InvalidParameter(format!("bad histogram range {lo},{hi}")))
            }
            _ => {}
        }
        let range = if dtype.is_integer() { None } else { range };
        Ok(Histogram {
            dtype,
            range,
            counts: vec![0; bin_count(dtype)],
        })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn bin_of(&self, v: f64) -> usize {
        match self.range {
            None => v as usize,
            Some((lo, hi)) => {
                let t = ((v - lo) / (hi - lo) * FLOAT_BINS as f64).floor();
                if t.is_nan() || t < 0.0 {
                    0
                } else {
                    (t as usize).min(FLOAT_BINS - 1)
                }
            }
        }
    }

    pub fn add_data(&mut self, data: &SliceData) {
        match data {
            SliceData::U8(v) => v.iter().for_each(|&x| self.counts[x as usize] += 1),
            SliceData::U16(v) => v.iter().for_each(|&x| self.counts[x as usize] += 1),
            SliceData::F32(v) => {
                for &x in v {
                    let b = self.bin_of(x as f64);
                    self.counts[b] += 1;
                }
            }
        }
    }

    /// `bin count` lines for every non-empty bin, after a header line.
    pub fn to_text(&self) -> String {
        let mut s = format!("# histogram dtype={} bins={}", self.dtype, self.counts.len());
        if let Some((lo, hi)) = self.range {
            let _ = write!(s, " range={lo},{hi}");
        }
        s.push('\n');
        for (i, &c) in self.counts.iter().enumerate() {
            if c > 0 {
                let _ = writeln!(s, "{i} {c}");
            }
        }
        s
    }
}

impl AddAssign<&Histogram> for Histogram {
    fn add_assign(&mut self, rhs: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(&rhs.counts) {
            *a += b;
        }
    }
}

struct Metered {
    hist: Histogram,
    _charge: AuxCharge,
}

impl Metered {
    fn new(meter: &MemoryMeter, dtype: Dtype, range: Option<(f64, f64)>) -> Result<Self> {
        Ok(Metered {
            hist: Histogram::new(dtype, range)?,
            _charge: meter.charge_aux(histogram_bytes(dtype)),
        })
    }
}

/// Incremental histogram over windows of `w` slices: the accumulator
/// plus one window histogram are resident, `2 * bins * 8` bytes.
pub struct HistogramFold {
    acc: Option<Metered>,
    dtype: Dtype,
    range: Option<(f64, f64)>,
}

impl HistogramFold {
    pub fn new(dtype: Dtype, range: Option<(f64, f64)>) -> Result<Self, PlanError> {
        Histogram::new(dtype, range)?;
        Ok(HistogramFold {
            acc: None,
            dtype,
            range,
        })
    }

    pub fn add_window(&mut self, win: &Window) -> Result<()> {
        let Some(first) = win.first() else {
            return Ok(());
        };
        let meter = first.meter().clone();
        if self.acc.is_none() {
            self.acc = Some(Metered::new(&meter, self.dtype, self.range)?);
        }
        let mut local = Metered::new(&meter, self.dtype, self.range)?;
        for s in win.iter() {
            if s.plane().dtype != self.dtype {
                return Err(Error::Data("histogram input dtype changed mid-stream".into()));
            }
            local.hist.add_data(s.data());
        }
        if let Some(acc) = self.acc.as_mut() {
            acc.hist += &local.hist;
        }
        Ok(())
    }

    pub fn finish(self) -> Result<Histogram> {
        match self.acc {
            Some(m) => Ok(m.hist),
            None => Ok(Histogram::new(self.dtype, self.range)?),
        }
    }
}

/// `fold(+) . map(histogram) . windowed(w, w, 0)`.
pub fn histogram_stage(w: usize, range: Option<(f64, f64)>, input: SliceStream) -> Result<Histogram> {
    let dtype = input.plane().dtype;
    let windows = stream::batched(w, input)?;
    let fold = HistogramFold::new(dtype, range)?;
    let fold = stream::fold(windows, fold, |mut acc, win| {
        acc.add_window(&win)?;
        Ok(acc)
    })?;
    fold.finish()
}

/// Running sum for a sampled mean.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanAcc {
    pub sum: f64,
    pub count: u64,
}

impl MeanAcc {
    pub fn add(&mut self, data: &SliceData) {
        self.sum += data.to_f64_vec().iter().sum::<f64>();
        self.count += data.len() as u64;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

/// Mean over slices `0, s, 2s, ...`; slices in between are read and
/// released without contributing. `s = 1` gives the exact mean.
pub fn sampled_mean(stride: usize, input: SliceStream) -> Result<f64> {
    let windows = stream::windowed(1, stride, 0, input)?;
    let acc = stream::fold(windows, MeanAcc::default(), |mut acc, win| {
        acc.add(win[0].data());
        Ok(acc)
    })?;
    Ok(acc.mean())
}
