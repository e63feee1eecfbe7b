//! Reference-counted slices and the meter that tracks live voxel memory.
//!
//! A [`Slice`] is a handle to an immutable plane buffer. Cloning a handle
//! retains the buffer, dropping it releases it, and the buffer is freed
//! (and discharged from its [`MemoryMeter`]) the moment the last handle
//! goes away. A release below zero cannot be expressed: every release
//! consumes a handle that was obtained from an allocation or a retain.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::dtype::{SliceData, Voxel};
use crate::error::{Error, Result};
use crate::volume::PlaneMeta;

#[derive(Debug, Default)]
struct MeterState {
    live_slices: AtomicU64,
    live_bytes: AtomicU64,
    peak_bytes: AtomicU64,
    peak_slices: AtomicU64,
    peak_slice_bytes: AtomicU64,
    live_slice_bytes: AtomicU64,
    allocations: AtomicU64,
    retains: AtomicU64,
    releases: AtomicU64,
}

/// Instrumented accounting of slice buffers and auxiliary scratch memory.
///
/// Each pipeline run owns its own meter, so concurrent runs never
/// interfere with each other's peaks.
#[derive(Debug, Clone, Default)]
pub struct MemoryMeter {
    state: Arc<MeterState>,
}

/// Point-in-time copy of a meter's counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MeterStats {
    pub live_slices: u64,
    pub live_bytes: u64,
    pub peak_bytes: u64,
    pub peak_slices: u64,
    /// Peak of slice buffers alone, excluding auxiliary charges.
    pub peak_slice_bytes: u64,
    pub allocations: u64,
    pub retains: u64,
    pub releases: u64,
}

impl MemoryMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> MeterStats {
        let s = &self.state;
        MeterStats {
            live_slices: s.live_slices.load(Ordering::SeqCst),
            live_bytes: s.live_bytes.load(Ordering::SeqCst),
            peak_bytes: s.peak_bytes.load(Ordering::SeqCst),
            peak_slices: s.peak_slices.load(Ordering::SeqCst),
            peak_slice_bytes: s.peak_slice_bytes.load(Ordering::SeqCst),
            allocations: s.allocations.load(Ordering::SeqCst),
            retains: s.retains.load(Ordering::SeqCst),
            releases: s.releases.load(Ordering::SeqCst),
        }
    }

    pub fn live_slices(&self) -> u64 {
        self.state.live_slices.load(Ordering::SeqCst)
    }

    pub fn live_bytes(&self) -> u64 {
        self.state.live_bytes.load(Ordering::SeqCst)
    }

    pub fn peak_bytes(&self) -> u64 {
        self.state.peak_bytes.load(Ordering::SeqCst)
    }

    pub fn peak_slices(&self) -> u64 {
        self.state.peak_slices.load(Ordering::SeqCst)
    }

    /// Restarts peak tracking from the current live values.
    pub fn reset_peak(&self) {
        let s = &self.state;
        s.peak_bytes.store(s.live_bytes.load(Ordering::SeqCst), Ordering::SeqCst);
        s.peak_slices.store(s.live_slices.load(Ordering::SeqCst), Ordering::SeqCst);
        s.peak_slice_bytes
            .store(s.live_slice_bytes.load(Ordering::SeqCst), Ordering::SeqCst);
    }

    /// Charges scratch memory that is not a slice (histograms, filter
    /// planes, chunk layers). The charge lasts as long as the guard.
    pub fn charge_aux(&self, bytes: u64) -> AuxCharge {
        self.add_bytes(bytes);
        AuxCharge {
            meter: self.clone(),
            bytes,
        }
    }

    fn add_bytes(&self, bytes: u64) {
        let now = self.state.live_bytes.fetch_add(bytes, Ordering::SeqCst) + bytes;
        self.state.peak_bytes.fetch_max(now, Ordering::SeqCst);
    }

    fn sub_bytes(&self, bytes: u64) {
        self.state.live_bytes.fetch_sub(bytes, Ordering::SeqCst);
    }

    fn on_alloc(&self, bytes: u64) {
        let s = &self.state;
        s.allocations.fetch_add(1, Ordering::SeqCst);
        let n = s.live_slices.fetch_add(1, Ordering::SeqCst) + 1;
        s.peak_slices.fetch_max(n, Ordering::SeqCst);
        let sb = s.live_slice_bytes.fetch_add(bytes, Ordering::SeqCst) + bytes;
        s.peak_slice_bytes.fetch_max(sb, Ordering::SeqCst);
        self.add_bytes(bytes);
    }

    fn on_free(&self, bytes: u64) {
        self.state.live_slices.fetch_sub(1, Ordering::SeqCst);
        self.state.live_slice_bytes.fetch_sub(bytes, Ordering::SeqCst);
        self.sub_bytes(bytes);
    }
}

/// RAII guard for an auxiliary memory charge.
#[derive(Debug)]
pub struct AuxCharge {
    meter: MemoryMeter,
    bytes: u64,
}

impl AuxCharge {
    pub fn bytes(&self) -> u64 {
        self.bytes
    }
}

impl Drop for AuxCharge {
    fn drop(&mut self) {
        self.meter.sub_bytes(self.bytes);
    }
}

#[derive(Debug)]
struct SliceBuf {
    plane: PlaneMeta,
    data: SliceData,
    meter: MemoryMeter,
}

impl Drop for SliceBuf {
    fn drop(&mut self) {
        self.meter.on_free(self.data.byte_len() as u64);
    }
}

/// Handle to one metered x-y plane.
#[derive(Debug)]
pub struct Slice {
    buf: Arc<SliceBuf>,
}

impl Slice {
    /// Allocates a slice with refcount 1.
    pub fn new(meter: &MemoryMeter, plane: PlaneMeta, data: SliceData) -> Result<Self> {
        if data.dtype() != plane.dtype {
            return Err(Error::Data(format!(
                "slice data is {} but plane dtype is {}",
                data.dtype(),
                plane.dtype
            )));
        }
        if data.len() != plane.voxels() {
            return Err(Error::Data(format!(
                "slice data holds {} voxels, plane {}x{} needs {}",
                data.len(),
                plane.nx,
                plane.ny,
                plane.voxels()
            )));
        }
        meter.on_alloc(data.byte_len() as u64);
        Ok(Slice {
            buf: Arc::new(SliceBuf {
                plane,
                data,
                meter: meter.clone(),
            }),
        })
    }

    pub fn filled(meter: &MemoryMeter, plane: PlaneMeta, value: f64) -> Result<Self> {
        Self::new(meter, plane, SliceData::filled(plane.dtype, plane.voxels(), value))
    }

    /// Allocates a new slice on the same meter.
    pub fn derive(&self, plane: PlaneMeta, data: SliceData) -> Result<Self> {
        Slice::new(&self.buf.meter, plane, data)
    }

    pub fn plane(&self) -> PlaneMeta {
        self.buf.plane
    }

    pub fn data(&self) -> &SliceData {
        &self.buf.data
    }

    pub fn values<T: Voxel>(&self) -> &[T] {
        T::view(&self.buf.data).expect("voxel type matches slice dtype")
    }

    pub fn bytes(&self) -> u64 {
        self.buf.data.byte_len() as u64
    }

    pub fn meter(&self) -> &MemoryMeter {
        &self.buf.meter
    }

    pub fn refcount(&self) -> usize {
        Arc::strong_count(&self.buf)
    }

    /// Adds a reference; the buffer is shared, never copied.
    pub fn retain(&self) -> Slice {
        self.clone()
    }

    /// Drops this reference, freeing the buffer if it was the last one.
    pub fn release(self) {
        drop(self)
    }

    pub fn same_buffer(&self, other: &Slice) -> bool {
        Arc::ptr_eq(&self.buf, &other.buf)
    }
}

impl Clone for Slice {
    fn clone(&self) -> Self {
        self.buf.meter.state.retains.fetch_add(1, Ordering::SeqCst);
        Slice {
            buf: Arc::clone(&self.buf),
        }
    }
}

impl Drop for Slice {
    fn drop(&mut self) {
        self.buf.meter.state.releases.fetch_add(1, Ordering::SeqCst);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtype::Dtype;

    fn plane() -> PlaneMeta {
        PlaneMeta::new(4, 4, Dtype::U8).unwrap()
    }

    #[test]
    fn retain_then_release_is_net_zero() {
        let meter = MemoryMeter::new();
        let s = Slice::filled(&meter, plane(), 3.0).unwrap();
        assert_eq!(s.refcount(), 1);
        let r = s.retain();
        assert_eq!(s.refcount(), 2);
        r.release();
        assert_eq!(s.refcount(), 1);
        assert_eq!(meter.live_slices(), 1);
        drop(s);
        assert_eq!(meter.live_slices(), 0);
        assert_eq!(meter.live_bytes(), 0);
    }

    #[test]
    fn buffer_freed_exactly_at_last_release() {
        let meter = MemoryMeter::new();
        let a = Slice::filled(&meter, plane(), 0.0).unwrap();
        let b = a.retain();
        let c = b.retain();
        drop(a);
        drop(c);
        assert_eq!(meter.live_bytes(), 16);
        drop(b);
        assert_eq!(meter.live_bytes(), 0);
        assert_eq!(meter.peak_bytes(), 16);
    }

    #[test]
    fn rejects_wrong_length() {
        let meter = MemoryMeter::new();
        assert!(Slice::new(&meter, plane(), SliceData::U8(vec![0; 15])).is_err());
        assert!(Slice::new(&meter, plane(), SliceData::U16(vec![0; 16])).is_err());
        assert_eq!(meter.live_slices(), 0);
    }

    #[test]
    fn aux_charge_counts_toward_peak() {
        let meter = MemoryMeter::new();
        let s = Slice::filled(&meter, plane(), 0.0).unwrap();
        {
            let _g = meter.charge_aux(100);
            assert_eq!(meter.live_bytes(), 116);
        }
        assert_eq!(meter.live_bytes(), 16);
        assert_eq!(meter.peak_bytes(), 116);
        assert_eq!(meter.stats().peak_slice_bytes, 16);
        drop(s);
    }

    #[test]
    fn retain_release_balance_matches_refcounts() {
        let meter = MemoryMeter::new();
        let a = Slice::filled(&meter, plane(), 1.0).unwrap();
        let b = Slice::filled(&meter, plane(), 2.0).unwrap();
        let handles = [a.retain(), a.retain(), b.retain()];
        drop(handles[0].retain());
        let st = meter.stats();
        let sum_refcounts = (a.refcount() + b.refcount()) as u64;
        assert_eq!(st.allocations + st.retains - st.releases, sum_refcounts);
    }
}
