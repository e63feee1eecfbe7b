//! Several kernel branches sweeping one shared input window.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex, MutexGuard};

use crate::error::{Error, Result};
use crate::slice::Slice;
use crate::stream::{SliceStream, Stream};

use super::kernel::{valid_depth, SlabKernel};

struct SharedState {
    input: SliceStream,
    kernels: Vec<Arc<dyn SlabKernel>>,
    names: Vec<String>,
    window: VecDeque<Slice>,
    span: usize,
    pulled: usize,
    queues: Vec<Option<VecDeque<Slice>>>,
    failed: bool,
    done: bool,
}

fn lock(m: &Mutex<SharedState>) -> MutexGuard<'_, SharedState> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl SharedState {
    /// Pulls one input slice and queues every output it completes.
    fn advance(&mut self) -> Result<bool> {
        let Some(s) = self.input.pull()? else {
            self.done = true;
            self.window.clear();
            return Ok(false);
        };
        self.window.push_back(s);
        if self.window.len() > self.span {
            self.window.pop_front();
        }
        self.pulled += 1;
        let n = self.window.len();
        for (i, k) in self.kernels.iter().enumerate() {
            let Some(q) = self.queues[i].as_mut() else {
                continue;
            };
            let kz = k.depth();
            if n >= kz {
                let slab: Vec<Slice> = self.window.range(n - kz..).cloned().collect();
                let out = k
                    .compute(&slab)
                    .map_err(|e| e.at_stage(&self.names[i], self.pulled - kz))?;
                q.push_back(out);
            }
        }
        Ok(true)
    }
}

struct SharedBranch {
    state: Arc<Mutex<SharedState>>,
    id: usize,
}

impl Iterator for SharedBranch {
    type Item = Result<Slice>;

    fn next(&mut self) -> Option<Result<Slice>> {
        let mut st = lock(&self.state);
        loop {
            if let Some(s) = st.queues[self.id].as_mut().and_then(|q| q.pop_front()) {
                return Some(Ok(s));
            }
            if st.failed {
                return Some(Err(Error::Upstream));
            }
            if st.done {
                return None;
            }
            match st.advance() {
                Ok(_) => {}
                Err(e) => {
                    st.failed = true;
                    st.window.clear();
                    return Some(Err(e));
                }
            }
        }
    }
}

impl Drop for SharedBranch {
    fn drop(&mut self) {
        lock(&self.state).queues[self.id] = None;
    }
}

/// One window of `max k_z` slices advancing one slice at a time feeds
/// every kernel; branch `i` sees exactly the output of
/// `kernel_stream(kernels[i])` on the same input.
pub fn shared_window_streams(
    kernels: Vec<Arc<dyn SlabKernel>>,
    names: Vec<String>,
    input: SliceStream,
) -> Result<Vec<SliceStream>> {
    let plane = input.plane();
    let depth = input.depth();
    let span = kernels.iter().map(|k| k.depth()).max().unwrap_or(1);
    let depths: Vec<Option<usize>> = kernels
        .iter()
        .map(|k| depth.map(|d| valid_depth(d, k.depth())))
        .collect();
    let n = kernels.len();
    let state = Arc::new(Mutex::new(SharedState {
        input,
        kernels,
        names,
        window: VecDeque::with_capacity(span + 1),
        span,
        pulled: 0,
        queues: (0..n).map(|_| Some(VecDeque::new())).collect(),
        failed: false,
        done: false,
    }));
    Ok((0..n)
        .map(|id| {
            Stream::new(
                plane,
                depths[id],
                SharedBranch {
                    state: Arc::clone(&state),
                    id,
                },
            )
        })
        .collect())
}
