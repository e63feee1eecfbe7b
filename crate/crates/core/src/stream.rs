//! Pull-driven stream functionals over slices.
//!
//! Every stream is lazy: nothing is read until a consumer pulls, and a
//! consumer pulls one element at a time. Elements carry [`Slice`] handles,
//! so sharing between windows or branches is a retain, never a copy.

use std::collections::VecDeque;
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;

use crate::error::{Error, PlanError, Result};
use crate::slice::Slice;
use crate::volume::PlaneMeta;

type Source<T> = Box<dyn Iterator<Item = Result<T>> + Send>;

/// A lazily produced sequence of elements built from slices of one plane
/// geometry.
pub struct Stream<T> {
    plane: PlaneMeta,
    depth: Option<usize>,
    pulled: usize,
    source: Source<T>,
    done: bool,
}

pub type SliceStream = Stream<Slice>;
pub type WindowStream = Stream<Window>;

impl<T> Stream<T> {
    pub fn new(
        plane: PlaneMeta,
        depth: Option<usize>,
        source: impl Iterator<Item = Result<T>> + Send + 'static,
    ) -> Self {
        Stream {
            plane,
            depth,
            pulled: 0,
            source: Box::new(source),
            done: false,
        }
    }

    pub fn empty(plane: PlaneMeta) -> Self
    where
        T: 'static,
    {
        Stream::new(plane, Some(0), std::iter::empty())
    }

    /// Next element, or `None` at end of stream. Once the end (or an
    /// error) has been seen, every further pull returns `None`.
    pub fn pull(&mut self) -> Result<Option<T>> {
        if self.done {
            return Ok(None);
        }
        match self.source.next() {
            Some(Ok(item)) => {
                self.pulled += 1;
                Ok(Some(item))
            }
            Some(Err(e)) => {
                self.done = true;
                Err(e)
            }
            None => {
                self.done = true;
                Ok(None)
            }
        }
    }

    pub fn plane(&self) -> PlaneMeta {
        self.plane
    }

    /// Total element count, when known up front.
    pub fn depth(&self) -> Option<usize> {
        self.depth
    }

    pub fn remaining(&self) -> Option<usize> {
        self.depth.map(|d| d.saturating_sub(self.pulled))
    }

    pub fn pulled(&self) -> usize {
        self.pulled
    }

    pub fn is_finished(&self) -> bool {
        self.done
    }
}

impl<T> Iterator for Stream<T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Self::Item> {
        self.pull().transpose()
    }
}

impl<T> std::fmt::Debug for Stream<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stream")
            .field("plane", &self.plane)
            .field("depth", &self.depth)
            .field("pulled", &self.pulled)
            .field("done", &self.done)
            .finish()
    }
}

/// An ordered group of consecutive slices.
#[derive(Debug, Clone)]
pub struct Window {
    /// Position of this window in its window stream.
    pub index: usize,
    slices: Vec<Slice>,
}

impl Window {
    pub fn new(index: usize, slices: Vec<Slice>) -> Self {
        Window { index, slices }
    }

    pub fn slices(&self) -> &[Slice] {
        &self.slices
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn into_slices(self) -> Vec<Slice> {
        self.slices
    }
}

impl std::ops::Deref for Window {
    type Target = [Slice];

    fn deref(&self) -> &[Slice] {
        &self.slices
    }
}

impl IntoIterator for Window {
    type Item = Slice;
    type IntoIter = std::vec::IntoIter<Slice>;

    fn into_iter(self) -> Self::IntoIter {
        self.slices.into_iter()
    }
}

/// Checks sliding-window parameters.
pub fn validate_window(w: usize, s: usize, p: usize) -> Result<(), PlanError> {
    let bad = |reason| PlanError::InvalidWindow {
        window: w,
        stride: s,
        padding: p,
        reason,
    };
    if w == 0 {
        return Err(bad("window must be >= 1"));
    }
    if s == 0 {
        return Err(bad("stride must be >= 1"));
    }
    if p > 0 && p >= w {
        return Err(bad("padding must be smaller than the window"));
    }
    Ok(())
}

/// Number of windows over `depth` slices: `floor((d + 2p - w) / s) + 1`.
pub fn window_count(depth: usize, w: usize, s: usize, p: usize) -> usize {
    let padded = depth + 2 * p;
    if depth == 0 || padded < w {
        0
    } else {
        (padded - w) / s + 1
    }
}

struct Windowed {
    input: SliceStream,
    w: usize,
    s: usize,
    p: usize,
    next_window: usize,
    buf: VecDeque<Slice>,
    buf_start: usize,
    depth: Option<usize>,
    /// Shortest trailing window emitted when the input ends mid-window;
    /// zero emits complete windows only.
    min_tail: usize,
    finished: bool,
}

impl Windowed {
    fn last_available(&self) -> Option<usize> {
        if self.buf.is_empty() {
            None
        } else {
            Some(self.buf_start + self.buf.len() - 1)
        }
    }

    /// Pulls until real index `r` is buffered. Returns false at end of input.
    fn ensure(&mut self, r: usize) -> Result<bool> {
        loop {
            match self.last_available() {
                Some(last) if last >= r => return Ok(true),
                _ => {}
            }
            if self.depth.is_some() {
                return Ok(false);
            }
            match self.input.pull()? {
                Some(slice) => {
                    if self.buf.is_empty() {
                        self.buf_start = self.input.pulled() - 1;
                    }
                    self.buf.push_back(slice);
                }
                None => {
                    self.depth = Some(self.input.pulled());
                    return Ok(false);
                }
            }
        }
    }

    /// Drops buffered slices below `keep_from`, always keeping the newest.
    fn prune_below(&mut self, keep_from: usize) {
        while self.buf.len() > 1 && self.buf_start < keep_from {
            self.buf.pop_front();
            self.buf_start += 1;
        }
    }

    fn step(&mut self) -> Result<Option<Window>> {
        if self.finished {
            return Ok(None);
        }
        let (w, s, p) = (self.w, self.s, self.p);
        let start_v = self.next_window * s;
        let last_v = start_v + w - 1;
        let first_real = start_v.saturating_sub(p);
        self.prune_below(first_real);
        let last_real = last_v.saturating_sub(p);
        if !self.ensure(last_real)? {
            let d = self.depth.unwrap_or(0);
            if d == 0 || last_v >= d + 2 * p {
                return self.tail(first_real);
            }
        }
        self.prune_below(first_real);
        let newest = self.last_available().expect("buffer holds at least one slice");
        let mut slices = Vec::with_capacity(w);
        for v in start_v..=last_v {
            let r = v.saturating_sub(p).min(newest).max(self.buf_start);
            slices.push(self.buf[r - self.buf_start].retain());
        }
        let window = Window::new(self.next_window, slices);
        self.next_window += 1;
        self.prune_below((self.next_window * s).saturating_sub(p));
        Ok(Some(window))
    }
}

impl Windowed {
    fn tail(&mut self, first_real: usize) -> Result<Option<Window>> {
        self.finished = true;
        if self.min_tail == 0 || self.buf.is_empty() {
            return Ok(None);
        }
        let newest = self.buf_start + self.buf.len() - 1;
        if newest < first_real || newest + 1 - first_real < self.min_tail {
            return Ok(None);
        }
        let slices = self
            .buf
            .iter()
            .skip(first_real.saturating_sub(self.buf_start))
            .map(Slice::retain)
            .collect();
        self.buf.clear();
        Ok(Some(Window::new(self.next_window, slices)))
    }
}

/// Sliding windows of `w` slices advancing by `s`, with `p` clamp-to-edge
/// padding slices on both ends.
///
/// Window `i` covers padded positions `i*s .. i*s + w`. Only complete
/// windows are produced. When `s > w` the slices in the gaps are read and
/// released without being emitted.
pub fn windowed(w: usize, s: usize, p: usize, input: SliceStream) -> Result<WindowStream> {
    validate_window(w, s, p)?;
    let depth = input.depth().map(|d| window_count(d, w, s, p));
    Ok(windowed_inner(w, s, p, 0, depth, input))
}

/// Unpadded sliding windows that end with one shorter window when the
/// input stops mid-window and at least `min_tail` slices remain from the
/// next window start. Kernel stages use this so the last valid centre
/// slices are not lost.
pub fn windowed_with_tail(w: usize, s: usize, min_tail: usize, input: SliceStream) -> Result<WindowStream> {
    validate_window(w, s, 0)?;
    if s > w {
        return Err(PlanError::InvalidWindow {
            window: w,
            stride: s,
            padding: 0,
            reason: "a trailing window needs stride <= window",
        }
        .into());
    }
    let depth = input.depth().map(|d| {
        let full = window_count(d, w, s, 0);
        let next = full * s;
        let rest = d.saturating_sub(next);
        full + usize::from(rest >= min_tail.max(1))
    });
    Ok(windowed_inner(w, s, 0, min_tail.max(1), depth, input))
}

fn windowed_inner(
    w: usize,
    s: usize,
    p: usize,
    min_tail: usize,
    depth: Option<usize>,
    input: SliceStream,
) -> WindowStream {
    let plane = input.plane();
    let mut state = Windowed {
        input,
        w,
        s,
        p,
        next_window: 0,
        buf: VecDeque::with_capacity(w + s),
        buf_start: 0,
        depth: None,
        min_tail,
        finished: false,
    };
    Stream::new(
        plane,
        depth,
        std::iter::from_fn(move || state.step().transpose()),
    )
}

/// Non-overlapping groups of `w` slices; the last group may be shorter.
pub fn batched(w: usize, mut input: SliceStream) -> Result<WindowStream> {
    validate_window(w, w, 0)?;
    let plane = input.plane();
    let depth = input.depth().map(|d| d.div_ceil(w));
    let mut index = 0;
    Ok(Stream::new(
        plane,
        depth,
        std::iter::from_fn(move || {
            let mut group = Vec::with_capacity(w);
            while group.len() < w {
                match input.pull() {
                    Ok(Some(s)) => group.push(s),
                    Ok(None) => break,
                    Err(e) => return Some(Err(e)),
                }
            }
            if group.is_empty() {
                return None;
            }
            index += 1;
            Some(Ok(Window::new(index - 1, group)))
        }),
    ))
}

/// Concatenates a stream of stacks. Ownership of each slice moves to the
/// consumer; no reference is added.
pub fn flatten<T>(mut input: Stream<T>) -> SliceStream
where
    T: IntoIterator<Item = Slice> + 'static,
    T::IntoIter: Send,
{
    let plane = input.plane();
    let mut current: Option<T::IntoIter> = None;
    Stream::new(
        plane,
        None,
        std::iter::from_fn(move || loop {
            if let Some(it) = current.as_mut() {
                if let Some(s) = it.next() {
                    return Some(Ok(s));
                }
                current = None;
            }
            match input.pull() {
                Ok(Some(stack)) => current = Some(stack.into_iter()),
                Ok(None) => return None,
                Err(e) => return Some(Err(e)),
            }
        }),
    )
}

/// Applies `f` to each element. The input element is dropped (released)
/// as soon as `f` returns, unless `f` kept a handle to it.
pub fn map<T, U, F>(mut input: Stream<T>, stage: &str, plane: PlaneMeta, mut f: F) -> Stream<U>
where
    T: 'static,
    U: 'static,
    F: FnMut(T) -> Result<U> + Send + 'static,
{
    let depth = input.depth();
    let stage = stage.to_string();
    let mut index = 0usize;
    Stream::new(
        plane,
        depth,
        std::iter::from_fn(move || match input.pull() {
            Ok(Some(item)) => {
                let i = index;
                index += 1;
                Some(f(item).map_err(|e| e.at_stage(&stage, i)))
            }
            Ok(None) => None,
            Err(e) => Some(Err(e)),
        }),
    )
}

/// Left fold over the whole stream.
pub fn fold<T, A, F>(mut input: Stream<T>, init: A, mut step: F) -> Result<A>
where
    F: FnMut(A, T) -> Result<A>,
{
    let mut acc = init;
    let mut index = 0usize;
    while let Some(item) = input.pull()? {
        acc = step(acc, item).map_err(|e| e.at_stage("fold", index))?;
        index += 1;
    }
    Ok(acc)
}

/// Pairs up two slice streams element by element.
///
/// Both streams must carry the same plane geometry. Streams of unequal
/// length are an error raised when the shorter one ends.
pub fn zip(mut a: SliceStream, mut b: SliceStream) -> Result<Stream<(Slice, Slice)>> {
    if a.plane() != b.plane() {
        return Err(PlanError::MetaMismatch(format!(
            "zip inputs differ: {:?} vs {:?}",
            a.plane(),
            b.plane()
        ))
        .into());
    }
    if let (Some(da), Some(db)) = (a.depth(), b.depth()) {
        if da != db {
            return Err(PlanError::MetaMismatch(format!(
                "zip inputs have depths {da} and {db}"
            ))
            .into());
        }
    }
    let plane = a.plane();
    let depth = a.depth().or(b.depth());
    Ok(Stream::new(
        plane,
        depth,
        std::iter::from_fn(move || {
            let left = match a.pull() {
                Ok(v) => v,
                Err(e) => return Some(Err(e)),
            };
            let right = match b.pull() {
                Ok(v) => v,
                Err(e) => return Some(Err(e)),
            };
            match (left, right) {
                (Some(l), Some(r)) => Some(Ok((l, r))),
                (None, None) => None,
                (None, Some(_)) => Some(Err(Error::DepthMismatch {
                    shorter: "a",
                    depth: a.pulled(),
                })),
                (Some(_), None) => Some(Err(Error::DepthMismatch {
                    shorter: "b",
                    depth: b.pulled(),
                })),
            }
        }),
    ))
}

/// A source emitting `g(0), ..., g(depth - 1)`.
pub fn initialize<G>(depth: usize, plane: PlaneMeta, mut g: G) -> SliceStream
where
    G: FnMut(usize) -> Result<Slice> + Send + 'static,
{
    let mut z = 0usize;
    Stream::new(
        plane,
        Some(depth),
        std::iter::from_fn(move || {
            if z >= depth {
                return None;
            }
            let i = z;
            z += 1;
            Some(g(i).map_err(|e| e.at_stage("initialize", i)))
        }),
    )
}

struct TeeState {
    input: SliceStream,
    queues: Vec<Option<VecDeque<Slice>>>,
    failed: bool,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

struct TeeBranch {
    state: Arc<Mutex<TeeState>>,
    id: usize,
}

impl Iterator for TeeBranch {
    type Item = Result<Slice>;

    fn next(&mut self) -> Option<Result<Slice>> {
        let mut st = lock(&self.state);
        if let Some(s) = st.queues[self.id].as_mut().and_then(|q| q.pop_front()) {
            return Some(Ok(s));
        }
        if st.failed {
            return Some(Err(Error::Upstream));
        }
        match st.input.pull() {
            Ok(Some(slice)) => {
                let id = self.id;
                for (j, q) in st.queues.iter_mut().enumerate() {
                    if j != id {
                        if let Some(q) = q {
                            q.push_back(slice.retain());
                        }
                    }
                }
                Some(Ok(slice))
            }
            Ok(None) => None,
            Err(e) => {
                st.failed = true;
                Some(Err(e))
            }
        }
    }
}

impl Drop for TeeBranch {
    fn drop(&mut self) {
        lock(&self.state).queues[self.id] = None;
    }
}

/// Splits one stream into `n` branches that each see every slice.
///
/// Slices are shared by reference. A slice stays buffered for a branch
/// only until that branch pulls it; dropped branches stop buffering.
pub fn tee(input: SliceStream, n: usize) -> Vec<SliceStream> {
    let plane = input.plane();
    let depth = input.depth();
    let state = Arc::new(Mutex::new(TeeState {
        input,
        queues: (0..n).map(|_| Some(VecDeque::new())).collect(),
        failed: false,
    }));
    (0..n)
        .map(|id| {
            Stream::new(
                plane,
                depth,
                TeeBranch {
                    state: Arc::clone(&state),
                    id,
                },
            )
        })
        .collect()
}

/// Moves `input` onto its own thread, connected through a bounded queue
/// of `capacity` elements.
pub fn spawn<T: Send + 'static>(mut input: Stream<T>, capacity: usize) -> (Stream<T>, JoinHandle<()>) {
    let plane = input.plane();
    let depth = input.depth();
    let (tx, rx) = sync_channel::<Result<T>>(capacity);
    let handle = std::thread::spawn(move || loop {
        match input.pull() {
            Ok(Some(item)) => {
                if tx.send(Ok(item)).is_err() {
                    return;
                }
            }
            Ok(None) => return,
            Err(e) => {
                let _ = tx.send(Err(e));
                return;
            }
        }
    });
    (Stream::new(plane, depth, ReceiverIter(rx)), handle)
}

struct ReceiverIter<T>(Receiver<Result<T>>);

impl<T> Iterator for ReceiverIter<T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Result<T>> {
        self.0.recv().ok()
    }
}
