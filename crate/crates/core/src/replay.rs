//! Bounded FIFO transition store with uniform sampling with replacement.
//!
//! Only physically generated transitions are stored; mirroring happens inside the learner.

use std::path::Path;
use std::sync::{Arc, Mutex};

use ndarray::Array2;
use rand::Rng;

use crate::env::Transition;
use crate::error::{Error, Result};
use crate::nets::checkpoint::{self, NamedArray};
use crate::{ACT_DIM, OBS_DIM};

pub const DEFAULT_CAPACITY: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    /// Slot the next push writes once the ring is full.
    cursor: usize,
}

/// Transitions laid out as row-major batches.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionBatch {
    pub s: Array2<f64>,
    pub a: Array2<f64>,
    pub r: Vec<f64>,
    pub s_next: Array2<f64>,
    pub done: Vec<bool>,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn from_transitions(ts: &[Transition]) -> Self {
        let n = ts.len();
        let mut batch = Self {
            s: Array2::zeros((n, OBS_DIM)),
            a: Array2::zeros((n, ACT_DIM)),
            r: Vec::with_capacity(n),
            s_next: Array2::zeros((n, OBS_DIM)),
            done: Vec::with_capacity(n),
        };
        for (k, t) in ts.iter().enumerate() {
            batch.s.row_mut(k).assign(&ndarray::ArrayView1::from(&t.s[..]));
            batch.a.row_mut(k).assign(&ndarray::ArrayView1::from(&t.a[..]));
            batch.s_next.row_mut(k).assign(&ndarray::ArrayView1::from(&t.s_next[..]));
            batch.r.push(t.r);
            batch.done.push(t.done);
        }
        batch
    }

    pub fn transition(&self, k: usize) -> Transition {
        Transition {
            s: self.s.row(k).to_vec(),
            a: self.a.row(k).to_vec(),
            r: self.r[k],
            s_next: self.s_next.row(k).to_vec(),
            done: self.done[k],
        }
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    /// Stored transitions from oldest to newest.
    pub fn iter_fifo(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.items.split_at(self.cursor);
        older.iter().chain(newer)
    }

    pub fn get(&self, k: usize) -> Option<&Transition> {
        self.items.get(k)
    }

    fn ensure(&self, requested: usize) -> Result<()> {
        if requested == 0 || self.items.len() < requested {
            return Err(Error::InsufficientData {
                requested,
                available: self.items.len(),
            });
        }
        Ok(())
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        self.ensure(n)?;
        Ok((0..n).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    /// `k` states drawn uniformly with replacement, one per row.
    pub fn sample_states<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Array2<f64>> {
        let idx = self.sample_indices(k, rng)?;
        let mut out = Array2::zeros((k, OBS_DIM));
        for (row, &i) in idx.iter().enumerate() {
            out.row_mut(row).assign(&ndarray::ArrayView1::from(&self.items[i].s[..]));
        }
        Ok(out)
    }

    pub fn sample_transitions<R: Rng + ?Sized>(&self, b: usize, rng: &mut R) -> Result<TransitionBatch> {
        let idx = self.sample_indices(b, rng)?;
        let picked: Vec<Transition> = idx.iter().map(|&i| self.items[i].clone()).collect();
        Ok(TransitionBatch::from_transitions(&picked))
    }

    pub fn to_arrays(&self) -> Vec<NamedArray> {
        let n = self.items.len();
        let mut s = Vec::with_capacity(n * OBS_DIM);
        let mut a = Vec::with_capacity(n * ACT_DIM);
        let mut r = Vec::with_capacity(n);
        let mut s_next = Vec::with_capacity(n * OBS_DIM);
        let mut done = Vec::with_capacity(n);
        for t in self.iter_fifo() {
            s.extend(&t.s);
            a.extend(&t.a);
            r.push(t.r);
            s_next.extend(&t.s_next);
            done.push(if t.done { 1.0 } else { 0.0 });
        }
        vec![
            NamedArray::scalar("replay.capacity", self.capacity as f64),
            NamedArray::new("replay.s", vec![n, OBS_DIM], s),
            NamedArray::new("replay.a", vec![n, ACT_DIM], a),
            NamedArray::new("replay.r", vec![n], r),
            NamedArray::new("replay.s_next", vec![n, OBS_DIM], s_next),
            NamedArray::new("replay.done", vec![n], done),
        ]
    }

    pub fn from_arrays(arrays: &[NamedArray]) -> Result<Self> {
        let capacity = checkpoint::find(arrays, "replay.capacity")?.data[0] as usize;
        let s = checkpoint::find(arrays, "replay.s")?;
        let a = checkpoint::find(arrays, "replay.a")?;
        let r = checkpoint::find(arrays, "replay.r")?;
        let s_next = checkpoint::find(arrays, "replay.s_next")?;
        let done = checkpoint::find(arrays, "replay.done")?;
        let n = r.data.len();
        if capacity == 0
            || n > capacity
            || s.data.len() != n * OBS_DIM
            || s_next.data.len() != n * OBS_DIM
            || a.data.len() != n * ACT_DIM
            || done.data.len() != n
        {
            return Err(Error::Format("replay snapshot arrays are inconsistent".into()));
        }
        let mut buf = Self::new(capacity);
        for k in 0..n {
            buf.push(Transition {
                s: s.data[k * OBS_DIM..(k + 1) * OBS_DIM].to_vec(),
                a: a.data[k * ACT_DIM..(k + 1) * ACT_DIM].to_vec(),
                r: r.data[k],
                s_next: s_next.data[k * OBS_DIM..(k + 1) * OBS_DIM].to_vec(),
                done: done.data[k] != 0.0,
            });
        }
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.to_arrays())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_arrays(&checkpoint::load(path)?)
    }
}

/// Replay shared between one actor thread and one learner thread. Each push and each sample
/// holds the lock for its whole duration, so no reader observes a torn transition.
pub type SharedReplay = Arc<Mutex<ReplayBuffer>>;

pub fn shared(capacity: usize) -> SharedReplay {
    Arc::new(Mutex::new(ReplayBuffer::new(capacity)))
}
