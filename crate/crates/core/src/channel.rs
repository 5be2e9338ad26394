//! Bounded blocking FIFO channels with explicit close.
//!
//! `put` blocks while the buffer is full, `get` blocks while it is empty and
//! open. After `close`, puts fail (including puts already waiting) and gets
//! drain what is buffered before reporting end-of-stream. Each accepted token
//! is stamped with the next sequence number, starting at 0.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex, MutexGuard};

pub const DEFAULT_CAPACITY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ChannelError {
    #[error("put on a closed channel")]
    PutAfterClose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token<T> {
    pub seq: u64,
    pub payload: T,
}

struct State<T> {
    buf: VecDeque<Token<T>>,
    closed: bool,
    produced: u64,
    consumed: u64,
}

pub struct Channel<T> {
    capacity: usize,
    state: Mutex<State<T>>,
    not_empty: Condvar,
    not_full: Condvar,
}

/// Counters for one channel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChannelCounts {
    pub produced: u64,
    pub consumed: u64,
    pub buffered: usize,
}

impl<T> Channel<T> {
    /// # Panics
    /// If `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "channel capacity must be positive");
        Channel {
            capacity,
            state: Mutex::new(State {
                buf: VecDeque::with_capacity(capacity.min(1024)),
                closed: false,
                produced: 0,
                consumed: 0,
            }),
            not_empty: Condvar::new(),
            not_full: Condvar::new(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, State<T>> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Blocks until there is room, then enqueues. Returns the token's seq.
    pub fn put(&self, payload: T) -> Result<u64, ChannelError> {
        let mut st = self.lock();
        loop {
            if st.closed {
                return Err(ChannelError::PutAfterClose);
            }
            if st.buf.len() < self.capacity {
                break;
            }
            st = self.not_full.wait(st).unwrap_or_else(|e| e.into_inner());
        }
        let seq = st.produced;
        st.produced += 1;
        st.buf.push_back(Token { seq, payload });
        drop(st);
        self.not_empty.notify_one();
        Ok(seq)
    }

    /// Blocks until a token is available; `None` once closed and drained.
    pub fn get(&self) -> Option<Token<T>> {
        let mut st = self.lock();
        loop {
            if let Some(tok) = st.buf.pop_front() {
                st.consumed += 1;
                drop(st);
                self.not_full.notify_one();
                return Some(tok);
            }
            if st.closed {
                return None;
            }
            st = self.not_empty.wait(st).unwrap_or_else(|e| e.into_inner());
        }
    }

    /// Idempotent.
    pub fn close(&self) {
        self.lock().closed = true;
        self.not_empty.notify_all();
        self.not_full.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }

    pub fn counts(&self) -> ChannelCounts {
        let st = self.lock();
        ChannelCounts {
            produced: st.produced,
            consumed: st.consumed,
            buffered: st.buf.len(),
        }
    }
}
