//! Bounded blocking token queues. One `Fifo` backs one edge: a single
//! producer pushes whole firings, a single consumer pops them, and end of
//! stream travels in-band as a marker behind the last token.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FifoError {
    #[error("edge `{edge}`: pushed {got} bytes, expected {expected} for {count} tokens")]
    SizeMismatch {
        edge: String,
        expected: usize,
        got: usize,
        count: u32,
    },
    #[error("edge `{edge}`: push after end of stream")]
    PushAfterEos { edge: String },
    #[error("edge `{edge}`: consumer failed: {reason}")]
    ConsumerFailed { edge: String, reason: String },
}

/// What happened to a pushed firing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pushed {
    Delivered,
    /// The consumer has left; the tokens were dropped. Producers use this
    /// to notice that nobody downstream is listening any more.
    Discarded,
}

/// What a pop produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Popped {
    /// Exactly the requested number of tokens, concatenated.
    Tokens(Vec<u8>),
    /// End of stream reached with fewer tokens than requested; the partial
    /// remainder was discarded and shows up in the drained counter.
    Eos { error: Option<String> },
}

/// Monotone counters kept by every FIFO.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeCounters {
    pub produced: u64,
    pub consumed: u64,
    /// Tokens dropped without being consumed: partial firings at end of
    /// stream, plus anything pushed or left queued after the consumer left.
    pub drained: u64,
    pub peak_occupancy: u32,
}

#[derive(Default)]
struct State {
    bytes: VecDeque<u8>,
    eos: bool,
    eos_error: Option<String>,
    closed: bool,
    close_error: Option<String>,
    counters: EdgeCounters,
}

pub struct Fifo {
    edge: String,
    token_size: usize,
    capacity: usize,
    initial_tokens: u64,
    state: Mutex<State>,
    readable: Condvar,
    writable: Condvar,
}

impl Fifo {
    /// Creates the queue pre-loaded with `initial_tokens` zero-filled
    /// tokens. Initial tokens are not counted as produced.
    pub fn new(edge: &str, token_size: u32, capacity: u32, initial_tokens: u32) -> Fifo {
        let token_size = token_size as usize;
        let mut state = State::default();
        state.bytes.resize(initial_tokens as usize * token_size, 0);
        state.counters.peak_occupancy = initial_tokens;
        Fifo {
            edge: edge.to_string(),
            token_size,
            capacity: capacity as usize,
            initial_tokens: u64::from(initial_tokens),
            state: Mutex::new(state),
            readable: Condvar::new(),
            writable: Condvar::new(),
        }
    }

    pub fn edge(&self) -> &str {
        &self.edge
    }

    pub fn token_size(&self) -> usize {
        self.token_size
    }

    pub fn capacity(&self) -> u32 {
        self.capacity as u32
    }

    pub fn initial_tokens(&self) -> u64 {
        self.initial_tokens
    }

    pub fn occupancy(&self) -> u32 {
        let st = self.state.lock().unwrap();
        (st.bytes.len() / self.token_size) as u32
    }

    pub fn counters(&self) -> EdgeCounters {
        self.state.lock().unwrap().counters
    }

    /// Appends one firing of `count` tokens atomically, blocking until the
    /// queue has room for all of them. A zero-count push returns at once.
    pub fn push(&self, count: u32, payload: &[u8]) -> Result<Pushed, FifoError> {
        let expected = count as usize * self.token_size;
        if payload.len() != expected {
            return Err(FifoError::SizeMismatch {
                edge: self.edge.clone(),
                expected,
                got: payload.len(),
                count,
            });
        }
        let mut st = self.state.lock().unwrap();
        if st.eos {
            return Err(FifoError::PushAfterEos { edge: self.edge.clone() });
        }
        while !st.closed && st.bytes.len() / self.token_size + count as usize > self.capacity {
            st = self.writable.wait(st).unwrap();
        }
        if st.closed {
            if let Some(reason) = &st.close_error {
                return Err(FifoError::ConsumerFailed {
                    edge: self.edge.clone(),
                    reason: reason.clone(),
                });
            }
            st.counters.drained += u64::from(count);
            return Ok(Pushed::Discarded);
        }
        st.bytes.extend(payload);
        st.counters.produced += u64::from(count);
        let occupancy = (st.bytes.len() / self.token_size) as u32;
        if occupancy > st.counters.peak_occupancy {
            st.counters.peak_occupancy = occupancy;
        }
        drop(st);
        self.readable.notify_all();
        Ok(Pushed::Delivered)
    }

    /// Removes exactly `count` tokens, blocking until they are available.
    /// When end of stream arrives with fewer tokens left, the remainder is
    /// drained and `Popped::Eos` is returned instead. A zero-count pop
    /// never blocks: it is an empty firing while the stream lives, and
    /// reports end of stream once the queue is exhausted after it ended.
    /// Without that, an actor whose rates stay at zero would keep firing
    /// forever after its upstream left.
    pub fn pop(&self, count: u32) -> Popped {
        let want = count as usize * self.token_size;
        let mut st = self.state.lock().unwrap();
        if count == 0 {
            if st.eos && st.bytes.is_empty() {
                return Popped::Eos { error: st.eos_error.clone() };
            }
            return Popped::Tokens(Vec::new());
        }
        loop {
            if st.bytes.len() >= want {
                let out: Vec<u8> = st.bytes.drain(..want).collect();
                st.counters.consumed += u64::from(count);
                drop(st);
                self.writable.notify_all();
                return Popped::Tokens(out);
            }
            if st.eos {
                st.counters.drained += (st.bytes.len() / self.token_size) as u64;
                st.bytes.clear();
                let error = st.eos_error.clone();
                drop(st);
                self.writable.notify_all();
                return Popped::Eos { error };
            }
            st = self.readable.wait(st).unwrap();
        }
    }

    /// Marks the end of the stream, optionally carrying the error that cut
    /// it short. Queued tokens stay poppable; only the marker is appended.
    /// Needs no free capacity and is idempotent (the first call wins).
    pub fn push_eos(&self, error: Option<String>) {
        let mut st = self.state.lock().unwrap();
        if !st.eos {
            st.eos = true;
            st.eos_error = error;
        }
        drop(st);
        self.readable.notify_all();
        self.writable.notify_all();
    }

    /// Detaches the consumer. Queued tokens are drained, blocked and future
    /// pushes stop blocking, and with an error given they fail so the
    /// producer aborts too instead of silently feeding a dead edge.
    pub fn close_consumer(&self, error: Option<String>) {
        let mut st = self.state.lock().unwrap();
        st.counters.drained += (st.bytes.len() / self.token_size) as u64;
        st.bytes.clear();
        if !st.closed {
            st.closed = true;
            st.close_error = error;
        }
        drop(st);
        self.writable.notify_all();
    }
}
