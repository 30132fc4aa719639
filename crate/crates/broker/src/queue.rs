use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use parking_lot::Mutex;
use smartfridge_wire::Frame;
use tokio::sync::Notify;

/// Bounded FIFO of frames waiting to be written to one connection. When full,
/// the oldest frame is discarded so producers never block.
#[derive(Debug)]
pub struct OutboundQueue {
    frames: Mutex<VecDeque<Frame>>,
    capacity: usize,
    drops: AtomicU64,
    closed: AtomicBool,
    notify: Notify,
}

impl OutboundQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            frames: Mutex::new(VecDeque::with_capacity(capacity.min(64))),
            capacity: capacity.max(1),
            drops: AtomicU64::new(0),
            closed: AtomicBool::new(false),
            notify: Notify::new(),
        }
    }

    /// Enqueues `frame`; returns true when an older frame had to be dropped.
    pub fn push(&self, frame: Frame) -> bool {
        let dropped = {
            let mut q = self.frames.lock();
            let dropped = if q.len() >= self.capacity {
                q.pop_front();
                true
            } else {
                false
            };
            q.push_back(frame);
            dropped
        };
        if dropped {
            self.drops.fetch_add(1, Ordering::Relaxed);
        }
        self.notify.notify_one();
        dropped
    }

    pub fn drain(&self) -> Vec<Frame> {
        self.frames.lock().drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.frames.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn drop_count(&self) -> u64 {
        self.drops.load(Ordering::Relaxed)
    }

    /// Stops the writer once the frames already queued have been drained.
    pub fn close(&self) {
        self.closed.store(true, Ordering::Release);
        self.notify.notify_one();
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::Acquire)
    }

    /// Waits for frames; `None` once the queue is closed and empty.
    pub async fn next_batch(&self) -> Option<Vec<Frame>> {
        loop {
            let batch = self.drain();
            if !batch.is_empty() {
                return Some(batch);
            }
            if self.is_closed() {
                return None;
            }
            self.notify.notified().await;
        }
    }
}
