use std::collections::VecDeque;

/// Fixed-capacity ring buffer of per-step flags with a running count.
///
/// Until `capacity` entries have been pushed the window is "cold" and
/// ratios divide by the entries present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RollingWindow {
    flags: VecDeque<bool>,
    capacity: usize,
    set: usize,
}

impl RollingWindow {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self {
            flags: VecDeque::with_capacity(capacity),
            capacity,
            set: 0,
        }
    }

    pub fn push(&mut self, flag: bool) {
        if self.flags.len() == self.capacity {
            if let Some(true) = self.flags.pop_front() {
                self.set -= 1;
            }
        }
        self.flags.push_back(flag);
        if flag {
            self.set += 1;
        }
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_warm(&self) -> bool {
        self.flags.len() == self.capacity
    }

    /// Number of set entries currently in the window.
    pub fn count(&self) -> usize {
        self.set
    }

    /// `count / len`, or 0 for an empty window.
    pub fn ratio(&self) -> f64 {
        if self.flags.is_empty() {
            0.0
        } else {
            self.set as f64 / self.flags.len() as f64
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.flags.iter().copied()
    }
}
