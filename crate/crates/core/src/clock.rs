//! Process CPU time, with a deterministic stand-in where none is available.

use std::cell::Cell;

pub trait Clock {
    /// Seconds since an arbitrary fixed origin.
    fn seconds(&self) -> f64;
}

/// CPU time consumed by the whole process.
#[derive(Debug, Clone, Copy, Default)]
pub struct CpuClock;

#[cfg(not(target_arch = "wasm32"))]
impl Clock for CpuClock {
    fn seconds(&self) -> f64 {
        let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
        // SAFETY: `ts` is a valid, writable timespec.
        let rc = unsafe { libc::clock_gettime(libc::CLOCK_PROCESS_CPUTIME_ID, &mut ts) };
        if rc != 0 {
            return 0.0;
        }
        ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
    }
}

#[cfg(target_arch = "wasm32")]
impl Clock for CpuClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

/// Advances by a fixed step on every reading.
#[derive(Debug, Default)]
pub struct StepClock {
    step: f64,
    now: Cell<f64>,
}

impl StepClock {
    pub fn new(step: f64) -> Self {
        Self { step, now: Cell::new(0.0) }
    }
}

impl Clock for StepClock {
    fn seconds(&self) -> f64 {
        let t = self.now.get();
        self.now.set(t + self.step);
        t
    }
}
