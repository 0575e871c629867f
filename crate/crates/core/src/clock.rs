use std::sync::atomic::{AtomicI64, Ordering};

use crate::harvest::Datestamp;

/// Source of datestamps. Injected so simulations can control time.
pub trait Clock: Send + Sync {
    fn now(&self) -> Datestamp;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Datestamp {
        Datestamp::now()
    }
}

/// A clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(AtomicI64);

impl ManualClock {
    pub fn new(start: Datestamp) -> Self {
        ManualClock(AtomicI64::new(start.unix()))
    }

    pub fn set(&self, to: Datestamp) {
        self.0.store(to.unix(), Ordering::SeqCst);
    }

    /// Moves the clock forward and returns the new time.
    pub fn advance(&self, secs: i64) -> Datestamp {
        Datestamp::from_unix(self.0.fetch_add(secs, Ordering::SeqCst) + secs)
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Datestamp {
        Datestamp::from_unix(self.0.load(Ordering::SeqCst))
    }
}
