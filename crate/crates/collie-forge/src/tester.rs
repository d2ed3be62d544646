//! The boundary between the search and whatever measures a workload.
//!
//! The simulator implements [`Tester`] in-process; a real traffic engine
//! attaches through the adapter protocol instead. Everything above this
//! trait is agnostic to which one is running.

use std::sync::Mutex;

use crate::error::Result;
use crate::sim::Measurement;
use crate::workload::WorkloadPoint;

pub trait Tester: Sync {
    /// Evaluate one workload and return its measurement. `seed` selects the
    /// noise stream; deterministic testers must return identical
    /// measurements for identical `(point, seed)`.
    fn evaluate(&self, point: &WorkloadPoint, seed: u64) -> Result<Measurement>;

    /// Whether independent evaluations may be issued concurrently. Child
    /// processes speaking the one-request-in-flight adapter protocol say no.
    fn concurrent(&self) -> bool {
        false
    }
}

/// Wrapper that records every evaluated point, for call-log audits such as
/// verifying the skip rule never evaluates a known-anomalous point.
pub struct RecordingTester<'a> {
    inner: &'a dyn Tester,
    log: Mutex<Vec<WorkloadPoint>>,
}

impl<'a> RecordingTester<'a> {
    pub fn new(inner: &'a dyn Tester) -> Self {
        RecordingTester {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn call_log(&self) -> Vec<WorkloadPoint> {
        self.log.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }
}

impl Tester for RecordingTester<'_> {
    fn evaluate(&self, point: &WorkloadPoint, seed: u64) -> Result<Measurement> {
        self.log.lock().unwrap().push(point.clone());
        self.inner.evaluate(point, seed)
    }

    fn concurrent(&self) -> bool {
        self.inner.concurrent()
    }
}

/// Wrapper that hides a tester's concurrency support, forcing sequential
/// evaluation paths. Used to compare the parallel and sequential lanes.
pub struct SequentialTester<'a>(pub &'a dyn Tester);

impl Tester for SequentialTester<'_> {
    fn evaluate(&self, point: &WorkloadPoint, seed: u64) -> Result<Measurement> {
        self.0.evaluate(point, seed)
    }

    fn concurrent(&self) -> bool {
        false
    }
}
