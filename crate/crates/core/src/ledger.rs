//! Evaluation and timing ledger.
//!
//! Every operation that touches data increments a counter, in units of a
//! single per-observation log-density evaluation. Counters are categorized so
//! that the closed-form evaluation-count model in [`crate::diagnostics`] can
//! be audited against the instrumented run category by category:
//!
//! * `full_point`      — full-data scans (`n` per scan),
//! * `subsample_point` — pointwise terms at sampled indices (`m` per estimate;
//!   a sampled point's log-density and its control variate count as one),
//! * `cluster_dense`   — dense control-variate sums (`K` per sum),
//! * `cluster_sparse`  — sparse control-variate sums (`K1` per sum),
//! * `positive_point`  — exact positive-class sums (`P` per estimate, kept in
//!   its own bucket because the standard per-iteration cost formulas for the
//!   subsampling algorithms do not include it),
//! * `surrogate_pred`  — discrepancy predictions in eval-equivalents,
//! * `setup`           — one-off optimizer / subsample-size calibration work.
//!
//! Counters are atomic; timing lists are mutex-guarded. Wall-clock data never
//! influences the deterministic counters.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

/// Cumulative evaluation counts and stage timings for one run.
#[derive(Debug, Default)]
pub struct CostLedger {
    full_point: AtomicU64,
    subsample_point: AtomicU64,
    cluster_dense: AtomicU64,
    cluster_sparse: AtomicU64,
    positive_point: AtomicU64,
    surrogate_pred: AtomicU64,
    setup: AtomicU64,
    /// Number of second-stage entries (FullEval).
    full_entries: AtomicU64,
    u_refreshes: AtomicU64,
    iterations: AtomicU64,
    stage1_times: Mutex<Vec<f64>>,
    stage2_times: Mutex<Vec<f64>>,
}

/// Plain-value snapshot of the ledger counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CostSnapshot {
    pub full_point: u64,
    pub subsample_point: u64,
    pub cluster_dense: u64,
    pub cluster_sparse: u64,
    pub positive_point: u64,
    pub surrogate_pred: u64,
    pub setup: u64,
    pub full_entries: u64,
    pub u_refreshes: u64,
    pub iterations: u64,
}

impl CostSnapshot {
    /// Total evaluation count across all point-evaluation categories.
    pub fn eval_total(&self) -> u64 {
        self.full_point
            + self.subsample_point
            + self.cluster_dense
            + self.cluster_sparse
            + self.positive_point
            + self.surrogate_pred
            + self.setup
    }

    /// Difference of two snapshots taken on the same ledger (`later - self`).
    pub fn delta(&self, later: &CostSnapshot) -> CostSnapshot {
        CostSnapshot {
            full_point: later.full_point - self.full_point,
            subsample_point: later.subsample_point - self.subsample_point,
            cluster_dense: later.cluster_dense - self.cluster_dense,
            cluster_sparse: later.cluster_sparse - self.cluster_sparse,
            positive_point: later.positive_point - self.positive_point,
            surrogate_pred: later.surrogate_pred - self.surrogate_pred,
            setup: later.setup - self.setup,
            full_entries: later.full_entries - self.full_entries,
            u_refreshes: later.u_refreshes - self.u_refreshes,
            iterations: later.iterations - self.iterations,
        }
    }
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_full_point(&self, n: u64) {
        self.full_point.fetch_add(n, Ordering::Relaxed);
    }

    pub fn add_subsample_point(&self, m: u64) {
        self.subsample_point.fetch_add(m, Ordering::Relaxed);
    }

    pub fn add_cluster_dense(&self, k: u64) {
        self.cluster_dense.fetch_add(k, Ordering::Relaxed);
    }

    pub fn add_cluster_sparse(&self, k: u64) {
        self.cluster_sparse.fetch_add(k, Ordering::Relaxed);
    }

    pub fn add_positive_point(&self, p: u64) {
        self.positive_point.fetch_add(p, Ordering::Relaxed);
    }

    pub fn add_surrogate_pred(&self, c: u64) {
        self.surrogate_pred.fetch_add(c, Ordering::Relaxed);
    }

    pub fn add_setup(&self, c: u64) {
        self.setup.fetch_add(c, Ordering::Relaxed);
    }

    pub fn record_full_entry(&self) {
        self.full_entries.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_u_refresh(&self) {
        self.u_refreshes.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_iteration(&self) {
        self.iterations.fetch_add(1, Ordering::Relaxed);
    }

    pub fn push_stage1_time(&self, seconds: f64) {
        self.stage1_times.lock().unwrap().push(seconds);
    }

    pub fn push_stage2_time(&self, seconds: f64) {
        self.stage2_times.lock().unwrap().push(seconds);
    }

    pub fn stage1_times(&self) -> Vec<f64> {
        self.stage1_times.lock().unwrap().clone()
    }

    pub fn stage2_times(&self) -> Vec<f64> {
        self.stage2_times.lock().unwrap().clone()
    }

    pub fn snapshot(&self) -> CostSnapshot {
        CostSnapshot {
            full_point: self.full_point.load(Ordering::Relaxed),
            subsample_point: self.subsample_point.load(Ordering::Relaxed),
            cluster_dense: self.cluster_dense.load(Ordering::Relaxed),
            cluster_sparse: self.cluster_sparse.load(Ordering::Relaxed),
            positive_point: self.positive_point.load(Ordering::Relaxed),
            surrogate_pred: self.surrogate_pred.load(Ordering::Relaxed),
            setup: self.setup.load(Ordering::Relaxed),
            full_entries: self.full_entries.load(Ordering::Relaxed),
            u_refreshes: self.u_refreshes.load(Ordering::Relaxed),
            iterations: self.iterations.load(Ordering::Relaxed),
        }
    }

    pub fn eval_total(&self) -> u64 {
        self.snapshot().eval_total()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counters_accumulate_and_snapshot() {
        let ledger = CostLedger::new();
        ledger.add_full_point(100);
        ledger.add_subsample_point(7);
        ledger.add_cluster_dense(3);
        ledger.record_full_entry();
        let snap = ledger.snapshot();
        assert_eq!(snap.full_point, 100);
        assert_eq!(snap.subsample_point, 7);
        assert_eq!(snap.eval_total(), 110);
        assert_eq!(snap.full_entries, 1);

        ledger.add_positive_point(5);
        let snap2 = ledger.snapshot();
        assert_eq!(snap.delta(&snap2).positive_point, 5);
        assert_eq!(snap.delta(&snap2).full_point, 0);
    }

    #[test]
    fn eval_total_monotone_under_concurrent_increments() {
        let ledger = std::sync::Arc::new(CostLedger::new());
        let mut handles = Vec::new();
        for _ in 0..4 {
            let l = ledger.clone();
            handles.push(std::thread::spawn(move || {
                for _ in 0..1000 {
                    l.add_subsample_point(1);
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(ledger.eval_total(), 4000);
    }
}
