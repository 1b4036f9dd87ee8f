//! Fixed-size worker pool for lists of experiments.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Worker count: `LANDAU_THREADS` when set to a positive integer, capped by
/// the available parallelism.
pub fn worker_count(jobs: usize) -> usize {
    let hw = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let cap = std::env::var("LANDAU_THREADS").ok().and_then(|s| s.trim().parse::<usize>().ok()).filter(|n| *n > 0);
    cap.map_or(hw, |c| c.min(hw)).min(jobs).max(1)
}

/// Applies `job` to every item on `threads` workers, keeping input order.
pub fn map<T: Sync, R: Send>(items: &[T], threads: usize, job: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = job(&items[i]);
                results.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    results.into_inner().expect("worker panicked").into_iter().map(|r| r.expect("every job ran")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_order() {
        let items: Vec<u64> = (0..50).collect();
        assert_eq!(map(&items, 4, |x| x * x), items.iter().map(|x| x * x).collect::<Vec<_>>());
    }

    #[test]
    fn at_least_one_worker() {
        assert!(worker_count(0) >= 1);
        assert!(worker_count(3) <= 3);
    }
}
