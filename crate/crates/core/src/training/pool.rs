use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use crate::error::Result;

/// Runs `job(0..jobs)` on at most `workers` threads and returns the results
/// in job order. The first error (by job index) is returned.
pub fn run_pool<T, F>(jobs: usize, workers: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = workers.clamp(1, jobs.max(1));
    if workers == 1 {
        return (0..jobs).map(&job).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..jobs).map(|_| None).collect());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs {
                    break;
                }
                let r = job(i);
                slots.lock().expect("pool results")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("pool results")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}
