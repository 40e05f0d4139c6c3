//! Worker pool for replica fan-out.
//!
//! Results are always collected by replica index, so the thread count
//! changes wall time only.

use std::sync::OnceLock;

use rayon::{ThreadPool, ThreadPoolBuilder};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "DGFFTRAP_THREADS";

fn configured_threads() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

fn pool() -> &'static ThreadPool {
    static POOL: OnceLock<ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut b = ThreadPoolBuilder::new().thread_name(|i| format!("dgfftrap-{i}"));
        if let Some(n) = configured_threads() {
            b = b.num_threads(n);
        }
        b.build().expect("worker pool")
    })
}

/// Run `f` inside the shared pool; rayon iterators in `f` use its workers.
pub fn install<T: Send, F: FnOnce() -> T + Send>(f: F) -> T {
    pool().install(f)
}

pub fn threads() -> usize {
    pool().current_num_threads()
}
