//! Order-preserving batch map over independent work items.
//!
//! With the `parallel` feature the map runs on rayon; without it every mode
//! falls back to a sequential loop. Results are always in input order.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    #[default]
    Sequential,
    /// Global rayon pool.
    Parallel,
    /// Dedicated pool with this many threads.
    Threads(usize),
}

impl Parallelism {
    /// `--jobs` semantics: 0 or 1 is sequential.
    pub fn from_jobs(jobs: usize) -> Parallelism {
        if jobs <= 1 {
            Parallelism::Sequential
        } else {
            Parallelism::Threads(jobs)
        }
    }

    pub fn capped(self, max_in_flight: usize) -> Parallelism {
        match self {
            Parallelism::Threads(n) => Parallelism::from_jobs(n.min(max_in_flight)),
            Parallelism::Parallel if max_in_flight <= 1 => Parallelism::Sequential,
            other => other,
        }
    }
}

#[cfg(feature = "parallel")]
pub fn map<T, R, F>(items: &[T], mode: Parallelism, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    match mode {
        Parallelism::Sequential => items.iter().map(f).collect(),
        Parallelism::Parallel => items.par_iter().map(f).collect(),
        Parallelism::Threads(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(e) => {
                log::warn!("thread pool unavailable ({e}); running sequentially");
                items.iter().map(f).collect()
            }
        },
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, R, F>(items: &[T], _mode: Parallelism, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}
