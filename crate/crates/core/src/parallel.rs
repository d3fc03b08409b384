use rayon::prelude::*;

/// Evaluates `f(0..n)` and returns the results in index order.
///
/// `workers == 0` uses the global rayon pool; any other value runs on a
/// dedicated pool of that size. The output never depends on `workers`.
pub(crate) fn map_indexed<R, F>(n: usize, workers: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let run = || (0..n).into_par_iter().map(&f).collect::<Vec<R>>();
    if workers == 0 {
        run()
    } else {
        match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        }
    }
}
