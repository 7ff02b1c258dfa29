/// Execution mode for the data-parallel inner loops (episode generation,
/// per-clip gradient evaluation, metric evaluation, planner rollouts).
/// Results are collected in input order, so both modes produce identical
/// output bytes. Without the `parallel` feature, `Parallel` degrades to
/// sequential execution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Exec {
    #[default]
    Parallel,
    Sequential,
}

#[cfg(feature = "parallel")]
pub fn map_indexed<U: Send>(exec: Exec, n: usize, f: impl Fn(usize) -> U + Sync) -> Vec<U> {
    use rayon::prelude::*;
    match exec {
        Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
        Exec::Sequential => (0..n).map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<U: Send>(_exec: Exec, n: usize, f: impl Fn(usize) -> U + Sync) -> Vec<U> {
    (0..n).map(f).collect()
}

pub fn map_slice<'a, T: Sync, U: Send>(
    exec: Exec,
    items: &'a [T],
    f: impl Fn(&'a T) -> U + Sync,
) -> Vec<U> {
    map_indexed(exec, items.len(), |i| f(&items[i]))
}
