//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper evaluates independent elements, so the result does not depend on the
//! execution mode or thread schedule.

use serde::{Deserialize, Serialize};

/// How per-element work inside a solver is scheduled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is enabled, otherwise sequential.
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Below this many elements the parallel path is not worth the scheduling overhead.
const MIN_PAR_LEN: usize = 256;

/// `out[i] = f(i, &mut out[i])` for every element.
pub(crate) fn for_each_indexed<T, F>(exec: Execution, out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && out.len() >= MIN_PAR_LEN {
        use rayon::prelude::*;
        out.par_iter_mut().with_min_len(64).enumerate().for_each(|(i, x)| f(i, x));
        return;
    }
    let _ = exec;
    out.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

/// Fallible variant of [`for_each_indexed`]; returns the error of the lowest failing index.
pub(crate) fn try_for_each_indexed<T, E, F>(exec: Execution, out: &mut [T], f: F) -> Result<(), E>
where
    T: Send,
    E: Send,
    F: Fn(usize, &mut T) -> Result<(), E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && out.len() >= MIN_PAR_LEN {
        use rayon::prelude::*;
        let errs: Vec<(usize, E)> = out
            .par_iter_mut()
            .with_min_len(64)
            .enumerate()
            .filter_map(|(i, x)| f(i, x).err().map(|e| (i, e)))
            .collect();
        return match errs.into_iter().min_by_key(|(i, _)| *i) {
            Some((_, e)) => Err(e),
            None => Ok(()),
        };
    }
    let _ = exec;
    out.iter_mut().enumerate().try_for_each(|(i, x)| f(i, x))
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, U, F>(exec: Execution, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let mut a = vec![0.0f64; 5000];
        let mut b = a.clone();
        let f = |i: usize, x: &mut f64| *x = (i as f64).sqrt().sin();
        for_each_indexed(Execution::Sequential, &mut a, f);
        for_each_indexed(Execution::Parallel, &mut b, f);
        assert_eq!(a, b);
    }

    #[test]
    fn lowest_error_wins() {
        let mut a = vec![0u32; 4000];
        let r = try_for_each_indexed(Execution::Parallel, &mut a, |i, _| if i % 1000 == 999 { Err(i) } else { Ok(()) });
        assert_eq!(r, Err(999));
    }
}
