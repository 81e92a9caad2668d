//! Order-preserving parallel map over replica blocks.

use rayon::prelude::*;

use crate::error::Result;

/// Evaluate `f(0..count)` in parallel and return the results in index
/// order, so that downstream reductions do not depend on scheduling.
pub fn map_indexed<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    (0..count).into_par_iter().map(f).collect()
}
