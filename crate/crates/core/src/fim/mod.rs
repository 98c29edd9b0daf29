//! Component-wise Fisher information.
//!
//! A trainable layer's parameters are split into components: for a dense
//! layer, the weights feeding one output unit plus that unit's bias; for a
//! convolution, one output channel's bias and kernel slice. Each component
//! gets its own Fisher block
//!
//! ```text
//! F_g = sum_p g_p^T g_p        (g_p: sample p's gradient restricted to g)
//! ```
//!
//! and the preconditioned update is `u_g = d_g (F_g + gamma I)^-1`, where `d`
//! is the batch-mean gradient. Cross-component blocks are treated as zero, so
//! the layer's Fisher is block diagonal and every block is solved on its own.

mod blocks;
mod groups;
mod oracle;

pub use blocks::{
    component_fim, component_fim_with, damped_solve, damped_solve_with, kernel_damped_solve,
    ComponentFimBlocks, DAMPING_RETRIES,
};
pub use groups::{make_groups, GroupIndexMap};
pub use oracle::{full_fim_oracle, full_gradient_rows, param_offsets, MAX_ORACLE_PARAMS};

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Where independent per-group work runs.
///
/// Every group is computed by the same sequential code whichever variant is
/// used, so results do not depend on the thread count.
#[derive(Clone, Default)]
pub enum Executor {
    #[default]
    Serial,
    Pool(Arc<rayon::ThreadPool>),
}

impl Executor {
    /// `threads <= 1` gives [`Executor::Serial`].
    pub fn with_threads(threads: usize) -> Result<Self> {
        if threads <= 1 {
            return Ok(Executor::Serial);
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Internal(format!("cannot start worker pool: {e}")))?;
        Ok(Executor::Pool(Arc::new(pool)))
    }

    pub fn threads(&self) -> usize {
        match self {
            Executor::Serial => 1,
            Executor::Pool(p) => p.current_num_threads(),
        }
    }

    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Executor::Serial => (0..n).map(f).collect(),
            Executor::Pool(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
        }
    }
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Executor::Serial => f.write_str("Serial"),
            Executor::Pool(p) => write!(f, "Pool({} threads)", p.current_num_threads()),
        }
    }
}
