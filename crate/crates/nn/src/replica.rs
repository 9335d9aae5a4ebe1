//! Data-parallel gradient computation over independent graph replicas.

use bevclick_core::par::{self, Execution};

use crate::graph::Graph;
use crate::param::{Gradients, ParamSet};
use crate::NnError;

/// Run `step` on every item with its own graph and sum the losses and
/// gradients in item order, so the result does not depend on scheduling.
pub fn batch_gradients<T, F>(exec: Execution, params: &ParamSet, items: &[T], step: F) -> Result<(f64, Gradients), NnError>
where
    T: Sync,
    F: Fn(&mut Graph<'_>, &T) -> Result<(f64, Gradients), NnError> + Sync + Send,
{
    let results = par::map(exec, items, |item| {
        let mut g = Graph::new(params);
        step(&mut g, item)
    });
    let mut total = 0.0;
    let mut grads = Gradients::zeros_like(params);
    for r in results {
        let (loss, g) = r?;
        total += loss;
        grads.merge(&g);
    }
    Ok((total, grads))
}
