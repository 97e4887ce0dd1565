//! Gradient-driven re-inclusion of removed sites.
//!
//! A removed voxel site comes back when its gradient magnitude reaches the
//! inclusion threshold and at least one neighbor is kept. Each site brought
//! back can qualify its own neighbors, so the rule is applied until nothing
//! changes. The fixed point is the set of qualifying sites connected to the
//! kept set through qualifying sites, which is computed here by a
//! breadth-first flood fill seeded from the kept frontier.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::grid::{for_each_neighbor, Connectivity, Layer, ParameterStore};
use crate::importance::{check_unit, per_site, quantile, Scope};
use crate::render::GradientBuffer;

#[derive(Debug, Clone, PartialEq)]
pub struct ReincludeOutcome {
    pub threshold: f64,
    /// Re-included site indices, per layer.
    pub re_included: Vec<Vec<usize>>,
    /// Sweeps of the iterated rule that added at least one site (minimum 1).
    pub iterations: usize,
}

impl ReincludeOutcome {
    pub fn count(&self) -> usize {
        self.re_included.iter().map(Vec::len).sum()
    }
}

fn grad_magnitudes(layer: &Layer, grads: &[f64]) -> Vec<f64> {
    per_site(layer, |i| grads[i]).into_iter().map(f64::abs).collect()
}

/// The `delta` quantile of the gradient magnitudes of kept in-scope sites.
pub fn inclusion_threshold(
    grads: &GradientBuffer,
    store: &ParameterStore,
    delta: f64,
    scope: Scope,
) -> Result<f64> {
    check_unit("delta", delta)?;
    if grads.layers.len() != store.layers().len() {
        return Err(Error::ShapeMismatch("gradient buffer does not match the parameter store".into()));
    }
    let mut population = Vec::new();
    for (layer, g) in store.layers().iter().zip(&grads.layers) {
        if !scope.includes(layer) {
            continue;
        }
        if g.len() != layer.values().len() {
            return Err(Error::ShapeMismatch(format!("gradients for `{}` have the wrong length", layer.name())));
        }
        population.extend(
            grad_magnitudes(layer, g)
                .into_iter()
                .enumerate()
                .filter(|(s, _)| layer.is_kept(*s))
                .map(|(_, m)| m),
        );
    }
    if population.is_empty() {
        return Err(Error::NoKeptSites);
    }
    quantile(&population, delta)
}

/// A removed site qualifies when its gradient reaches the threshold. Zero
/// gradients never qualify.
#[inline]
fn qualifies(magnitude: f64, threshold: f64) -> bool {
    magnitude >= threshold && magnitude > 0.0
}

/// Brings back removed voxel sites that qualify by gradient and connect to
/// the kept set under `topo`. Re-included values restart at zero.
pub fn reinclude(
    store: &mut ParameterStore,
    grads: &GradientBuffer,
    threshold: f64,
    topo: Connectivity,
) -> ReincludeOutcome {
    let mut re_included = vec![Vec::new(); store.layers().len()];
    let mut iterations = 1;
    for (li, layer) in store.layers_mut().iter_mut().enumerate() {
        let Some(dims) = layer.dims() else { continue };
        let mags = grad_magnitudes(layer, &grads.layers[li]);
        let candidate: Vec<bool> = (0..layer.sites())
            .map(|s| !layer.is_kept(s) && qualifies(mags[s], threshold))
            .collect();

        // Level 1: candidates touching the kept set as it stands.
        let mut queued = vec![false; layer.sites()];
        let mut frontier = VecDeque::new();
        for s in (0..layer.sites()).filter(|&s| candidate[s]) {
            let mut touches = false;
            for_each_neighbor(dims, topo, s, |j| touches |= layer.is_kept(j));
            if touches {
                queued[s] = true;
                frontier.push_back((s, 1usize));
            }
        }
        let mut depth = 0;
        while let Some((s, level)) = frontier.pop_front() {
            depth = depth.max(level);
            layer.restore_site(s);
            re_included[li].push(s);
            for_each_neighbor(dims, topo, s, |j| {
                if candidate[j] && !queued[j] {
                    queued[j] = true;
                    frontier.push_back((j, level + 1));
                }
            });
        }
        re_included[li].sort_unstable();
        iterations = iterations.max(depth);
    }
    ReincludeOutcome {
        threshold,
        re_included,
        iterations,
    }
}

/// Neighbor-free rule for dense layers: every removed scalar whose gradient
/// reaches the threshold comes back, in one sweep.
pub fn reinclude_dense(store: &mut ParameterStore, grads: &GradientBuffer, threshold: f64) -> ReincludeOutcome {
    let mut re_included = vec![Vec::new(); store.layers().len()];
    for (li, layer) in store.layers_mut().iter_mut().enumerate() {
        if layer.is_voxel() {
            continue;
        }
        let g = &grads.layers[li];
        for (s, gs) in g.iter().enumerate().take(layer.sites()) {
            if !layer.is_kept(s) && qualifies(gs.abs(), threshold) {
                layer.restore_site(s);
                re_included[li].push(s);
            }
        }
    }
    ReincludeOutcome {
        threshold,
        re_included,
        iterations: 1,
    }
}
