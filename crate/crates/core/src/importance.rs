//! First-order importance scores and the removal step.
//!
//! The importance of a scalar is the first-order Taylor estimate of the loss
//! change caused by zeroing it, `g * w`. Voxel layers are pruned per site, so
//! a site's score is `sum_c |g_c * w_c|` over its channels. Scores are divided
//! by their layer's maximum magnitude before a single global quantile picks
//! the removal threshold, and sites strictly below it are removed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Layer, ParameterStore};
use crate::par;
use crate::render::GradientBuffer;

/// Which layers take part in removal.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    #[default]
    #[serde(rename = "voxels")]
    VoxelsOnly,
    #[serde(rename = "all")]
    AllLayers,
}

impl Scope {
    pub fn includes(self, layer: &Layer) -> bool {
        match self {
            Scope::VoxelsOnly => layer.is_voxel(),
            Scope::AllLayers => true,
        }
    }
}

/// Per-site scores for every in-scope layer (`None` for the others).
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceScores {
    pub scope: Scope,
    pub raw: Vec<Option<Vec<f64>>>,
    /// Set by [`layer_normalize`].
    pub normalized: Option<Vec<Option<Vec<f64>>>>,
}

impl ImportanceScores {
    /// Normalized scores when available, raw otherwise.
    pub fn selection(&self) -> &[Option<Vec<f64>>] {
        self.normalized.as_deref().unwrap_or(&self.raw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemovalOutcome {
    /// Sites scoring strictly below this were removed.
    pub threshold: f64,
    /// Newly removed site indices, per layer.
    pub newly_removed: Vec<Vec<usize>>,
    pub kept_before: usize,
    pub kept_after: usize,
}

impl RemovalOutcome {
    pub fn removed_count(&self) -> usize {
        self.newly_removed.iter().map(Vec::len).sum()
    }
}

pub(crate) fn check_unit(name: &'static str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::OutOfUnitRange { name, value });
    }
    Ok(())
}

/// Nearest-rank quantile: the `ceil(q * n)`-th smallest value for `q > 0`.
///
/// `q = 0` returns `-inf`, so a strict `< threshold` test selects nothing.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    check_unit("q", q)?;
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if q == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let n = values.len();
    // Guard against q * n landing a hair above an integer.
    let rank = ((q * n as f64) - 1e-9 * n as f64).ceil().clamp(1.0, n as f64) as usize;
    let mut buf = values.to_vec();
    let (_, kth, _) = buf.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Ok(*kth)
}

fn check_grads(store: &ParameterStore, grads: &GradientBuffer) -> Result<()> {
    if grads.layers.len() != store.layers().len()
        || store
            .layers()
            .iter()
            .zip(&grads.layers)
            .any(|(l, g)| l.values().len() != g.len())
    {
        return Err(Error::ShapeMismatch(
            "gradient buffer does not match the parameter store".into(),
        ));
    }
    Ok(())
}

/// Reduces a per-scalar quantity to one value per maskable site: voxel sites
/// sum `per_scalar(..).abs()` over channels, dense layers keep the signed value.
pub(crate) fn per_site(layer: &Layer, per_scalar: impl Fn(usize) -> f64) -> Vec<f64> {
    if layer.is_voxel() {
        let c = layer.channels();
        (0..layer.sites())
            .map(|s| (0..c).map(|k| per_scalar(s * c + k).abs()).sum())
            .collect()
    } else {
        (0..layer.sites()).map(per_scalar).collect()
    }
}

/// First-order loss change `g * w` for every in-scope site.
pub fn taylor_scores(
    store: &ParameterStore,
    grads: &GradientBuffer,
    scope: Scope,
) -> Result<ImportanceScores> {
    check_grads(store, grads)?;
    let raw = par::map_range(store.layers().len(), |li| {
        let layer = &store.layers()[li];
        scope.includes(layer).then(|| {
            let (w, g) = (layer.values(), &grads.layers[li]);
            per_site(layer, |i| g[i] * w[i])
        })
    });
    Ok(ImportanceScores {
        scope,
        raw,
        normalized: None,
    })
}

/// Divides each layer's scores by that layer's largest magnitude. A layer
/// whose scores are all zero stays all zero.
pub fn layer_normalize(mut scores: ImportanceScores) -> ImportanceScores {
    let normalized = scores
        .raw
        .iter()
        .map(|layer| {
            layer.as_ref().map(|s| {
                let max = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if max == 0.0 {
                    vec![0.0; s.len()]
                } else {
                    s.iter().map(|v| v / max).collect()
                }
            })
        })
        .collect();
    scores.normalized = Some(normalized);
    scores
}

/// Removes kept sites whose score magnitude is below the `gamma` quantile of
/// the kept in-scope scores. Ties at the threshold are kept.
pub fn remove(store: &mut ParameterStore, scores: &ImportanceScores, gamma: f64) -> Result<RemovalOutcome> {
    check_unit("gamma", gamma)?;
    if scores.scope == Scope::AllLayers && scores.normalized.is_none() {
        return Err(Error::Config(
            "all-layer removal needs layer-normalized scores".into(),
        ));
    }
    remove_by(store, scores.selection(), gamma)
}

/// Magnitude pruning: per-site score `sum_c |w_c|`, no normalization.
pub fn magnitude_remove(store: &mut ParameterStore, gamma: f64, scope: Scope) -> Result<RemovalOutcome> {
    check_unit("gamma", gamma)?;
    let scores: Vec<Option<Vec<f64>>> = store
        .layers()
        .iter()
        .map(|l| {
            scope.includes(l).then(|| {
                let w = l.values();
                per_site(l, |i| w[i].abs())
            })
        })
        .collect();
    remove_by(store, &scores, gamma)
}

fn remove_by(store: &mut ParameterStore, scores: &[Option<Vec<f64>>], gamma: f64) -> Result<RemovalOutcome> {
    if scores.len() != store.layers().len() {
        return Err(Error::ShapeMismatch("scores do not match the parameter store".into()));
    }
    for (layer, s) in store.layers().iter().zip(scores) {
        if s.as_ref().is_some_and(|s| s.len() != layer.sites()) {
            return Err(Error::ShapeMismatch(format!(
                "scores for `{}` have the wrong length",
                layer.name()
            )));
        }
    }
    let kept_before = store.kept_count();
    let population: Vec<f64> = store
        .layers()
        .iter()
        .zip(scores)
        .filter_map(|(layer, s)| s.as_ref().map(|s| (layer, s)))
        .flat_map(|(layer, s)| {
            s.iter()
                .enumerate()
                .filter(|(i, _)| layer.is_kept(*i))
                .map(|(_, v)| v.abs())
        })
        .collect();
    let threshold = if population.is_empty() {
        f64::NEG_INFINITY
    } else {
        quantile(&population, gamma)?
    };
    let mut newly_removed = vec![Vec::new(); scores.len()];
    for ((layer, s), out) in store.layers_mut().iter_mut().zip(scores).zip(&mut newly_removed) {
        let Some(s) = s else { continue };
        for (site, v) in s.iter().enumerate() {
            if layer.is_kept(site) && v.abs() < threshold {
                layer.remove_site(site);
                out.push(site);
            }
        }
    }
    Ok(RemovalOutcome {
        threshold,
        newly_removed,
        kept_before,
        kept_after: store.kept_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_1d(values: &[f64]) -> ParameterStore {
        ParameterStore::new(vec![Layer::voxel("g", [values.len(), 1, 1], 1, values.to_vec()).unwrap()]).unwrap()
    }

    fn grads_for(store: &ParameterStore, g: &[f64]) -> GradientBuffer {
        assert_eq!(store.layers().len(), 1);
        GradientBuffer {
            layers: vec![g.to_vec()],
        }
    }

    #[test]
    fn taylor_score_is_gradient_times_weight() {
        let store = ParameterStore::new(vec![Layer::dense("d", vec![3], vec![0.5, 0.0, 3.0]).unwrap()]).unwrap();
        let s = taylor_scores(&store, &grads_for(&store, &[2.0, 7.0, 0.0]), Scope::AllLayers).unwrap();
        assert_eq!(s.raw[0].as_deref().unwrap(), &[1.0, 0.0, 0.0]);
        let out_of_scope = taylor_scores(&store, &grads_for(&store, &[2.0, 7.0, 0.0]), Scope::VoxelsOnly).unwrap();
        assert!(out_of_scope.raw[0].is_none());
    }

    #[test]
    fn voxel_sites_sum_channel_magnitudes() {
        let layer = Layer::voxel("c", [2, 1, 1], 2, vec![1.0, -2.0, 0.5, 0.5]).unwrap();
        let store = ParameterStore::new(vec![layer]).unwrap();
        let g = GradientBuffer {
            layers: vec![vec![3.0, 1.0, -4.0, 2.0]],
        };
        let s = taylor_scores(&store, &g, Scope::VoxelsOnly).unwrap();
        assert_eq!(s.raw[0].as_deref().unwrap(), &[5.0, 3.0]);
    }

    #[test]
    fn taylor_rejects_mismatched_grads() {
        let store = store_1d(&[1.0, 2.0]);
        assert!(matches!(
            taylor_scores(&store, &grads_for(&store, &[1.0]), Scope::VoxelsOnly),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn normalization_divides_by_layer_max() {
        let scores = ImportanceScores {
            scope: Scope::AllLayers,
            raw: vec![Some(vec![2.0, -4.0, 1.0]), Some(vec![0.0, 0.0]), None, Some(vec![0.1, 0.3])],
            normalized: None,
        };
        let n = layer_normalize(scores).normalized.unwrap();
        assert_eq!(n[0].as_deref().unwrap(), &[0.5, -1.0, 0.25]);
        assert_eq!(n[1].as_deref().unwrap(), &[0.0, 0.0]);
        assert!(n[2].is_none());
        let last = n[3].as_deref().unwrap();
        assert!((last[0] - 1.0 / 3.0).abs() < 1e-15 && last[1] == 1.0);
    }

    #[test]
    fn quantile_nearest_rank() {
        assert_eq!(quantile(&[3.0, 1.0, 4.0, 2.0], 0.5).unwrap(), 2.0);
        assert_eq!(quantile(&[3.0, 1.0, 4.0, 2.0], 1.0).unwrap(), 4.0);
        assert_eq!(quantile(&[3.0, 1.0, 4.0, 2.0], 0.0).unwrap(), f64::NEG_INFINITY);
        assert_eq!(quantile(&[3.0, 1.0, 4.0, 2.0], 0.01).unwrap(), 1.0);
        let tenths: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(quantile(&tenths, 0.7).unwrap(), 7.0);
        assert!(matches!(quantile(&[], 0.5), Err(Error::EmptyInput)));
        assert!(matches!(quantile(&[1.0], 1.5), Err(Error::OutOfUnitRange { .. })));
    }

    #[test]
    fn remove_gamma_edges() {
        let scores = [0.3, 0.9, 0.1, 0.5, 0.7, 0.2, 0.8, 0.4];
        let mut store = store_1d(&[1.0; 8]);
        let s = ImportanceScores {
            scope: Scope::VoxelsOnly,
            raw: vec![Some(scores.to_vec())],
            normalized: None,
        };
        assert_eq!(remove(&mut store, &s, 0.0).unwrap().removed_count(), 0);

        let out = remove(&mut store, &s, 0.5).unwrap();
        let mut got = out.newly_removed[0].clone();
        got.sort();
        // T = 4th smallest = 0.4, which is itself kept.
        assert_eq!(out.threshold, 0.4);
        assert_eq!(got, vec![0, 2, 5]);
        assert_eq!((out.kept_before, out.kept_after), (8, 5));
        assert!(store.layers()[0].values().iter().enumerate().all(|(i, &v)| (v == 0.0) == got.contains(&i)));

        let out = remove(&mut store, &s, 1.0).unwrap();
        assert_eq!(out.threshold, 0.9);
        assert_eq!(store.layers()[0].keep_mask().iter().filter(|&&k| k).count(), 1);
        assert!(store.layers()[0].is_kept(1));
        assert!(matches!(remove(&mut store, &s, 1.1), Err(Error::OutOfUnitRange { .. })));
    }

    #[test]
    fn all_layer_removal_requires_normalized_scores() {
        let mut store = store_1d(&[1.0; 2]);
        let s = ImportanceScores {
            scope: Scope::AllLayers,
            raw: vec![Some(vec![1.0, 2.0])],
            normalized: None,
        };
        assert!(remove(&mut store, &s, 0.5).is_err());
        assert!(remove(&mut store, &layer_normalize(s), 0.5).is_ok());
    }

    #[test]
    fn magnitude_remove_basics() {
        let mut store = ParameterStore::new(vec![Layer::dense("d", vec![2], vec![0.1, 0.9]).unwrap()]).unwrap();
        let out = magnitude_remove(&mut store, 1.0, Scope::AllLayers).unwrap();
        assert_eq!(out.newly_removed[0], vec![0]);

        let mut store = ParameterStore::new(vec![Layer::dense("d", vec![4], vec![0.5; 4]).unwrap()]).unwrap();
        let out = magnitude_remove(&mut store, 0.5, Scope::AllLayers).unwrap();
        assert_eq!(out.removed_count(), 0);
    }
}
