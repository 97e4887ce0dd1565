//! Generators and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use revox_core::render::{backward_rays, Ray, RayTarget};
use revox_core::{Layer, ParameterStore, RadianceModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random model with grid edges in `2..=max_n`; raw densities straddle the
/// density shift so both thin and opaque regions occur.
pub fn random_model(rng: &mut ChaCha8Rng, max_n: usize) -> RadianceModel {
    let dims = [0; 3].map(|_| rng.random_range(2..=max_n));
    let sites = dims.iter().product::<usize>();
    let density = (0..sites).map(|_| rng.random_range(6.0..14.0)).collect();
    let color = (0..sites * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut model = RadianceModel::from_grids(dims, density, color).unwrap();
    let mix = model.store.layers_mut()[2].values_mut();
    for v in mix.iter_mut() {
        *v += rng.random_range(-0.3..0.3);
    }
    model
}

fn unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [0; 3].map(|_| rng.random_range(-1.0..1.0));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return v.map(|c| c / n);
        }
    }
}

/// Rays from a sphere around the cube aimed at random interior points, with
/// random target colors.
pub fn random_targets(rng: &mut ChaCha8Rng, n: usize) -> Vec<RayTarget> {
    (0..n)
        .map(|_| {
            let u = unit(rng);
            let origin = u.map(|c| 0.5 + 2.0 * c);
            let aim = [0; 3].map(|_| rng.random_range(0.2..0.8));
            let d = [aim[0] - origin[0], aim[1] - origin[1], aim[2] - origin[2]];
            let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            RayTarget {
                ray: Ray {
                    origin,
                    dir: d.map(|c| c / len),
                },
                rgb: [0; 3].map(|_| rng.random_range(0.0..1.0)),
            }
        })
        .collect()
}

/// Worst relative error between analytic gradients and central differences
/// over every parameter, with an absolute floor on the denominator.
pub fn gradient_check(model: &RadianceModel, targets: &[RayTarget], h: f64, floor: f64) -> f64 {
    let (_, grads) = backward_rays(model, targets).unwrap();
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for (li, layer) in model.store.layers().iter().enumerate() {
        for i in 0..layer.values().len() {
            let v = layer.values()[i];
            probe.store.layers_mut()[li].values_mut()[i] = v + h;
            let up = backward_rays(&probe, targets).unwrap().0;
            probe.store.layers_mut()[li].values_mut()[i] = v - h;
            let down = backward_rays(&probe, targets).unwrap().0;
            probe.store.layers_mut()[li].values_mut()[i] = v;
            let fd = (up - down) / (2.0 * h);
            let a = grads.layers[li][i];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(floor));
        }
    }
    worst
}

/// Sites of a single-layer selection whose score falls strictly below the
/// nearest-rank `gamma` quantile, found by sorting.
pub fn removal_oracle(scores: &[f64], kept: &[bool], gamma: f64) -> BTreeSet<usize> {
    let mut pop: Vec<f64> = scores
        .iter()
        .zip(kept)
        .filter(|(_, &k)| k)
        .map(|(s, _)| s.abs())
        .collect();
    if pop.is_empty() || gamma == 0.0 {
        return BTreeSet::new();
    }
    pop.sort_by(f64::total_cmp);
    let rank = ((gamma * pop.len() as f64) - 1e-9 * pop.len() as f64).ceil().max(1.0) as usize;
    let t = pop[rank.min(pop.len()) - 1];
    (0..scores.len())
        .filter(|&i| kept[i] && scores[i].abs() < t)
        .collect()
}

/// Qualifying removed sites reachable from the kept set through qualifying
/// sites, by plain graph search over explicit neighbor lists.
pub fn reachability_oracle(layer: &Layer, qualifies: &[bool], offsets: &[[i64; 3]]) -> BTreeSet<usize> {
    let dims = layer.dims().unwrap();
    let idx = |x: i64, y: i64, z: i64| (x + dims[0] as i64 * (y + dims[1] as i64 * z)) as usize;
    let mut seen: BTreeSet<usize> = BTreeSet::new();
    let mut queue: VecDeque<usize> = (0..layer.sites()).filter(|&s| layer.is_kept(s)).collect();
    let mut visited: Vec<bool> = (0..layer.sites()).map(|s| layer.is_kept(s)).collect();
    while let Some(s) = queue.pop_front() {
        let (x, y, z) = (
            (s % dims[0]) as i64,
            ((s / dims[0]) % dims[1]) as i64,
            (s / (dims[0] * dims[1])) as i64,
        );
        for o in offsets {
            let (nx, ny, nz) = (x + o[0], y + o[1], z + o[2]);
            if nx < 0 || ny < 0 || nz < 0 || nx >= dims[0] as i64 || ny >= dims[1] as i64 || nz >= dims[2] as i64 {
                continue;
            }
            let j = idx(nx, ny, nz);
            if !visited[j] && qualifies[j] {
                visited[j] = true;
                seen.insert(j);
                queue.push_back(j);
            }
        }
    }
    seen
}

pub fn face_offsets() -> Vec<[i64; 3]> {
    vec![[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]
}

pub fn full_offsets() -> Vec<[i64; 3]> {
    let mut v = Vec::new();
    for z in -1..=1 {
        for y in -1..=1 {
            for x in -1..=1 {
                if (x, y, z) != (0, 0, 0) {
                    v.push([x, y, z]);
                }
            }
        }
    }
    v
}

pub fn single_voxel_store(dims: [usize; 3], channels: usize, values: Vec<f64>, mask: Vec<bool>) -> ParameterStore {
    let layer = Layer::voxel("g", dims, channels, values).unwrap().with_mask(mask).unwrap();
    ParameterStore::new(vec![layer]).unwrap()
}
