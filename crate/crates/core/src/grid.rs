//! Parameter storage: named layers, voxel grids with keep-masks, and the
//! neighbor topology used when growing the kept set.
//!
//! Voxel layers are stored flat, x fastest, then y, then z, with channels
//! innermost: the value of channel `c` at `(x, y, z)` lives at
//! `((z * ny + y) * nx + x) * channels + c`. A voxel layer carries one mask
//! bit per spatial site shared by all of its channels; a dense layer carries
//! one bit per scalar.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    VoxelGrid3D { dims: [usize; 3], channels: usize },
    Dense { shape: Vec<usize> },
}

impl LayerKind {
    /// Number of maskable units: voxel sites, or scalars for dense layers.
    pub fn sites(&self) -> usize {
        match self {
            LayerKind::VoxelGrid3D { dims, .. } => dims.iter().product(),
            LayerKind::Dense { shape } => shape.iter().product(),
        }
    }

    /// Scalars per site.
    pub fn channels(&self) -> usize {
        match self {
            LayerKind::VoxelGrid3D { channels, .. } => *channels,
            LayerKind::Dense { .. } => 1,
        }
    }

    pub fn is_voxel(&self) -> bool {
        matches!(self, LayerKind::VoxelGrid3D { .. })
    }
}

/// Grid adjacency used by re-inclusion. Serialized as `6` or `26`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    /// Sites sharing a face.
    #[default]
    Face6,
    /// Sites sharing a face, an edge or a corner.
    Full26,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(n: u8) -> std::result::Result<Self, String> {
        match n {
            6 => Ok(Connectivity::Face6),
            26 => Ok(Connectivity::Full26),
            other => Err(format!("connectivity must be 6 or 26, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        c.max_neighbors() as u8
    }
}

impl Connectivity {
    pub fn offsets(self) -> &'static [[i32; 3]] {
        match self {
            Connectivity::Face6 => &FACE6,
            Connectivity::Full26 => &FULL26,
        }
    }

    pub fn max_neighbors(self) -> usize {
        self.offsets().len()
    }
}

const FACE6: [[i32; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

const FULL26: [[i32; 3]; 26] = {
    let mut out = [[0i32; 3]; 26];
    let mut n = 0;
    let mut dz = -1;
    while dz <= 1 {
        let mut dy = -1;
        while dy <= 1 {
            let mut dx = -1;
            while dx <= 1 {
                if !(dx == 0 && dy == 0 && dz == 0) {
                    out[n] = [dx, dy, dz];
                    n += 1;
                }
                dx += 1;
            }
            dy += 1;
        }
        dz += 1;
    }
    out
};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    name: String,
    kind: LayerKind,
    values: Vec<f64>,
    keep_mask: Vec<bool>,
}

impl Layer {
    pub fn new(name: impl Into<String>, kind: LayerKind, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if let LayerKind::VoxelGrid3D { dims, channels } = &kind {
            if dims.contains(&0) || *channels == 0 {
                return Err(Error::ShapeMismatch(format!(
                    "voxel layer `{name}` needs positive dims and channels, got {dims:?} x {channels}"
                )));
            }
        }
        let expected = kind.sites() * kind.channels();
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "layer `{name}` expects {expected} values, got {}",
                values.len()
            )));
        }
        let keep_mask = vec![true; kind.sites()];
        Ok(Self {
            name,
            kind,
            values,
            keep_mask,
        })
    }

    pub fn voxel(
        name: impl Into<String>,
        dims: [usize; 3],
        channels: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        Self::new(name, LayerKind::VoxelGrid3D { dims, channels }, values)
    }

    pub fn dense(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        Self::new(name, LayerKind::Dense { shape }, values)
    }

    /// Builds a layer with an explicit mask. Masked-out values are zeroed.
    pub fn with_mask(mut self, keep_mask: Vec<bool>) -> Result<Self> {
        if keep_mask.len() != self.sites() {
            return Err(Error::ShapeMismatch(format!(
                "layer `{}` has {} sites, mask has {}",
                self.name,
                self.sites(),
                keep_mask.len()
            )));
        }
        self.keep_mask = keep_mask;
        self.apply_mask();
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &LayerKind {
        &self.kind
    }

    pub fn is_voxel(&self) -> bool {
        self.kind.is_voxel()
    }

    pub fn dims(&self) -> Option<[usize; 3]> {
        match self.kind {
            LayerKind::VoxelGrid3D { dims, .. } => Some(dims),
            LayerKind::Dense { .. } => None,
        }
    }

    pub fn sites(&self) -> usize {
        self.keep_mask.len()
    }

    pub fn channels(&self) -> usize {
        self.kind.channels()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access to the raw values. Callers that write into masked-out
    /// sites must call [`Layer::apply_mask`] afterwards.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn keep_mask(&self) -> &[bool] {
        &self.keep_mask
    }

    pub fn is_kept(&self, site: usize) -> bool {
        self.keep_mask[site]
    }

    /// Values of one site, one entry per channel.
    pub fn site_values(&self, site: usize) -> &[f64] {
        let c = self.channels();
        &self.values[site * c..(site + 1) * c]
    }

    /// Marks `site` removed and zeroes its values.
    pub fn remove_site(&mut self, site: usize) {
        let c = self.channels();
        self.keep_mask[site] = false;
        self.values[site * c..(site + 1) * c].fill(0.0);
    }

    /// Marks `site` kept again. Its values restart at zero.
    pub fn restore_site(&mut self, site: usize) {
        self.keep_mask[site] = true;
    }

    pub fn kept_count(&self) -> usize {
        self.keep_mask.iter().filter(|&&k| k).count()
    }

    pub fn apply_mask(&mut self) {
        let c = self.channels();
        for (site, _) in self.keep_mask.iter().enumerate().filter(|(_, &k)| !k) {
            self.values[site * c..(site + 1) * c].fill(0.0);
        }
    }

    pub fn flat_index(&self, site: [usize; 3]) -> Result<usize> {
        let dims = self
            .dims()
            .ok_or_else(|| Error::NotVoxelLayer(self.name.clone()))?;
        if (0..3).any(|a| site[a] >= dims[a]) {
            return Err(Error::SiteOutOfBounds { site, dims });
        }
        Ok(site_index(dims, site))
    }
}

#[inline]
pub fn site_index(dims: [usize; 3], [x, y, z]: [usize; 3]) -> usize {
    (z * dims[1] + y) * dims[0] + x
}

#[inline]
pub fn site_coords(dims: [usize; 3], index: usize) -> [usize; 3] {
    let x = index % dims[0];
    let y = (index / dims[0]) % dims[1];
    let z = index / (dims[0] * dims[1]);
    [x, y, z]
}

/// Calls `f` with the flat index of every in-bounds neighbor of `index`.
#[inline]
pub(crate) fn for_each_neighbor(
    dims: [usize; 3],
    topo: Connectivity,
    index: usize,
    mut f: impl FnMut(usize),
) {
    let p = site_coords(dims, index);
    for off in topo.offsets() {
        let mut q = [0usize; 3];
        let mut inside = true;
        for a in 0..3 {
            let v = p[a] as i64 + off[a] as i64;
            if v < 0 || v >= dims[a] as i64 {
                inside = false;
                break;
            }
            q[a] = v as usize;
        }
        if inside {
            f(site_index(dims, q));
        }
    }
}

/// All in-bounds sites adjacent to `site` under `topo`.
pub fn neighbors(layer: &Layer, topo: Connectivity, site: [usize; 3]) -> Result<Vec<[usize; 3]>> {
    let index = layer.flat_index(site)?;
    let dims = layer.dims().expect("checked by flat_index");
    let mut out = Vec::with_capacity(topo.max_neighbors());
    for_each_neighbor(dims, topo, index, |j| out.push(site_coords(dims, j)));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore {
    layers: Vec<Layer>,
}

impl ParameterStore {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        for (i, layer) in layers.iter().enumerate() {
            if layers[..i].iter().any(|l| l.name == layer.name) {
                return Err(Error::DuplicateLayer(layer.name.clone()));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut Layer> {
        self.layers.iter_mut().find(|l| l.name == name)
    }

    pub fn total_sites(&self) -> usize {
        self.layers.iter().map(Layer::sites).sum()
    }

    pub fn total_scalars(&self) -> usize {
        self.layers.iter().map(|l| l.values.len()).sum()
    }

    pub fn kept_count(&self) -> usize {
        self.layers.iter().map(Layer::kept_count).sum()
    }

    pub fn removed_count(&self) -> usize {
        self.total_sites() - self.kept_count()
    }

    /// Fraction of sites removed.
    pub fn sparsity(&self) -> Result<f64> {
        let total = self.total_sites();
        if total == 0 {
            return Err(Error::EmptyStore);
        }
        Ok(self.removed_count() as f64 / total as f64)
    }

    /// Zeroes every masked-out site. Idempotent.
    pub fn apply_mask(&mut self) {
        for layer in &mut self.layers {
            layer.apply_mask();
        }
    }

    /// Copies the keep-masks of `other` onto `self` (same layout required)
    /// and zeroes the newly masked sites.
    pub fn copy_masks_from(&mut self, other: &ParameterStore) -> Result<()> {
        self.check_congruent(other)?;
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.keep_mask.clone_from(&src.keep_mask);
            dst.apply_mask();
        }
        Ok(())
    }

    pub(crate) fn check_congruent(&self, other: &ParameterStore) -> Result<()> {
        if self.layers.len() != other.layers.len()
            || self
                .layers
                .iter()
                .zip(&other.layers)
                .any(|(a, b)| a.kind != b.kind || a.name != b.name)
        {
            return Err(Error::ShapeMismatch(
                "parameter stores have different layouts".into(),
            ));
        }
        Ok(())
    }

    /// Errors on the first NaN or infinite value.
    pub fn check_finite(&self) -> Result<()> {
        for layer in &self.layers {
            if let Some(index) = layer.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    layer: layer.name.clone(),
                    index,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn grid(dims: [usize; 3], channels: usize) -> Layer {
        let n = dims.iter().product::<usize>() * channels;
        Layer::voxel("g", dims, channels, (0..n).map(|i| i as f64 + 1.0).collect()).unwrap()
    }

    #[test]
    fn face6_interior_has_six_axis_neighbors() {
        let layer = grid([3, 3, 3], 1);
        let got: BTreeSet<_> = neighbors(&layer, Connectivity::Face6, [1, 1, 1])
            .unwrap()
            .into_iter()
            .collect();
        let want: BTreeSet<_> = [
            [0, 1, 1],
            [2, 1, 1],
            [1, 0, 1],
            [1, 2, 1],
            [1, 1, 0],
            [1, 1, 2],
        ]
        .into_iter()
        .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn face6_corner_is_clipped() {
        let layer = grid([3, 3, 3], 1);
        let got: BTreeSet<_> = neighbors(&layer, Connectivity::Face6, [0, 0, 0])
            .unwrap()
            .into_iter()
            .collect();
        let want: BTreeSet<_> = [[1, 0, 0], [0, 1, 0], [0, 0, 1]].into_iter().collect();
        assert_eq!(got, want);
    }

    fn brute_force_neighbors(dims: [usize; 3], site: [usize; 3], full: bool) -> BTreeSet<[usize; 3]> {
        let mut out = BTreeSet::new();
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    if manhattan == 0 || (!full && manhattan != 1) {
                        continue;
                    }
                    let q = [site[0] as i64 + dx, site[1] as i64 + dy, site[2] as i64 + dz];
                    if (0..3).all(|a| q[a] >= 0 && q[a] < dims[a] as i64) {
                        out.insert([q[0] as usize, q[1] as usize, q[2] as usize]);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn full26_on_2cube_corner_sees_other_seven_corners() {
        let layer = grid([2, 2, 2], 1);
        let got: BTreeSet<_> = neighbors(&layer, Connectivity::Full26, [0, 0, 0])
            .unwrap()
            .into_iter()
            .collect();
        assert_eq!(got.len(), 7);
        assert_eq!(got, brute_force_neighbors([2, 2, 2], [0, 0, 0], true));
    }

    #[test]
    fn neighbors_match_brute_force_and_are_symmetric() {
        for n in 1usize..=5 {
            for dims in [[n, n, n], [n, n.div_ceil(2), 1 + n % 3]] {
                let layer = grid(dims, 1);
                for topo in [Connectivity::Face6, Connectivity::Full26] {
                    let full = topo == Connectivity::Full26;
                    let count: usize = dims.iter().product();
                    for i in 0..count {
                        let p = site_coords(dims, i);
                        let got: BTreeSet<_> =
                            neighbors(&layer, topo, p).unwrap().into_iter().collect();
                        assert_eq!(got, brute_force_neighbors(dims, p, full));
                        assert!(!got.contains(&p));
                        if !full && (0..3).all(|a| p[a] > 0 && p[a] + 1 < dims[a]) {
                            assert_eq!(got.len(), 6);
                        }
                        for q in &got {
                            let back = neighbors(&layer, topo, *q).unwrap();
                            assert!(back.contains(&p));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn neighbors_rejects_dense_and_out_of_bounds() {
        let dense = Layer::dense("mlp", vec![2, 2], vec![0.0; 4]).unwrap();
        assert!(matches!(
            neighbors(&dense, Connectivity::Face6, [0, 0, 0]),
            Err(Error::NotVoxelLayer(_))
        ));
        let layer = grid([3, 3, 3], 1);
        assert!(matches!(
            neighbors(&layer, Connectivity::Face6, [3, 0, 0]),
            Err(Error::SiteOutOfBounds { .. })
        ));
    }

    #[test]
    fn apply_mask_identity_zero_and_mixed() {
        let original = ParameterStore::new(vec![grid([2, 2, 2], 2)]).unwrap();
        let mut store = original.clone();
        store.apply_mask();
        assert_eq!(store, original);

        let mut store = original.clone();
        for s in 0..8 {
            store.layers_mut()[0].keep_mask[s] = false;
        }
        store.apply_mask();
        assert!(store.layers()[0].values().iter().all(|&v| v == 0.0));

        let mask = [true, false, true, true, false, false, true, false];
        let mut store = original.clone();
        store.layers_mut()[0].keep_mask.copy_from_slice(&mask);
        store.apply_mask();
        let before = original.layers()[0].values();
        let after = store.layers()[0].values();
        for (i, (&b, &a)) in before.iter().zip(after).enumerate() {
            let expect = if mask[i / 2] { b } else { 0.0 };
            assert_eq!(a, expect);
        }
        let once = store.clone();
        store.apply_mask();
        assert_eq!(store, once);
    }

    #[test]
    fn sparsity_counts_removed_sites() {
        let mut store = ParameterStore::new(vec![grid([2, 2, 2], 1)]).unwrap();
        assert_eq!(store.sparsity().unwrap(), 0.0);
        for s in [1, 4, 6] {
            store.layers_mut()[0].remove_site(s);
        }
        assert_eq!(store.sparsity().unwrap(), 0.375);
        assert_eq!(store.kept_count() + store.removed_count(), store.total_sites());
        for s in 0..8 {
            store.layers_mut()[0].remove_site(s);
        }
        assert_eq!(store.sparsity().unwrap(), 1.0);
        assert!(matches!(
            ParameterStore::default().sparsity(),
            Err(Error::EmptyStore)
        ));
    }

    #[test]
    fn layer_shapes_are_validated() {
        assert!(Layer::voxel("a", [2, 2, 2], 1, vec![0.0; 7]).is_err());
        assert!(Layer::voxel("a", [0, 2, 2], 1, vec![]).is_err());
        let a = grid([1, 1, 1], 1);
        assert!(matches!(
            ParameterStore::new(vec![a.clone(), a]),
            Err(Error::DuplicateLayer(_))
        ));
    }
}
