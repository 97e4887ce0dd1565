use crate::error::{Error, Result};
use crate::grid::{Layer, LayerKind, ParameterStore};

pub const DENSITY: &str = "density";
pub const COLOR: &str = "color";
pub const COLOR_MIX: &str = "color_mix";

/// Columns of the color mix layer: a 3x3 matrix followed by a bias column.
pub const MIX_COLS: usize = 4;

/// Added to the interpolated raw density before softplus, so a zeroed
/// (removed) density site renders as empty space.
pub const DEFAULT_DENSITY_SHIFT: f64 = -10.0;

pub const WHITE: [f64; 3] = [1.0, 1.0, 1.0];

/// A radiance field on the unit cube `[0, 1]^3`.
///
/// The parameter store always holds three layers, in this order:
/// `density` (voxel grid, 1 channel), `color` (voxel grid, 3 channels, same
/// dims) and `color_mix` (dense 3x4, identity matrix plus zero bias by
/// default). Grid samples sit at voxel centers `(i + 0.5) / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceModel {
    pub store: ParameterStore,
    step_size: f64,
    density_shift: f64,
    background: [f64; 3],
}

impl RadianceModel {
    pub fn new(
        store: ParameterStore,
        step_size: f64,
        density_shift: f64,
        background: [f64; 3],
    ) -> Result<Self> {
        let layers = store.layers();
        let layout_err = |msg: &str| Err(Error::ShapeMismatch(format!("radiance model: {msg}")));
        if layers.len() != 3 {
            return layout_err("expected density, color and color_mix layers");
        }
        let dims = match layers[0].kind() {
            LayerKind::VoxelGrid3D { dims, channels: 1 } if layers[0].name() == DENSITY => *dims,
            _ => return layout_err("layer 0 must be a 1-channel voxel grid named `density`"),
        };
        match layers[1].kind() {
            LayerKind::VoxelGrid3D { dims: d, channels: 3 } if *d == dims && layers[1].name() == COLOR => {}
            _ => return layout_err("layer 1 must be a 3-channel voxel grid named `color` matching density dims"),
        }
        match layers[2].kind() {
            LayerKind::Dense { shape } if shape[..] == [3, MIX_COLS] && layers[2].name() == COLOR_MIX => {}
            _ => return layout_err("layer 2 must be a dense 3x4 layer named `color_mix`"),
        }
        let min_edge = dims.iter().map(|&n| 1.0 / n as f64).fold(f64::INFINITY, f64::min);
        if !(step_size > 0.0 && step_size <= min_edge + 1e-12) {
            return Err(Error::Config(format!(
                "step size {step_size} must lie in (0, {min_edge}]"
            )));
        }
        if background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Config("background must lie in [0, 1]".into()));
        }
        Ok(Self {
            store,
            step_size,
            density_shift,
            background,
        })
    }

    /// Builds a model from raw grid values with an identity color mix, the
    /// default density shift, white background and a step of half a voxel.
    pub fn from_grids(dims: [usize; 3], density: Vec<f64>, color: Vec<f64>) -> Result<Self> {
        let store = ParameterStore::new(vec![
            Layer::voxel(DENSITY, dims, 1, density)?,
            Layer::voxel(COLOR, dims, 3, color)?,
            Layer::dense(COLOR_MIX, vec![3, MIX_COLS], identity_mix())?,
        ])?;
        let step = 0.5 / *dims.iter().max().unwrap() as f64;
        Self::new(store, step, DEFAULT_DENSITY_SHIFT, WHITE)
    }

    /// Wraps a decoded store with the default rendering configuration.
    pub fn from_store(store: ParameterStore) -> Result<Self> {
        let n = match store.layers().first().and_then(Layer::dims) {
            Some(dims) => *dims.iter().max().unwrap(),
            None => return Err(Error::ShapeMismatch("radiance model: first layer must be a voxel grid".into())),
        };
        Self::new(store, 0.5 / n as f64, DEFAULT_DENSITY_SHIFT, WHITE)
    }

    /// A cubic grid filled with constant raw values.
    pub fn constant(n: usize, density_raw: f64, color_raw: f64) -> Result<Self> {
        let sites = n * n * n;
        Self::from_grids([n; 3], vec![density_raw; sites], vec![color_raw; sites * 3])
    }

    /// Same configuration, different parameters.
    pub fn with_store(&self, store: ParameterStore) -> Result<Self> {
        Self::new(store, self.step_size, self.density_shift, self.background)
    }

    pub fn with_step_size(self, step_size: f64) -> Result<Self> {
        Self::new(self.store, step_size, self.density_shift, self.background)
    }

    pub fn with_density_shift(mut self, shift: f64) -> Self {
        self.density_shift = shift;
        self
    }

    pub fn with_background(self, background: [f64; 3]) -> Result<Self> {
        Self::new(self.store, self.step_size, self.density_shift, background)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.store.layers()[0].dims().expect("validated layout")
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn density_shift(&self) -> f64 {
        self.density_shift
    }

    pub fn background(&self) -> [f64; 3] {
        self.background
    }

    pub fn density(&self) -> &Layer {
        &self.store.layers()[0]
    }

    pub fn color(&self) -> &Layer {
        &self.store.layers()[1]
    }

    pub fn color_mix(&self) -> &Layer {
        &self.store.layers()[2]
    }
}

pub(crate) fn identity_mix() -> Vec<f64> {
    let mut m = vec![0.0; 3 * MIX_COLS];
    for i in 0..3 {
        m[i * MIX_COLS + i] = 1.0;
    }
    m
}
