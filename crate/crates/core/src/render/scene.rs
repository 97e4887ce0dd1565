use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::camera::{normalize, Camera, CameraSet};
use super::model::RadianceModel;
use super::render_images;
use crate::error::{Error, Result};

/// Raw density inside the reference shape (before the density shift).
const INSIDE_RAW: f64 = 25.0;
/// Raw density outside the reference shape.
const OUTSIDE_RAW: f64 = -40.0;
const CAMERA_DISTANCE: f64 = 2.4;
const CAMERA_FOV_DEG: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SceneShape {
    #[default]
    Sphere,
    Cube,
    TwoSpheres,
}

impl SceneShape {
    fn contains(self, p: [f64; 3]) -> bool {
        let dist = |c: [f64; 3]| {
            ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt()
        };
        match self {
            SceneShape::Sphere => dist([0.5; 3]) <= 0.3,
            SceneShape::Cube => p.iter().all(|&v| (0.3..=0.7).contains(&v)),
            SceneShape::TwoSpheres => {
                dist([0.33, 0.5, 0.45]) <= 0.18 || dist([0.68, 0.5, 0.58]) <= 0.15
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub shape: SceneShape,
    pub grid_n: usize,
    pub n_views: usize,
    /// Image width and height in pixels.
    pub resolution: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            shape: SceneShape::Sphere,
            grid_n: 16,
            n_views: 20,
            resolution: 48,
            seed: 0,
        }
    }
}

/// Builds the reference model for `spec` and renders ground-truth views of
/// it from cameras spread around the unit cube.
pub fn make_synthetic_scene(spec: &SceneSpec) -> Result<(RadianceModel, CameraSet)> {
    if spec.grid_n < 8 {
        return Err(Error::Config(format!("grid_n = {} must be >= 8", spec.grid_n)));
    }
    if spec.n_views < 2 {
        return Err(Error::Config(format!("n_views = {} must be >= 2", spec.n_views)));
    }
    if spec.resolution == 0 {
        return Err(Error::Config("resolution must be positive".into()));
    }
    let n = spec.grid_n;
    let mut density = Vec::with_capacity(n * n * n);
    let mut color = Vec::with_capacity(n * n * n * 3);
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let p = [x, y, z].map(|i| (i as f64 + 0.5) / n as f64);
                density.push(if spec.shape.contains(p) {
                    INSIDE_RAW
                } else {
                    OUTSIDE_RAW
                });
                for c in p {
                    color.push(logit(0.15 + 0.7 * c));
                }
            }
        }
    }
    let model = RadianceModel::from_grids([n; 3], density, color)?;
    let cameras = orbit_cameras(spec.n_views, spec.resolution, spec.seed);
    let images = render_images(
        &model,
        &CameraSet {
            cameras: cameras.clone(),
            images: vec![],
        },
    );
    Ok((model, CameraSet { cameras, images }))
}

/// Cameras on a sphere around the cube center, alternating elevation, with
/// a seeded azimuth jitter.
fn orbit_cameras(n_views: usize, resolution: usize, seed: u64) -> Vec<Camera> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let center = [0.5; 3];
    (0..n_views)
        .map(|k| {
            let jitter: f64 = rng.random_range(-0.15..0.15);
            let azimuth = phase + std::f64::consts::TAU * k as f64 / n_views as f64 + jitter;
            let elevation: f64 = match k % 3 {
                0 => 0.5,
                1 => -0.25,
                _ => 0.15,
            } + rng.random_range(-0.1..0.1);
            let dir = normalize([
                elevation.cos() * azimuth.cos(),
                elevation.cos() * azimuth.sin(),
                elevation.sin(),
            ]);
            Camera {
                position: [
                    center[0] + CAMERA_DISTANCE * dir[0],
                    center[1] + CAMERA_DISTANCE * dir[1],
                    center[2] + CAMERA_DISTANCE * dir[2],
                ],
                look_at: center,
                up: [0.0, 0.0, 1.0],
                fov_deg: CAMERA_FOV_DEG,
                width: resolution,
                height: resolution,
            }
        })
        .collect()
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
