//! Differentiable emission-absorption renderer over a voxel density grid and
//! an RGB color grid.
//!
//! Grid values are interpolated trilinearly and activated afterwards: density
//! through a shifted softplus, color through a small affine mix followed by a
//! sigmoid. Rays are marched with a fixed step inside the unit cube and
//! composited front to back over a constant background.

mod camera;
mod image;
mod model;
mod ray;
mod scene;

pub use camera::{Camera, CameraSet, Ray};
pub use image::Image;
pub use model::{
    RadianceModel, COLOR, COLOR_MIX, DEFAULT_DENSITY_SHIFT, DENSITY, MIX_COLS, WHITE,
};
pub use ray::{
    backward, backward_rays, camera_targets, composite_weights, render_image, render_images,
    render_ray, GradientBuffer, RayColor, RayTarget,
};
pub use scene::{make_synthetic_scene, SceneShape, SceneSpec};

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
