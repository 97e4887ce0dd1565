use super::camera::Ray;
use super::model::{RadianceModel, MIX_COLS};
use super::{sigmoid, softplus, Camera, CameraSet, Image};
use crate::error::{Error, Result};
use crate::par;

/// Rays per work item. Gradient partial sums are formed per chunk and then
/// added in chunk order, which keeps results independent of thread count.
const RAY_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayColor {
    pub rgb: [f64; 3],
    /// Transmittance left after the last sample.
    pub transmittance: f64,
}

/// A ray and the color it should render to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayTarget {
    pub ray: Ray,
    pub rgb: [f64; 3],
}

/// Per-layer gradients, laid out like the model's parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    pub layers: Vec<Vec<f64>>,
}

impl GradientBuffer {
    pub fn zeros_like(model: &RadianceModel) -> Self {
        Self {
            layers: model
                .store
                .layers()
                .iter()
                .map(|l| vec![0.0; l.values().len()])
                .collect(),
        }
    }

    fn add(&mut self, other: &GradientBuffer) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().flatten().all(|g| g.is_finite())
    }
}

#[derive(Debug, Clone, Copy)]
struct Lookup {
    corners: [usize; 8],
    weights: [f64; 8],
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    lookup: Lookup,
    raw_density: f64,
    len: f64,
    alpha: f64,
    trans: f64,
    feat: [f64; 3],
    color: [f64; 3],
}

/// Borrowed view of a model for marching.
struct Field<'a> {
    density: &'a [f64],
    color: &'a [f64],
    mix: &'a [f64],
    dims: [usize; 3],
    step: f64,
    shift: f64,
    background: [f64; 3],
}

impl<'a> Field<'a> {
    fn new(model: &'a RadianceModel) -> Self {
        Self {
            density: model.density().values(),
            color: model.color().values(),
            mix: model.color_mix().values(),
            dims: model.dims(),
            step: model.step_size(),
            shift: model.density_shift(),
            background: model.background(),
        }
    }

    /// Trilinear weights over the 8 voxel centers around `p`. Positions beyond
    /// the outermost centers clamp to the border.
    fn lookup(&self, p: [f64; 3]) -> Lookup {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let n = self.dims[a];
            let u = (p[a] * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = (u.floor() as usize).min(n.saturating_sub(2));
            lo[a] = i0;
            hi[a] = (i0 + 1).min(n - 1);
            frac[a] = u - i0 as f64;
        }
        let mut corners = [0usize; 8];
        let mut weights = [0.0f64; 8];
        for k in 0..8 {
            let pick = [k & 1 != 0, k & 2 != 0, k & 4 != 0];
            let mut w = 1.0;
            let mut c = [0usize; 3];
            for a in 0..3 {
                if pick[a] {
                    c[a] = hi[a];
                    w *= frac[a];
                } else {
                    c[a] = lo[a];
                    w *= 1.0 - frac[a];
                }
            }
            corners[k] = (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0];
            weights[k] = w;
        }
        Lookup { corners, weights }
    }

    fn mix(&self, feat: [f64; 3]) -> [f64; 3] {
        let m = self.mix;
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &m[i * MIX_COLS..(i + 1) * MIX_COLS];
            *o = sigmoid(row[0] * feat[0] + row[1] * feat[1] + row[2] * feat[2] + row[3]);
        }
        out
    }

    /// Marches `ray` through the unit cube. Samples are recorded when
    /// `samples` is provided.
    fn march(&self, ray: &Ray, mut samples: Option<&mut Vec<Sample>>) -> RayColor {
        if let Some(s) = samples.as_deref_mut() {
            s.clear();
        }
        let Some((t_near, t_far)) = intersect_unit_cube(ray) else {
            return RayColor {
                rgb: self.background,
                transmittance: 1.0,
            };
        };
        let mut rgb = [0.0; 3];
        let mut trans = 1.0;
        let mut t0 = t_near;
        while t0 < t_far {
            let len = self.step.min(t_far - t0);
            let t = t0 + 0.5 * len;
            t0 += self.step;
            let p = [
                ray.origin[0] + t * ray.dir[0],
                ray.origin[1] + t * ray.dir[1],
                ray.origin[2] + t * ray.dir[2],
            ];
            let lookup = self.lookup(p);
            let mut raw_density = 0.0;
            let mut feat = [0.0; 3];
            for (&c, &w) in lookup.corners.iter().zip(&lookup.weights) {
                raw_density += w * self.density[c];
                let col = &self.color[c * 3..c * 3 + 3];
                feat[0] += w * col[0];
                feat[1] += w * col[1];
                feat[2] += w * col[2];
            }
            let sigma = softplus(raw_density + self.shift);
            let alpha = -(-sigma * len).exp_m1();
            let color = self.mix(feat);
            let weight = trans * alpha;
            for ch in 0..3 {
                rgb[ch] += weight * color[ch];
            }
            if let Some(s) = samples.as_deref_mut() {
                s.push(Sample {
                    lookup,
                    raw_density,
                    len,
                    alpha,
                    trans,
                    feat,
                    color,
                });
            }
            trans *= 1.0 - alpha;
        }
        for (c, b) in rgb.iter_mut().zip(self.background) {
            *c += trans * b;
        }
        RayColor {
            rgb,
            transmittance: trans,
        }
    }

    /// Accumulates `d loss / d params` for one marched ray given
    /// `d loss / d rgb`.
    fn backprop(&self, samples: &[Sample], d_rgb: [f64; 3], grads: &mut GradientBuffer) {
        let [g_density, g_color, g_mix] = &mut grads.layers[..] else {
            unreachable!("radiance models have three layers")
        };
        let mut behind = self.background;
        for s in samples.iter().rev() {
            let weight = s.trans * s.alpha;
            let mut d_alpha = 0.0;
            let mut d_z = [0.0; 3];
            for ch in 0..3 {
                d_alpha += d_rgb[ch] * s.trans * (s.color[ch] - behind[ch]);
                d_z[ch] = d_rgb[ch] * weight * s.color[ch] * (1.0 - s.color[ch]);
                behind[ch] = s.alpha * s.color[ch] + (1.0 - s.alpha) * behind[ch];
            }
            let d_sigma = d_alpha * s.len * (1.0 - s.alpha);
            let d_raw = d_sigma * sigmoid(s.raw_density + self.shift);

            let mut d_feat = [0.0; 3];
            for i in 0..3 {
                let row = &mut g_mix[i * MIX_COLS..(i + 1) * MIX_COLS];
                for j in 0..3 {
                    row[j] += d_z[i] * s.feat[j];
                    d_feat[j] += self.mix[i * MIX_COLS + j] * d_z[i];
                }
                row[3] += d_z[i];
            }
            for (&c, &w) in s.lookup.corners.iter().zip(&s.lookup.weights) {
                g_density[c] += w * d_raw;
                let gc = &mut g_color[c * 3..c * 3 + 3];
                gc[0] += w * d_feat[0];
                gc[1] += w * d_feat[1];
                gc[2] += w * d_feat[2];
            }
        }
    }
}

/// Entry and exit distances of `ray` through `[0, 1]^3`, clipped to `t >= 0`.
fn intersect_unit_cube(ray: &Ray) -> Option<(f64, f64)> {
    let mut t_near = 0.0f64;
    let mut t_far = f64::INFINITY;
    for a in 0..3 {
        let o = ray.origin[a];
        let d = ray.dir[a];
        if d.abs() < 1e-15 {
            if !(0.0..=1.0).contains(&o) {
                return None;
            }
            continue;
        }
        let t0 = (0.0 - o) / d;
        let t1 = (1.0 - o) / d;
        t_near = t_near.max(t0.min(t1));
        t_far = t_far.min(t0.max(t1));
    }
    (t_far > t_near).then_some((t_near, t_far))
}

pub fn render_ray(model: &RadianceModel, origin: [f64; 3], dir: [f64; 3]) -> RayColor {
    Field::new(model).march(&Ray { origin, dir }, None)
}

/// Compositing weights `T_k * alpha_k` of every sample along `ray`, and the
/// transmittance left at the end.
pub fn composite_weights(model: &RadianceModel, ray: &Ray) -> (Vec<f64>, f64) {
    let field = Field::new(model);
    let mut samples = Vec::new();
    let out = field.march(ray, Some(&mut samples));
    (
        samples.iter().map(|s| s.trans * s.alpha).collect(),
        out.transmittance,
    )
}

pub fn render_image(model: &RadianceModel, camera: &Camera) -> Image {
    let field = Field::new(model);
    let rows = par::map_range(camera.height, |y| {
        let mut row = Vec::with_capacity(camera.width * 3);
        for x in 0..camera.width {
            row.extend(field.march(&camera.ray(x, y), None).rgb);
        }
        row
    });
    Image {
        width: camera.width,
        height: camera.height,
        data: rows.concat(),
    }
}

pub fn render_images(model: &RadianceModel, cameras: &CameraSet) -> Vec<Image> {
    cameras
        .cameras
        .iter()
        .map(|c| render_image(model, c))
        .collect()
}

/// Every pixel ray of every camera paired with its ground-truth color.
pub fn camera_targets(cameras: &CameraSet) -> Vec<RayTarget> {
    let mut out = Vec::new();
    for (cam, img) in cameras.cameras.iter().zip(&cameras.images) {
        for y in 0..cam.height {
            for x in 0..cam.width {
                out.push(RayTarget {
                    ray: cam.ray(x, y),
                    rgb: img.pixel(x, y),
                });
            }
        }
    }
    out
}

/// Mean squared error over all rays and channels, and its gradient with
/// respect to every parameter (removed sites included).
pub fn backward_rays(model: &RadianceModel, targets: &[RayTarget]) -> Result<(f64, GradientBuffer)> {
    model.store.check_finite()?;
    if targets.is_empty() {
        return Err(Error::EmptyInput);
    }
    let field = Field::new(model);
    let scale = 2.0 / (3 * targets.len()) as f64;
    let partials = par::map_chunks(targets, RAY_CHUNK, |chunk| {
        let mut grads = GradientBuffer::zeros_like(model);
        let mut samples = Vec::new();
        let mut sq = 0.0;
        for target in chunk {
            let out = field.march(&target.ray, Some(&mut samples));
            let diff: [f64; 3] = std::array::from_fn(|ch| out.rgb[ch] - target.rgb[ch]);
            sq += diff.iter().map(|d| d * d).sum::<f64>();
            let d_rgb = diff.map(|d| scale * d);
            field.backprop(&samples, d_rgb, &mut grads);
        }
        (sq, grads)
    });
    let mut total = GradientBuffer::zeros_like(model);
    let mut sq = 0.0;
    for (s, g) in &partials {
        sq += s;
        total.add(g);
    }
    let loss = sq / (3 * targets.len()) as f64;
    if !loss.is_finite() || !total.is_finite() {
        return Err(Error::NonFiniteLoss {
            context: format!("backward pass over {} rays", targets.len()),
        });
    }
    Ok((loss, total))
}

/// [`backward_rays`] over every pixel of every camera.
pub fn backward(model: &RadianceModel, cameras: &CameraSet) -> Result<(f64, GradientBuffer)> {
    for (cam, img) in cameras.cameras.iter().zip(&cameras.images) {
        if img.dims() != (cam.width, cam.height) {
            return Err(Error::DimensionMismatch(img.dims(), (cam.width, cam.height)));
        }
    }
    backward_rays(model, &camera_targets(cameras))
}
