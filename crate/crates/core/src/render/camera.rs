use super::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    /// Unit length.
    pub dir: [f64; 3],
}

/// Pinhole camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    pub up: [f64; 3],
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Ray through the center of pixel `(px, py)`, `py = 0` being the top row.
    pub fn ray(&self, px: usize, py: usize) -> Ray {
        let forward = normalize(sub(self.look_at, self.position));
        let right = normalize(cross(forward, self.up));
        let up = cross(right, forward);
        let tan = (self.fov_deg.to_radians() * 0.5).tan();
        let aspect = self.width as f64 / self.height as f64;
        let u = ((px as f64 + 0.5) / self.width as f64 * 2.0 - 1.0) * tan * aspect;
        let v = (1.0 - (py as f64 + 0.5) / self.height as f64 * 2.0) * tan;
        let dir = normalize([
            forward[0] + u * right[0] + v * up[0],
            forward[1] + u * right[1] + v * up[1],
            forward[2] + u * right[2] + v * up[2],
        ]);
        Ray {
            origin: self.position,
            dir,
        }
    }

    /// All pixel rays in row-major order.
    pub fn rays(&self) -> impl Iterator<Item = Ray> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| self.ray(x, y)))
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Cameras with their ground-truth images.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraSet {
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
}

impl CameraSet {
    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    /// Splits off every view whose index is selected by `is_val`.
    pub fn split(&self, is_val: impl Fn(usize) -> bool) -> (CameraSet, CameraSet) {
        let mut train = CameraSet {
            cameras: vec![],
            images: vec![],
        };
        let mut val = train.clone();
        for (i, (cam, img)) in self.cameras.iter().zip(&self.images).enumerate() {
            let dst = if is_val(i) { &mut val } else { &mut train };
            dst.cameras.push(cam.clone());
            dst.images.push(img.clone());
        }
        (train, val)
    }

    /// Holds out every tenth view (at least one) for validation.
    pub fn train_val_split(&self) -> (CameraSet, CameraSet) {
        let n = self.len();
        let n_val = ((n as f64 * 0.1).round() as usize).clamp(1, n.saturating_sub(1).max(1));
        let stride = n / n_val;
        self.split(|i| i % stride == stride - 1 && i / stride < n_val)
    }
}

#[inline]
pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}
