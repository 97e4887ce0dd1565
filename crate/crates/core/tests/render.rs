mod common;

use common::{gradient_check, random_model, random_targets, rng};
use revox_core::metrics::mse;
use revox_core::render::{
    backward_rays, camera_targets, composite_weights, make_synthetic_scene, render_image, render_ray, Ray,
    RayTarget,
};
use revox_core::{Camera, RadianceModel, SceneShape, SceneSpec};

#[test]
fn gradients_match_finite_differences_on_small_model() {
    let mut r = rng(7);
    let mut model = random_model(&mut r, 4);
    while model.dims() != [4, 4, 4] {
        model = random_model(&mut r, 4);
    }
    let targets = random_targets(&mut r, 2);
    let worst = gradient_check(&model, &targets, 1e-3, 1e-8);
    assert!(worst <= 1e-4, "worst relative error {worst:e}");
}

#[test]
fn exact_fit_has_zero_loss_and_gradient() {
    let mut r = rng(3);
    let model = random_model(&mut r, 5);
    let mut targets = random_targets(&mut r, 16);
    for t in &mut targets {
        t.rgb = render_ray(&model, t.ray.origin, t.ray.dir).rgb;
    }
    let (loss, grads) = backward_rays(&model, &targets).unwrap();
    assert!(loss < 1e-24);
    assert!(grads.layers.iter().flatten().all(|g| g.abs() < 1e-9));
}

#[test]
fn loss_is_a_mean_over_rays() {
    let mut r = rng(11);
    let model = random_model(&mut r, 4);
    let targets = random_targets(&mut r, 5);
    let doubled: Vec<RayTarget> = targets.iter().chain(&targets).copied().collect();
    let (a, ga) = backward_rays(&model, &targets).unwrap();
    let (b, gb) = backward_rays(&model, &doubled).unwrap();
    assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
    for (x, y) in ga.layers.iter().flatten().zip(gb.layers.iter().flatten()) {
        assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-12));
    }
}

#[test]
fn compositing_weights_sum_to_one() {
    let mut r = rng(5);
    for _ in 0..20 {
        let model = random_model(&mut r, 6);
        for t in random_targets(&mut r, 10) {
            let (w, t_end) = composite_weights(&model, &t.ray);
            let sum: f64 = w.iter().sum::<f64>() + t_end;
            assert!((sum - 1.0).abs() < 1e-6, "sum {sum}");
            assert!(w.iter().all(|&x| x >= 0.0));
        }
    }
}

#[test]
fn homogeneous_medium_matches_beer_lambert() {
    // Constant raw density d gives sigma = softplus(d - 10) along the whole
    // chord; transmittance is exp(-sigma * chord) regardless of sampling.
    let d_raw = 10.5;
    let sigma = (1.0 + (d_raw - 10.0f64).exp()).ln();
    let model = RadianceModel::constant(6, d_raw, 0.0).unwrap();
    let cases = [
        ([-1.0, 0.5, 0.5], [1.0, 0.0, 0.0], 1.0),
        ([0.5, 0.5, 3.0], [0.0, 0.0, -1.0], 1.0),
        ([-1.0, -1.0, 0.5], [1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt(), 0.0], 2f64.sqrt()),
        ([0.3, -0.5, 0.2], [0.0, 1.0, 0.0], 1.0),
    ];
    for (origin, dir, chord) in cases {
        let out = render_ray(&model, origin, dir);
        let expect_t = (-sigma * chord).exp();
        assert!((out.transmittance - expect_t).abs() < 1e-12, "{} vs {}", out.transmittance, expect_t);
        // Color 0.5 everywhere over a white background.
        let expect = 0.5 * (1.0 - expect_t) + expect_t;
        assert!(out.rgb.iter().all(|c| (c - expect).abs() < 1e-12));
    }
}

#[test]
fn opaque_volume_shows_its_color_and_empty_volume_the_background() {
    let opaque = RadianceModel::constant(4, 40.0, 2.0).unwrap();
    let out = render_ray(&opaque, [0.5, 0.5, -1.0], [0.0, 0.0, 1.0]);
    let c = 1.0 / (1.0 + (-2.0f64).exp());
    assert!(out.transmittance < 1e-12);
    assert!(out.rgb.iter().all(|v| (v - c).abs() < 1e-9));

    let empty = RadianceModel::constant(4, 0.0, 2.0).unwrap().with_background([0.0; 3]).unwrap();
    let out = render_ray(&empty, [0.5, 0.5, -1.0], [0.0, 0.0, 1.0]);
    assert!(out.transmittance > 0.9999);
    assert!(out.rgb.iter().all(|v| *v < 1e-4));

    let miss = render_ray(&opaque, [0.5, 0.5, -1.0], [1.0, 0.0, 0.0]);
    assert_eq!((miss.rgb, miss.transmittance), ([1.0; 3], 1.0));
}

#[test]
fn removed_sites_render_as_empty_space() {
    let mut model = RadianceModel::constant(4, 30.0, 0.0).unwrap();
    let density = &mut model.store.layers_mut()[0];
    for s in 0..density.sites() {
        density.remove_site(s);
    }
    let out = render_ray(&model, [-1.0, 0.5, 0.5], [1.0, 0.0, 0.0]);
    assert!(out.transmittance > 0.9999);
}

#[test]
fn pixels_stay_in_unit_range() {
    let mut r = rng(9);
    for _ in 0..10 {
        let mut model = random_model(&mut r, 5);
        for v in model.store.layers_mut()[1].values_mut() {
            *v *= 20.0;
        }
        for t in random_targets(&mut r, 20) {
            let out = render_ray(&model, t.ray.origin, t.ray.dir);
            assert!(out.rgb.iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }
}

#[test]
fn synthetic_sphere_views_contain_the_object() {
    let spec = SceneSpec {
        n_views: 4,
        resolution: 64,
        ..SceneSpec::default()
    };
    let (model, cams) = make_synthetic_scene(&spec).unwrap();
    assert_eq!(cams.images.len(), 4);
    for img in &cams.images {
        assert_eq!(img.dims(), (64, 64));
        // The sphere is centered in every view and the corners see background.
        assert!(img.pixel(32, 32).iter().all(|&c| c < 0.95));
        assert!(img.pixel(0, 0).iter().all(|&c| c > 0.999));
    }
    let (_, again) = make_synthetic_scene(&spec).unwrap();
    assert_eq!(cams, again);
    let (_, two) = make_synthetic_scene(&SceneSpec { n_views: 2, ..spec }).unwrap();
    assert_eq!(two.len(), 2);
    assert_eq!(mse(&render_image(&model, &cams.cameras[0]), &cams.images[0]).unwrap(), 0.0);
}

#[test]
fn every_shape_builds() {
    for shape in [SceneShape::Sphere, SceneShape::Cube, SceneShape::TwoSpheres] {
        let spec = SceneSpec {
            shape,
            grid_n: 8,
            n_views: 2,
            resolution: 16,
            seed: 1,
        };
        let (_, cams) = make_synthetic_scene(&spec).unwrap();
        assert!(cams.images.iter().all(|img| img.data.iter().any(|&v| v < 0.99)));
    }
    assert!(make_synthetic_scene(&SceneSpec { grid_n: 7, ..SceneSpec::default() }).is_err());
    assert!(make_synthetic_scene(&SceneSpec { n_views: 1, ..SceneSpec::default() }).is_err());
}

#[test]
fn backward_is_deterministic_across_chunking() {
    let mut r = rng(21);
    let model = random_model(&mut r, 6);
    let targets = random_targets(&mut r, 700);
    let a = backward_rays(&model, &targets).unwrap();
    let b = backward_rays(&model, &targets).unwrap();
    assert_eq!(a, b);
}

#[test]
fn camera_targets_cover_every_pixel() {
    let cam = Camera {
        position: [0.5, -2.0, 0.5],
        look_at: [0.5; 3],
        up: [0.0, 0.0, 1.0],
        fov_deg: 40.0,
        width: 5,
        height: 3,
    };
    let spec = SceneSpec { grid_n: 8, n_views: 2, resolution: 8, ..SceneSpec::default() };
    let (_, cams) = make_synthetic_scene(&spec).unwrap();
    assert_eq!(camera_targets(&cams).len(), 2 * 64);
    let rays: Vec<Ray> = cam.rays().collect();
    assert_eq!(rays.len(), 15);
}
