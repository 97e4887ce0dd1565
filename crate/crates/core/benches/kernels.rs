use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use revox_core::codec::{encode, EncodeOptions};
use revox_core::reinclude::{inclusion_threshold, reinclude};
use revox_core::render::{backward_rays, camera_targets, make_synthetic_scene, render_image, SceneSpec};
use revox_core::scheduler::gradient_snapshot;
use revox_core::{Connectivity, Scope};

fn scene() -> (revox_core::RadianceModel, revox_core::CameraSet) {
    make_synthetic_scene(&SceneSpec {
        resolution: 32,
        n_views: 4,
        ..SceneSpec::default()
    })
    .unwrap()
}

/// Runs `f` on a rayon pool with `threads` workers. With the `parallel`
/// feature off everything is sequential and the pool is never used.
#[cfg(feature = "parallel")]
fn on_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[cfg(not(feature = "parallel"))]
fn on_pool<R: Send>(_threads: usize, f: impl FnOnce() -> R + Send) -> R {
    f()
}

fn pools() -> Vec<(&'static str, usize)> {
    let mut v = vec![("sequential", 1)];
    if cfg!(feature = "parallel") {
        v.push(("parallel", 0));
    }
    v
}

fn bench_render(c: &mut Criterion) {
    let (model, cams) = scene();
    let mut group = c.benchmark_group("render_image_32px");
    for (label, threads) in pools() {
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            b.iter(|| on_pool(threads, || render_image(&model, &cams.cameras[0])))
        });
    }
    group.finish();
}

fn bench_backward(c: &mut Criterion) {
    let (model, cams) = scene();
    let targets: Vec<_> = camera_targets(&cams).into_iter().take(4096).collect();
    let mut group = c.benchmark_group("backward_4096_rays");
    for (label, threads) in pools() {
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            b.iter(|| on_pool(threads, || backward_rays(&model, &targets).unwrap()))
        });
    }
    group.finish();
}

fn bench_reinclude_and_codec(c: &mut Criterion) {
    let (model, cams) = scene();
    let grads = gradient_snapshot(&model, &cams, 2048, 0).unwrap();
    let mut pruned = model.store.clone();
    for layer in pruned.layers_mut().iter_mut().filter(|l| l.is_voxel()) {
        for s in (0..layer.sites()).filter(|s| s % 3 != 0) {
            layer.remove_site(s);
        }
    }
    let t_inc = inclusion_threshold(&grads, &pruned, 0.5, Scope::VoxelsOnly).unwrap();
    c.bench_function("reinclude_16cube", |b| {
        b.iter(|| {
            let mut s = pruned.clone();
            reinclude(&mut s, &grads, t_inc, Connectivity::Face6)
        })
    });
    c.bench_function("encode_16cube", |b| {
        b.iter(|| encode(&pruned, EncodeOptions::default()).unwrap())
    });
}

criterion_group!(benches, bench_render, bench_backward, bench_reinclude_and_codec);
criterion_main!(benches);
