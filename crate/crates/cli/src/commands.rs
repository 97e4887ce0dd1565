use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use revox_core::codec::{self, raw_f32_dump, EncodeOptions};
use revox_core::metrics::{evaluate, QualityReport};
use revox_core::render::{make_synthetic_scene, render_image};
use revox_core::scheduler::{self, compress};
use revox_core::train::{self, fit, OptimizerState};
use revox_core::{CameraSet, ParameterStore, RadianceModel, SceneSpec};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::{Command, Overrides, UsageError};

const HISTOGRAM_BINS: usize = 32;

/// Sidecar written next to every model file.
#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    scene: SceneSpec,
}

pub fn run(command: Command, o: &Overrides) -> Result<()> {
    let cfg = RunConfig::load(o.config.as_deref())?.apply(o)?;
    let out = o.out.clone().or_else(|| cfg.out.clone());
    match command {
        Command::Fit => cmd_fit(&cfg, out.unwrap_or_else(|| "model.rnrf".into())),
        Command::Compress { model } => cmd_compress(&cfg, &model, out.unwrap_or_else(|| "compressed".into())),
        Command::Eval { model } => cmd_eval(&cfg, &model),
        Command::Decode { model } => {
            let out = out.unwrap_or_else(|| model.with_extension("f32"));
            cmd_decode(&model, &out)
        }
        Command::Render { model, camera } => {
            let out = out.unwrap_or_else(|| format!("view_{camera}.png").into());
            cmd_render(&cfg, &model, camera, &out)
        }
        Command::Inspect { model } => cmd_inspect(&model),
    }
}

fn meta_path(model: &Path) -> PathBuf {
    model.with_extension("meta.json")
}

fn load_model(path: &Path) -> Result<RadianceModel> {
    let bytes = fs::read(path).with_context(|| format!("cannot read model {}", path.display()))?;
    let store = codec::decode(&bytes).with_context(|| format!("cannot decode {}", path.display()))?;
    Ok(RadianceModel::from_store(store)?)
}

fn save_model(path: &Path, store: &ParameterStore, opts: EncodeOptions, scene: SceneSpec) -> Result<u64> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let bytes = codec::encode(store, opts)?;
    fs::write(path, &bytes).with_context(|| format!("cannot write {}", path.display()))?;
    let meta = serde_json::to_string_pretty(&ModelMeta { scene })?;
    fs::write(meta_path(path), meta + "\n")?;
    Ok(bytes.len() as u64)
}

/// Warns when a model's sidecar says it was fit on a different scene.
fn check_scene(model: &Path, scene: &SceneSpec) {
    let Ok(text) = fs::read_to_string(meta_path(model)) else {
        return;
    };
    match serde_json::from_str::<ModelMeta>(&text) {
        Ok(meta) if meta.scene.seed != scene.seed => log::warn!(
            "{} was fit with scene seed {}, but the config uses seed {}",
            model.display(),
            meta.scene.seed,
            scene.seed
        ),
        Ok(meta) if meta.scene != *scene => log::warn!(
            "{} was fit on a different scene than the config describes",
            model.display()
        ),
        Ok(_) => {}
        Err(e) => log::warn!("ignoring unreadable {}: {e}", meta_path(model).display()),
    }
}

fn scene(cfg: &RunConfig) -> Result<CameraSet> {
    make_synthetic_scene(&cfg.scene)
        .map(|(_, cams)| cams)
        .map_err(|e| UsageError(e.to_string()).into())
}

fn cmd_fit(cfg: &RunConfig, out: PathBuf) -> Result<()> {
    let cams = scene(cfg)?;
    let (train_cams, _) = cams.train_val_split();
    let mut model = RadianceModel::constant(cfg.scene.grid_n, 0.0, 0.0)?;
    let mut state = OptimizerState::new(&model);
    let history = fit(&mut model, &train_cams, cfg.train.epochs, &cfg.train, &mut state, true)?;
    let size = save_model(&out, &model.store, EncodeOptions { quantize: false }, cfg.scene)?;
    let csv = out.with_extension("history.csv");
    train::write_history_csv(&history, BufWriter::new(File::create(&csv)?))?;
    let last = history.last().expect("at least one epoch");
    println!(
        "fit {} epochs: train psnr_db {:.3}, wrote {} ({size} bytes) and {}",
        last.epoch,
        last.train_psnr_db,
        out.display(),
        csv.display()
    );
    Ok(())
}

fn cmd_compress(cfg: &RunConfig, model_path: &Path, out_dir: PathBuf) -> Result<()> {
    let model = load_model(model_path)?;
    check_scene(model_path, &cfg.scene);
    let cams = scene(cfg)?;
    let (train_cams, val_cams) = cams.train_val_split();
    let result = compress(&model, &train_cams, &val_cams, &cfg.compress, &cfg.train)?;
    fs::create_dir_all(&out_dir)?;
    let opts = cfg.compress.encode_options();
    save_model(&out_dir.join("low.rnrf"), &result.low.store, opts, cfg.scene)?;
    save_model(&out_dir.join("high.rnrf"), &result.high.store, opts, cfg.scene)?;
    scheduler::write_history_csv(&result.history, BufWriter::new(File::create(out_dir.join("history.csv"))?))?;

    let raw = raw_f32_dump(&model.store).len() as u64;
    let baseline = evaluate(&model, &val_cams)?;
    let rows = [
        ("baseline", baseline.psnr_db, baseline.ssim, raw),
        ("low", result.low.quality.psnr_db, result.low.quality.ssim, result.low.size_bytes),
        ("high", result.high.quality.psnr_db, result.high.quality.ssim, result.high.size_bytes),
    ];
    let mut summary = String::from("checkpoint,psnr_db,ssim,size_bytes,ratio\n");
    println!("{:<10} {:>9} {:>7} {:>10} {:>7}", "checkpoint", "psnr_db", "ssim", "size_bytes", "ratio");
    for (name, psnr, ssim, size) in rows {
        let ratio = raw as f64 / size as f64;
        summary.push_str(&format!("{name},{psnr:.6},{ssim:.6},{size},{ratio:.4}\n"));
        println!("{name:<10} {psnr:>9.3} {ssim:>7.4} {size:>10} {ratio:>7.2}");
    }
    fs::write(out_dir.join("summary.csv"), summary)?;
    println!(
        "high: round {}, sparsity {:.4}; low: round {}; wrote {}",
        result.high.round,
        result.high.store.sparsity()?,
        result.low.round,
        out_dir.display()
    );
    Ok(())
}

fn print_quality(label: &str, q: &QualityReport) {
    println!("{label:<8} {:>9.4} {:>7.4}", q.psnr_db, q.ssim);
}

fn cmd_eval(cfg: &RunConfig, model_path: &Path) -> Result<()> {
    let model = load_model(model_path)?;
    check_scene(model_path, &cfg.scene);
    let cams = scene(cfg)?;
    let (train_cams, val_cams) = cams.train_val_split();
    println!("{:<8} {:>9} {:>7}", "split", "psnr_db", "ssim");
    print_quality("train", &evaluate(&model, &train_cams)?);
    print_quality("val", &evaluate(&model, &val_cams)?);
    let all = evaluate(&model, &cams)?;
    print_quality("all", &all);
    for (k, v) in all.per_view.iter().enumerate() {
        println!("{:<8} {:>9.4} {:>7.4}", format!("view{k}"), v.psnr_db, v.ssim);
    }
    Ok(())
}

fn cmd_decode(model_path: &Path, out: &Path) -> Result<()> {
    let bytes = fs::read(model_path).with_context(|| format!("cannot read model {}", model_path.display()))?;
    let store = codec::decode(&bytes).with_context(|| format!("cannot decode {}", model_path.display()))?;
    let dump = raw_f32_dump(&store);
    fs::write(out, &dump).with_context(|| format!("cannot write {}", out.display()))?;
    println!("wrote {} f32 values ({} bytes) to {}", dump.len() / 4, dump.len(), out.display());
    Ok(())
}

fn cmd_render(cfg: &RunConfig, model_path: &Path, camera: usize, out: &Path) -> Result<()> {
    let model = load_model(model_path)?;
    let cams = scene(cfg)?;
    let Some(cam) = cams.cameras.get(camera) else {
        return Err(UsageError(format!("camera index {camera} out of range (scene has {} views)", cams.len())).into());
    };
    render_image(&model, cam)
        .save(out)
        .with_context(|| format!("cannot write {}", out.display()))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_inspect(model_path: &Path) -> Result<()> {
    let bytes = fs::read(model_path).with_context(|| format!("cannot read model {}", model_path.display()))?;
    let store = codec::decode(&bytes).with_context(|| format!("cannot decode {}", model_path.display()))?;
    let mut out = std::io::stdout().lock();
    for layer in store.layers() {
        let kept: Vec<f64> = (0..layer.sites())
            .filter(|&s| layer.is_kept(s))
            .flat_map(|s| layer.site_values(s).to_vec())
            .collect();
        let shape = match layer.dims() {
            Some(d) => format!("voxel {}x{}x{}x{}", d[0], d[1], d[2], layer.channels()),
            None => format!("dense {}", layer.sites()),
        };
        writeln!(
            out,
            "layer {} ({shape}): occupancy {:.2}% ({}/{} sites), raw {} bytes",
            layer.name(),
            100.0 * layer.kept_count() as f64 / layer.sites() as f64,
            layer.kept_count(),
            layer.sites(),
            4 * layer.values().len()
        )?;
        if kept.is_empty() {
            writeln!(out, "  no kept values")?;
            continue;
        }
        let (lo, hi) = kept.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        writeln!(out, "  min {lo:.6} max {hi:.6}")?;
        let counts = histogram(&kept, lo, hi);
        let width = (hi - lo) / HISTOGRAM_BINS as f64;
        for (i, c) in counts.iter().enumerate() {
            writeln!(out, "  bin {i:>2} [{:>10.4}, {:>10.4}) {c}", lo + i as f64 * width, lo + (i + 1) as f64 * width)?;
        }
    }
    let report = codec::report(&store, bytes.len())?;
    writeln!(
        out,
        "total: {} file bytes, {} raw f32 bytes, ratio {:.2}x, sparsity {:.4}",
        report.encoded_bytes, report.raw_bytes, report.ratio, report.sparsity
    )?;
    Ok(())
}

/// Bin counts over `[lo, hi]`; the top edge falls in the last bin.
fn histogram(values: &[f64], lo: f64, hi: f64) -> [usize; HISTOGRAM_BINS] {
    let mut counts = [0; HISTOGRAM_BINS];
    let span = hi - lo;
    for &v in values {
        let bin = if span > 0.0 {
            (((v - lo) / span) * HISTOGRAM_BINS as f64) as usize
        } else {
            0
        };
        counts[bin.min(HISTOGRAM_BINS - 1)] += 1;
    }
    counts
}
