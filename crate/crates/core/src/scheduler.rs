//! The compression loop.
//!
//! Each round fine-tunes the model for one epoch, takes one gradient
//! snapshot on a fixed ray minibatch, removes the lowest-importance sites,
//! re-includes removed sites that carry a large gradient next to the kept
//! set, and scores the result on held-out views exactly as it would be
//! stored. The loop stops at the first round whose validation PSNR falls
//! more than `delta_t` below the starting model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{self, EncodeOptions};
use crate::error::{Error, Result};
use crate::grid::{Connectivity, ParameterStore};
use crate::importance::{check_unit, layer_normalize, remove, taylor_scores, Scope};
use crate::metrics::{evaluate, QualityReport};
use crate::reinclude::{inclusion_threshold, reinclude, reinclude_dense};
use crate::render::{backward_rays, camera_targets, CameraSet, GradientBuffer, RadianceModel, RayTarget};
use crate::train::{fine_tune_one_epoch, OptimizerState, TrainOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressionConfig {
    /// Fraction of kept in-scope sites tentatively removed per round.
    pub gamma: f64,
    /// Quantile level of the re-inclusion gradient threshold.
    pub delta: f64,
    /// Largest tolerated validation PSNR drop, in dB.
    pub delta_t: f64,
    pub scope: Scope,
    pub connectivity: Connectivity,
    pub reinclude: bool,
    pub quantize: bool,
    pub max_rounds: usize,
    /// Rays in the fixed minibatch used for importance and re-inclusion.
    pub snapshot_rays: usize,
    pub seed: u64,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            delta: 0.5,
            delta_t: 1.0,
            scope: Scope::VoxelsOnly,
            connectivity: Connectivity::Face6,
            reinclude: true,
            quantize: true,
            max_rounds: 20,
            snapshot_rays: 8192,
            seed: 0,
        }
    }
}

impl CompressionConfig {
    pub fn validate(&self) -> Result<()> {
        check_unit("gamma", self.gamma)?;
        check_unit("delta", self.delta)?;
        if self.delta_t.is_nan() || self.delta_t <= 0.0 {
            return Err(Error::Config(format!("delta_t = {} must be > 0", self.delta_t)));
        }
        if self.max_rounds == 0 {
            return Err(Error::Config("max_rounds must be >= 1".into()));
        }
        if self.snapshot_rays == 0 {
            return Err(Error::Config("snapshot_rays must be >= 1".into()));
        }
        Ok(())
    }

    pub fn encode_options(&self) -> EncodeOptions {
        EncodeOptions {
            quantize: self.quantize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub sparsity: f64,
    pub removed: usize,
    pub re_included: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub size_bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub round: usize,
    pub store: ParameterStore,
    /// Quality of the stored (encoded then decoded) model on validation views.
    pub quality: QualityReport,
    pub size_bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionResult {
    pub baseline_psnr_db: f64,
    /// Highest validation PSNR seen.
    pub low: Checkpoint,
    /// Last state before the stop criterion fired.
    pub high: Checkpoint,
    pub history: Vec<RoundRecord>,
}

/// Seeded sample (with replacement) of `n_rays` training rays.
pub fn snapshot_targets(cameras: &CameraSet, n_rays: usize, seed: u64) -> Vec<RayTarget> {
    let all = camera_targets(cameras);
    if all.is_empty() {
        return all;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005E_ED0F_6AD5);
    (0..n_rays).map(|_| all[rng.random_range(0..all.len())]).collect()
}

/// Gradient of the mean squared error over a seeded ray minibatch.
pub fn gradient_snapshot(model: &RadianceModel, cameras: &CameraSet, n_rays: usize, seed: u64) -> Result<GradientBuffer> {
    if n_rays == 0 {
        return Err(Error::Config("n_rays must be >= 1".into()));
    }
    Ok(backward_rays(model, &snapshot_targets(cameras, n_rays, seed))?.1)
}

/// Encodes and decodes `model` the way a checkpoint would be stored.
pub fn stored_form(model: &RadianceModel, opts: EncodeOptions) -> Result<(RadianceModel, u64)> {
    let bytes = codec::encode(&model.store, opts)?;
    let decoded = codec::decode(&bytes)?;
    Ok((model.with_store(decoded)?, bytes.len() as u64))
}

struct RoundCounts {
    removed: usize,
    re_included: usize,
}

/// REMOVE then (optionally) RE-INCLUDE on one gradient snapshot.
fn prune_step(
    model: &mut RadianceModel,
    snapshot: &[RayTarget],
    cfg: &CompressionConfig,
    gamma: f64,
    with_reinclude: bool,
) -> Result<RoundCounts> {
    let (_, grads) = backward_rays(model, snapshot)?;
    let scores = layer_normalize(taylor_scores(&model.store, &grads, cfg.scope)?);
    let removal = remove(&mut model.store, &scores, gamma)?;
    let mut re_included = 0;
    if with_reinclude {
        match inclusion_threshold(&grads, &model.store, cfg.delta, cfg.scope) {
            Ok(t_inc) => {
                re_included += reinclude(&mut model.store, &grads, t_inc, cfg.connectivity).count();
                if cfg.scope == Scope::AllLayers {
                    re_included += reinclude_dense(&mut model.store, &grads, t_inc).count();
                }
            }
            Err(Error::NoKeptSites) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(RoundCounts {
        removed: removal.removed_count(),
        re_included,
    })
}

/// Runs the compression loop on a pre-trained `model`.
pub fn compress(
    model: &RadianceModel,
    train: &CameraSet,
    val: &CameraSet,
    cfg: &CompressionConfig,
    opts: &TrainOptions,
) -> Result<CompressionResult> {
    cfg.validate()?;
    let encode_opts = cfg.encode_options();
    let baseline_psnr_db = evaluate(model, val)?.psnr_db;
    let floor = baseline_psnr_db - cfg.delta_t;
    if floor.is_nan() || floor <= 0.0 {
        return Err(Error::Config(format!(
            "baseline PSNR {baseline_psnr_db:.3} dB leaves no room for a {} dB drop",
            cfg.delta_t
        )));
    }
    let snapshot = snapshot_targets(train, cfg.snapshot_rays, cfg.seed);
    let mut opts = opts.clone();
    opts.seed = cfg.seed;

    let checkpoint = |round: usize, m: &RadianceModel| -> Result<Checkpoint> {
        let (stored, size_bytes) = stored_form(m, encode_opts)?;
        Ok(Checkpoint {
            round,
            store: m.store.clone(),
            quality: evaluate(&stored, val)?,
            size_bytes,
        })
    };
    let record = |round: usize, m: &RadianceModel, c: &Checkpoint, counts: &RoundCounts| -> Result<RoundRecord> {
        Ok(RoundRecord {
            round,
            sparsity: m.store.sparsity()?,
            removed: counts.removed,
            re_included: counts.re_included,
            psnr_db: c.quality.psnr_db,
            ssim: c.quality.ssim,
            size_bytes: c.size_bytes,
        })
    };

    let mut current = model.clone();
    let start = checkpoint(0, &current)?;
    if start.quality.psnr_db < floor {
        return Err(Error::Config(format!(
            "stored form of the input model already scores {:.3} dB, below the {floor:.3} dB floor",
            start.quality.psnr_db
        )));
    }
    let mut history = vec![record(0, &current, &start, &RoundCounts { removed: 0, re_included: 0 })?];
    let mut low = start.clone();
    let mut high = start;
    let mut state = OptimizerState::new(&current);

    for round in 1..=cfg.max_rounds {
        fine_tune_one_epoch(&mut current, train, &opts, &mut state).map_err(|e| round_error(round, e))?;
        let counts = prune_step(&mut current, &snapshot, cfg, cfg.gamma, cfg.reinclude)
            .map_err(|e| round_error(round, e))?;
        let cp = checkpoint(round, &current)?;
        history.push(record(round, &current, &cp, &counts)?);
        log::info!(
            "round {round}: sparsity {:.4}, removed {}, re-included {}, psnr {:.3} dB, {} bytes",
            history[round].sparsity,
            counts.removed,
            counts.re_included,
            cp.quality.psnr_db,
            cp.size_bytes
        );
        if cp.quality.psnr_db < floor {
            break;
        }
        if cp.quality.psnr_db > low.quality.psnr_db {
            low = cp.clone();
        }
        high = cp;
    }
    Ok(CompressionResult {
        baseline_psnr_db,
        low,
        high,
        history,
    })
}

fn round_error(round: usize, e: Error) -> Error {
    match e {
        Error::NonFiniteLoss { context } => Error::NonFiniteLoss {
            context: format!("round {round}: {context}"),
        },
        other => other,
    }
}

/// Result of pruning to a fixed sparsity, for ablation comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationPoint {
    pub sparsity: f64,
    pub rounds: usize,
    pub psnr_db: f64,
    pub model: RadianceModel,
}

/// Prunes with the round procedure of [`compress`] until `target` sparsity
/// is reached, then fine-tunes one more epoch and scores the stored form on
/// `val`.
///
/// The per-round removal fraction is capped so the last round lands on the
/// target exactly; that landing round skips re-inclusion.
pub fn prune_to_sparsity(
    model: &RadianceModel,
    train: &CameraSet,
    val: &CameraSet,
    cfg: &CompressionConfig,
    opts: &TrainOptions,
    target: f64,
) -> Result<AblationPoint> {
    cfg.validate()?;
    check_unit("target", target)?;
    let snapshot = snapshot_targets(train, cfg.snapshot_rays, cfg.seed);
    let mut opts = opts.clone();
    opts.seed = cfg.seed;
    let mut current = model.clone();
    let mut state = OptimizerState::new(&current);
    let total = current.store.total_sites();
    let goal = (target * total as f64).ceil() as usize;
    let mut rounds = 0;
    while rounds < cfg.max_rounds && current.store.removed_count() < goal {
        rounds += 1;
        fine_tune_one_epoch(&mut current, train, &opts, &mut state)?;
        let needed = goal - current.store.removed_count();
        let kept_in_scope: usize = current
            .store
            .layers()
            .iter()
            .filter(|l| cfg.scope.includes(l))
            .map(|l| l.kept_count())
            .sum();
        if kept_in_scope == 0 {
            break;
        }
        let landing = needed as f64 <= cfg.gamma * kept_in_scope as f64;
        let gamma = if landing {
            ((needed + 1) as f64 / kept_in_scope as f64).min(1.0)
        } else {
            cfg.gamma
        };
        prune_step(&mut current, &snapshot, cfg, gamma, cfg.reinclude && !landing)?;
    }
    fine_tune_one_epoch(&mut current, train, &opts, &mut state)?;
    let (stored, _) = stored_form(&current, cfg.encode_options())?;
    Ok(AblationPoint {
        sparsity: current.store.sparsity()?,
        rounds,
        psnr_db: evaluate(&stored, val)?.psnr_db,
        model: current,
    })
}

/// Writes `round,sparsity,removed,re_included,psnr_db,size_bytes` rows.
pub fn write_history_csv(history: &[RoundRecord], mut out: impl std::io::Write) -> Result<()> {
    writeln!(out, "round,sparsity,removed,re_included,psnr_db,size_bytes")?;
    for r in history {
        writeln!(
            out,
            "{},{:.6},{},{},{:.6},{}",
            r.round, r.sparsity, r.removed, r.re_included, r.psnr_db, r.size_bytes
        )?;
    }
    Ok(())
}
