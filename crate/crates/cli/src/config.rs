use std::path::{Path, PathBuf};

use revox_core::importance::Scope;
use revox_core::{CompressionConfig, Connectivity, SceneSpec, TrainOptions};
use serde::{Deserialize, Serialize};

use crate::{Overrides, UsageError};

/// Everything a run needs, as read from `--config`.
///
/// The top-level `seed` drives scene generation, training shuffles and the
/// compression snapshot alike; per-section `seed` keys are overwritten by it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scene: SceneSpec,
    pub train: TrainOptions,
    pub compress: CompressionConfig,
    /// Default output path when `--out` is absent.
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, UsageError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| {
            UsageError(format!(
                "invalid config {} at line {}, column {}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })
    }

    /// Applies command-line flags (flags win) and propagates the seed.
    pub fn apply(mut self, o: &Overrides) -> Result<Self, UsageError> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        self.scene.seed = self.seed;
        self.train.seed = self.seed;
        self.compress.seed = self.seed;
        let c = &mut self.compress;
        if let Some(g) = o.gamma {
            c.gamma = g;
        }
        if let Some(d) = o.delta {
            c.delta = d;
        }
        if let Some(t) = o.delta_t {
            c.delta_t = t;
        }
        if let Some(scope) = &o.scope {
            c.scope = match scope.as_str() {
                "voxels" => Scope::VoxelsOnly,
                "all" => Scope::AllLayers,
                other => return Err(UsageError(format!("--scope must be voxels or all, got `{other}`"))),
            };
        }
        if let Some(n) = o.connectivity {
            c.connectivity = Connectivity::try_from(n).map_err(|e| UsageError(format!("--connectivity: {e}")))?;
        }
        if o.no_reinclude {
            c.reinclude = false;
        }
        if o.no_quantize {
            c.quantize = false;
        }
        c.validate().map_err(|e| UsageError(e.to_string()))?;
        if self.train.epochs == 0 || self.train.batch_rays == 0 {
            return Err(UsageError("train.epochs and train.batch_rays must be >= 1".into()));
        }
        Ok(self)
    }
}
