//! Line-delimited trajectory export: one JSON frame record per control step
//! (time, link poses, joint angles, contact flags, reward breakdown).

use std::io::Write;
use std::path::Path;

use super::HarnessError;
use crate::bauplan::{BauplanTemplate, Genotype};
use crate::episode::{run_episode, EpisodeConfig, EpisodeResult};
use crate::policy::ObsStats;

/// Run one traced episode and write its frames to `path`. Returns the
/// episode result (frame count = steps executed). Re-exporting with the
/// same inputs produces a byte-identical file.
pub fn export_trajectory(
    genotype: &Genotype,
    template: &BauplanTemplate,
    config: &EpisodeConfig,
    seed: u64,
    stats: &ObsStats,
    path: &Path,
) -> Result<EpisodeResult, HarnessError> {
    let (result, _) = run_episode(genotype, template, config, seed, stats, true)?;
    let frames = result.trace.as_ref().expect("traced episode carries frames");
    let mut out = String::new();
    for frame in frames {
        out.push_str(&serde_json::to_string(frame).map_err(|e| HarnessError::Format(e.to_string()))?);
        out.push('\n');
    }
    let mut f = std::fs::File::create(path)
        .map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))?;
    f.write_all(out.as_bytes())
        .map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))?;
    Ok(result)
}
