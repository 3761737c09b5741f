//! Per-generation records and their CSV table.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// The post-update search center of one generation, post-evaluated with
/// fresh episodes that never touch training state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: u64,
    pub cumulative_env_steps: u64,
    /// Mean fitness over the post-evaluation episodes.
    pub posteval_fitness: f64,
    pub episode_fitness: Vec<f64>,
    /// Progress-only component per post-evaluation episode.
    pub episode_progress: Vec<f64>,
}

impl GenerationRecord {
    pub fn median_progress(&self) -> f64 {
        let mut v = self.episode_progress.clone();
        v.sort_by(f64::total_cmp);
        if v.is_empty() {
            return 0.0;
        }
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }
}

/// Write the generation table. Floats use shortest round-trip formatting,
/// so the file is byte-stable across runs.
pub fn write_records_csv(path: &Path, records: &[GenerationRecord]) -> Result<(), HarnessError> {
    let n_eps = records.first().map(|r| r.episode_fitness.len()).unwrap_or(0);
    let mut out = String::new();
    out.push_str("generation,cumulative_env_steps,posteval_fitness");
    for i in 1..=n_eps {
        out.push_str(&format!(",episode_fitness_{i}"));
    }
    for i in 1..=n_eps {
        out.push_str(&format!(",episode_progress_{i}"));
    }
    out.push('\n');
    for r in records {
        out.push_str(&format!("{},{},{}", r.generation, r.cumulative_env_steps, fmt(r.posteval_fitness)));
        for v in &r.episode_fitness {
            out.push(',');
            out.push_str(&fmt(*v));
        }
        for v in &r.episode_progress {
            out.push(',');
            out.push_str(&fmt(*v));
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<GenerationRecord>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| HarnessError::Format(format!("{}: empty table", path.display())))?;
    let n_eps = header.matches("episode_fitness_").count();
    let mut records = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 + 2 * n_eps {
            return Err(HarnessError::Format(format!("{}: bad field count on line {}", path.display(), ln + 2)));
        }
        let parse_f = |s: &str| -> Result<f64, HarnessError> {
            s.parse().map_err(|_| HarnessError::Format(format!("{}: bad float `{s}`", path.display())))
        };
        records.push(GenerationRecord {
            generation: fields[0].parse().map_err(|_| HarnessError::Format("bad generation".into()))?,
            cumulative_env_steps: fields[1].parse().map_err(|_| HarnessError::Format("bad steps".into()))?,
            posteval_fitness: parse_f(fields[2])?,
            episode_fitness: fields[3..3 + n_eps].iter().map(|s| parse_f(s)).collect::<Result<_, _>>()?,
            episode_progress: fields[3 + n_eps..].iter().map(|s| parse_f(s)).collect::<Result<_, _>>()?,
        });
    }
    Ok(records)
}

/// Write the drift table (`env_steps,morph_mean_abs_delta,ctrl_mean_abs_delta`;
/// the morph column is empty for genotypes without a morphological slice).
pub fn write_drift_csv(path: &Path, series: &super::drift::DriftSeries) -> Result<(), HarnessError> {
    let mut out = String::from("env_steps,morph_mean_abs_delta,ctrl_mean_abs_delta\n");
    for p in &series.points {
        let morph = p.morph_mean_abs_delta.map(|v| fmt(v)).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", p.env_steps, morph, fmt(p.ctrl_mean_abs_delta)));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn fmt(v: f64) -> String {
    // `{:?}` prints the shortest string that round-trips the f64
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_records() -> Vec<GenerationRecord> {
        (0..4)
            .map(|g| GenerationRecord {
                generation: g,
                cumulative_env_steps: g * 1000 + 37,
                posteval_fitness: (g as f64 * 0.77).sin(),
                episode_fitness: vec![0.1 * g as f64, -0.2, 3.0e-7],
                episode_progress: vec![1.0, 2.0, f64::MIN_POSITIVE],
            })
            .collect()
    }

    #[test]
    fn csv_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.csv");
        let records = sample_records();
        write_records_csv(&path, &records).unwrap();
        let back = read_records_csv(&path).unwrap();
        assert_eq!(records, back);
    }

    #[test]
    fn csv_bytes_are_stable() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_records_csv(&a, &sample_records()).unwrap();
        write_records_csv(&b, &sample_records()).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn median_progress_odd_and_even() {
        let mut r = sample_records().remove(0);
        r.episode_progress = vec![3.0, 1.0, 2.0];
        assert_eq!(r.median_progress(), 2.0);
        r.episode_progress = vec![4.0, 1.0, 2.0, 3.0];
        assert_eq!(r.median_progress(), 2.5);
    }
}
