//! Packed binary checkpoints.
//!
//! Layout (little-endian), version tag `COEVOCK1`:
//!
//! ```text
//! magic            8 bytes   "COEVOCK1"
//! kind             str       bauplan kind name
//! condition        u8        0 fixed / 1 coevolve / 2 preevolved
//! master_seed      u64
//! generation       u64
//! update_count     u64
//! env_steps        u64
//! n_morph          u64       morphological slice length of the search vector
//! dim              u64
//! center           dim f64
//! adam_m           dim f64
//! adam_v           dim f64
//! freeze_mask      dim u8
//! obs_count        u64
//! obs_components   u64
//! obs_mean         f64 per component
//! obs_m2           f64 per component
//! posteval_eps     u64
//! n_records        u64
//! records          (u64 gen, u64 steps, f64 mean, eps f64 fitness, eps f64 progress) each
//! drift_interval   u64
//! drift_next       u64
//! drift_has_prev   u8        1 + dim f64 when present
//! n_drift_points   u64
//! drift_points     (u64 steps, u8 has_morph, f64 morph, f64 ctrl) each
//! ```
//!
//! Strings are u64 length + UTF-8 bytes. A resumed run reconstructs the
//! exact continuation because every random stream is keyed by
//! `(master_seed, generation)`.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{ReadBytesExt, WriteBytesExt, LE};

use super::drift::{DriftPoint, DriftSampler};
use super::records::GenerationRecord;
use super::{Condition, HarnessError};
use crate::bauplan::BauplanKind;
use crate::es::{AdamMoments, EsState};
use crate::policy::ObsStats;

const MAGIC: &[u8; 8] = b"COEVOCK1";

/// Everything needed to continue a replication.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: BauplanKind,
    pub condition: Condition,
    pub n_morph: usize,
    pub es: EsState,
    pub obs_stats: ObsStats,
    pub posteval_episodes: usize,
    pub records: Vec<GenerationRecord>,
    pub drift: DriftSampler,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        write_str(&mut buf, &self.kind.name())?;
        buf.write_u8(self.condition as u8)?;
        buf.write_u64::<LE>(self.es.master_seed)?;
        buf.write_u64::<LE>(self.es.generation)?;
        buf.write_u64::<LE>(self.es.update_count)?;
        buf.write_u64::<LE>(self.es.cumulative_env_steps)?;
        buf.write_u64::<LE>(self.n_morph as u64)?;
        buf.write_u64::<LE>(self.es.center.len() as u64)?;
        write_f64s(&mut buf, &self.es.center)?;
        write_f64s(&mut buf, &self.es.moments.m)?;
        write_f64s(&mut buf, &self.es.moments.v)?;
        for &b in &self.es.freeze_mask {
            buf.write_u8(b as u8)?;
        }
        buf.write_u64::<LE>(self.obs_stats.count)?;
        buf.write_u64::<LE>(self.obs_stats.n_components() as u64)?;
        write_f64s(&mut buf, &self.obs_stats.mean)?;
        write_f64s(&mut buf, self.obs_stats.raw_m2())?;
        buf.write_u64::<LE>(self.posteval_episodes as u64)?;
        buf.write_u64::<LE>(self.records.len() as u64)?;
        for r in &self.records {
            buf.write_u64::<LE>(r.generation)?;
            buf.write_u64::<LE>(r.cumulative_env_steps)?;
            buf.write_f64::<LE>(r.posteval_fitness)?;
            for &v in &r.episode_fitness {
                buf.write_f64::<LE>(v)?;
            }
            for &v in &r.episode_progress {
                buf.write_f64::<LE>(v)?;
            }
        }
        buf.write_u64::<LE>(self.drift.interval)?;
        buf.write_u64::<LE>(self.drift.next_boundary)?;
        match &self.drift.prev_center {
            Some(c) => {
                buf.write_u8(1)?;
                write_f64s(&mut buf, c)?;
            }
            None => buf.write_u8(0)?,
        }
        buf.write_u64::<LE>(self.drift.points.len() as u64)?;
        for p in &self.drift.points {
            buf.write_u64::<LE>(p.env_steps)?;
            match p.morph_mean_abs_delta {
                Some(v) => {
                    buf.write_u8(1)?;
                    buf.write_f64::<LE>(v)?;
                }
                None => {
                    buf.write_u8(0)?;
                    buf.write_f64::<LE>(0.0)?;
                }
            }
            buf.write_f64::<LE>(p.ctrl_mean_abs_delta)?;
        }

        // atomic-enough replace: write then rename
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &buf)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, HarnessError> {
        let data = std::fs::read(path)?;
        let mut r = &data[..];
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(HarnessError::Format(format!("{}: not a checkpoint (bad magic)", path.display())));
        }
        let kind = BauplanKind::parse(&read_str(&mut r)?)
            .map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))?;
        let condition = Condition::from_u8(r.read_u8()?)
            .ok_or_else(|| HarnessError::Format(format!("{}: bad condition tag", path.display())))?;
        let master_seed = r.read_u64::<LE>()?;
        let generation = r.read_u64::<LE>()?;
        let update_count = r.read_u64::<LE>()?;
        let cumulative_env_steps = r.read_u64::<LE>()?;
        let n_morph = r.read_u64::<LE>()? as usize;
        let dim = r.read_u64::<LE>()? as usize;
        let center = read_f64s(&mut r, dim)?;
        let m = read_f64s(&mut r, dim)?;
        let v = read_f64s(&mut r, dim)?;
        let mut freeze_mask = vec![false; dim];
        for b in freeze_mask.iter_mut() {
            *b = r.read_u8()? != 0;
        }
        let obs_count = r.read_u64::<LE>()?;
        let obs_n = r.read_u64::<LE>()? as usize;
        let obs_mean = read_f64s(&mut r, obs_n)?;
        let obs_m2 = read_f64s(&mut r, obs_n)?;
        let posteval_episodes = r.read_u64::<LE>()? as usize;
        let n_records = r.read_u64::<LE>()? as usize;
        let mut records = Vec::with_capacity(n_records);
        for _ in 0..n_records {
            records.push(GenerationRecord {
                generation: r.read_u64::<LE>()?,
                cumulative_env_steps: r.read_u64::<LE>()?,
                posteval_fitness: r.read_f64::<LE>()?,
                episode_fitness: read_f64s(&mut r, posteval_episodes)?,
                episode_progress: read_f64s(&mut r, posteval_episodes)?,
            });
        }
        let drift_interval = r.read_u64::<LE>()?;
        let drift_next = r.read_u64::<LE>()?;
        let prev_center = if r.read_u8()? == 1 { Some(read_f64s(&mut r, dim)?) } else { None };
        let n_points = r.read_u64::<LE>()? as usize;
        let mut points = Vec::with_capacity(n_points);
        for _ in 0..n_points {
            let env_steps = r.read_u64::<LE>()?;
            let has_morph = r.read_u8()? == 1;
            let morph = r.read_f64::<LE>()?;
            let ctrl = r.read_f64::<LE>()?;
            points.push(DriftPoint {
                env_steps,
                morph_mean_abs_delta: if has_morph { Some(morph) } else { None },
                ctrl_mean_abs_delta: ctrl,
            });
        }

        Ok(Checkpoint {
            kind,
            condition,
            n_morph,
            es: EsState {
                center,
                moments: AdamMoments { m, v },
                update_count,
                generation,
                cumulative_env_steps,
                freeze_mask,
                master_seed,
            },
            obs_stats: ObsStats::from_raw(obs_count, obs_mean, obs_m2),
            posteval_episodes,
            records,
            drift: DriftSampler {
                interval: drift_interval,
                n_morph,
                next_boundary: drift_next,
                prev_center,
                points,
            },
        })
    }
}

fn write_str(buf: &mut Vec<u8>, s: &str) -> Result<(), HarnessError> {
    buf.write_u64::<LE>(s.len() as u64)?;
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

fn read_str(r: &mut &[u8]) -> Result<String, HarnessError> {
    let len = r.read_u64::<LE>()? as usize;
    if len > 1 << 20 {
        return Err(HarnessError::Format("unreasonable string length in checkpoint".into()));
    }
    let mut bytes = vec![0u8; len];
    r.read_exact(&mut bytes)?;
    String::from_utf8(bytes).map_err(|_| HarnessError::Format("invalid UTF-8 in checkpoint".into()))
}

fn write_f64s(buf: &mut Vec<u8>, vals: &[f64]) -> Result<(), HarnessError> {
    for &v in vals {
        buf.write_f64::<LE>(v)?;
    }
    Ok(())
}

fn read_f64s(r: &mut &[u8], n: usize) -> Result<Vec<f64>, HarnessError> {
    let mut out = vec![0.0; n];
    for v in out.iter_mut() {
        *v = r.read_f64::<LE>()?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_checkpoint() -> Checkpoint {
        let dim = 7;
        let mut es = EsState::init(dim, Some((0..dim).map(|i| i as f64 * 0.3 - 1.0).collect()), None, 99);
        es.generation = 12;
        es.update_count = 12;
        es.cumulative_env_steps = 48_000;
        es.moments.m[3] = 0.25;
        es.moments.v[5] = 1e-4;
        es.freeze_mask[0] = true;
        es.freeze_mask[1] = true;

        let mut obs = ObsStats::new(4);
        obs.update(&[0.1, -0.2, 0.3, 4.0]).unwrap();
        obs.update(&[1.1, 0.2, -0.3, 2.0]).unwrap();

        let mut drift = DriftSampler::new(1000, 2);
        drift.observe(1500, &vec![0.5; dim]);
        drift.observe(2500, &vec![0.7; dim]);

        Checkpoint {
            kind: BauplanKind::Chain(7),
            condition: Condition::Preevolved,
            n_morph: 2,
            es,
            obs_stats: obs,
            posteval_episodes: 3,
            records: vec![GenerationRecord {
                generation: 11,
                cumulative_env_steps: 44_000,
                posteval_fitness: 1.5,
                episode_fitness: vec![1.0, 1.5, 2.0],
                episode_progress: vec![0.9, 1.4, 1.9],
            }],
            drift,
        }
    }

    #[test]
    fn round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ck");
        let ck = sample_checkpoint();
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(ck, back);
        // saving again produces identical bytes
        let bytes1 = std::fs::read(&path).unwrap();
        back.save(&path).unwrap();
        assert_eq!(bytes1, std::fs::read(&path).unwrap());
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nope.ck");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(HarnessError::Format(_))));
    }
}
