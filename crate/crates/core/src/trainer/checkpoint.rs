//! Checkpoint directories: `scene.ply`, `trajectory.tum` (refined poses),
//! `config.toml`, and `optimizer.bin` with the exact f64 state needed to
//! continue bit-for-bit.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;

use super::{AdamState, DensifyStats, IntervalAccum, MetricsRow, TrainConfig, TrainInput, Trainer};
use crate::error::{Error, Result};
use crate::io::{ply, tum};
use crate::scene::{DynamicGaussian, GaussianScene, PARAM_LEN};

const MAGIC: &[u8; 6] = b"DSOPT1";

pub const SCENE_FILE: &str = "scene.ply";
pub const TRAJECTORY_FILE: &str = "trajectory.tum";
pub const CONFIG_FILE: &str = "config.toml";
pub const OPTIMIZER_FILE: &str = "optimizer.bin";

fn put_f64s(buf: &mut Vec<u8>, xs: &[f64]) {
    for &x in xs {
        buf.write_f64::<LittleEndian>(x).expect("vec write");
    }
}

fn put_u64(buf: &mut Vec<u8>, x: u64) {
    buf.write_u64::<LittleEndian>(x).expect("vec write");
}

fn put_adam(buf: &mut Vec<u8>, a: &AdamState) {
    put_u64(buf, a.m.len() as u64);
    put_f64s(buf, &a.m);
    put_f64s(buf, &a.v);
    put_u64(buf, a.step);
}

pub(crate) fn encode_state(t: &Trainer) -> Vec<u8> {
    let mut b = MAGIC.to_vec();
    put_u64(&mut b, t.iter as u64);
    put_u64(&mut b, t.skipped as u64);
    put_u64(&mut b, t.streak as u64);
    b.write_f64::<LittleEndian>(t.extent).expect("vec write");

    put_u64(&mut b, t.scene.len() as u64);
    for g in t.scene.gaussians() {
        put_f64s(&mut b, &g.to_flat());
    }
    put_adam(&mut b, &t.adam);

    put_u64(&mut b, t.deltas.len() as u64);
    for (d, a) in t.deltas.iter().zip(&t.pose_adam) {
        put_f64s(&mut b, d);
        put_adam(&mut b, a);
    }

    for i in 0..t.stats.grad_accum.len() {
        b.write_f64::<LittleEndian>(t.stats.grad_accum[i]).expect("vec write");
        b.write_u32::<LittleEndian>(t.stats.denom[i]).expect("vec write");
        put_f64s(&mut b, t.stats.mean_grad[i].as_slice());
    }

    put_u64(&mut b, t.interval.count as u64);
    put_f64s(&mut b, &t.interval.sums);
    put_u64(&mut b, t.metrics.len() as u64);
    for r in &t.metrics {
        put_u64(&mut b, r.iter as u64);
        put_f64s(&mut b, &[r.total, r.photometric, r.depth, r.motion, r.pose, r.psnr]);
    }
    b
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
    path: &'a Path,
}

impl Reader<'_> {
    fn err(&self, what: &str) -> Error {
        Error::format(self.path, format!("truncated or corrupt optimizer state ({what})"))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        self.cur.read_u64::<LittleEndian>().map_err(|_| self.err(what))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.cur.read_u32::<LittleEndian>().map_err(|_| self.err(what))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        self.cur.read_f64::<LittleEndian>().map_err(|_| self.err(what))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let remaining = self.cur.get_ref().len() as u64 - self.cur.position();
        if (n as u64).saturating_mul(8) > remaining {
            return Err(self.err(what));
        }
        (0..n).map(|_| self.f64(what)).collect()
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        Ok(self.u64(what)? as usize)
    }

    fn adam(&mut self, what: &str) -> Result<AdamState> {
        let n = self.len(what)?;
        let m = self.f64s(n, what)?;
        let v = self.f64s(n, what)?;
        let step = self.u64(what)?;
        Ok(AdamState { m, v, step })
    }
}

pub fn save(dir: &Path, t: &Trainer) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    ply::write_scene(&dir.join(SCENE_FILE), &t.scene)?;
    tum::write_trajectory(&dir.join(TRAJECTORY_FILE), &t.refined_trajectory())?;
    let cfg_path = dir.join(CONFIG_FILE);
    std::fs::write(&cfg_path, t.cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    let opt_path = dir.join(OPTIMIZER_FILE);
    std::fs::write(&opt_path, encode_state(t)).map_err(|e| Error::io(&opt_path, e))
}

/// Restores a trainer from `dir`. `input` must be the same training frames
/// the checkpoint was written from.
pub fn load(dir: &Path, input: TrainInput) -> Result<Trainer> {
    let cfg = TrainConfig::load(&dir.join(CONFIG_FILE))?;
    let path = dir.join(OPTIMIZER_FILE);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let mut magic = [0u8; 6];
    let mut r = Reader {
        cur: Cursor::new(&bytes),
        path: &path,
    };
    r.cur.read_exact(&mut magic).map_err(|_| r.err("magic"))?;
    if &magic != MAGIC {
        return Err(Error::format(&path, "not an optimizer state file"));
    }
    let iter = r.len("iteration")?;
    let skipped = r.len("skip count")?;
    let streak = r.len("skip streak")?;
    let extent = r.f64("extent")?;

    let n = r.len("gaussian count")?;
    let flat = r.f64s(n * PARAM_LEN, "gaussians")?;
    let gaussians: Vec<DynamicGaussian> = flat.chunks_exact(PARAM_LEN).map(DynamicGaussian::read_flat).collect();
    let adam = r.adam("adam")?;
    if adam.len() != n * PARAM_LEN {
        return Err(Error::format(&path, "adam moments do not match the Gaussian count"));
    }

    let frames = r.len("frame count")?;
    if frames != input.frames.len() {
        return Err(Error::LengthMismatch {
            left: input.frames.len(),
            right: frames,
        });
    }
    let mut deltas = Vec::with_capacity(frames);
    let mut pose_adam = Vec::with_capacity(frames);
    for _ in 0..frames {
        let d = r.f64s(6, "pose delta")?;
        deltas.push([d[0], d[1], d[2], d[3], d[4], d[5]]);
        pose_adam.push(r.adam("pose adam")?);
    }

    let mut stats = DensifyStats::new(n);
    for i in 0..n {
        stats.grad_accum[i] = r.f64("densify stats")?;
        stats.denom[i] = r.u32("densify stats")?;
        let g = r.f64s(3, "densify stats")?;
        stats.mean_grad[i] = Vector3::new(g[0], g[1], g[2]);
    }

    let count = r.len("interval")?;
    let s = r.f64s(6, "interval")?;
    let interval = IntervalAccum {
        count,
        sums: [s[0], s[1], s[2], s[3], s[4], s[5]],
    };
    let rows = r.len("metrics")?;
    let mut metrics = Vec::with_capacity(rows.min(1 << 20));
    for _ in 0..rows {
        let iter = r.len("metrics")?;
        let v = r.f64s(6, "metrics")?;
        metrics.push(MetricsRow {
            iter,
            total: v[0],
            photometric: v[1],
            depth: v[2],
            motion: v[3],
            pose: v[4],
            psnr: v[5],
        });
    }
    if (r.cur.position() as usize) != bytes.len() {
        return Err(Error::format(&path, "trailing bytes after optimizer state"));
    }

    let scene = GaussianScene::from_gaussians(cfg.scene.clone(), gaussians);
    let mut t = Trainer::with_scene(input, cfg, scene);
    t.adam = adam;
    t.deltas = deltas;
    t.pose_adam = pose_adam;
    t.stats = stats;
    t.extent = extent;
    t.iter = iter;
    t.interval = interval;
    t.metrics = metrics;
    t.skipped = skipped;
    t.streak = streak;
    Ok(t)
}
