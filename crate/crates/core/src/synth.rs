//! Synthetic street scenes rendered by per-pixel ray casting.
//!
//! A scene is a ground plane plus axis-aligned boxes (zero thickness along an
//! axis gives a billboard). Movers are boxes translating with constant world
//! velocity. Every pixel stores the z-depth and id of the front-most surface,
//! so depth and motion masks are exact.

use std::path::Path;

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::buffer::{ColorImage, Mask, Plane};
use crate::camera::{CameraIntrinsics, CameraPose, Trajectory};
use crate::error::{Error, Result};
use crate::io;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Texture {
    Solid {
        color: [f64; 3],
    },
    Checker {
        a: [f64; 3],
        b: [f64; 3],
        period: f64,
        /// Per-cell brightness variation, drawn from the generator seed.
        #[serde(default)]
        jitter: f64,
    },
}

impl Texture {
    fn validate(&self, field: &str) -> Result<()> {
        let in_unit = |c: &[f64; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
        match self {
            Texture::Solid { color } if !in_unit(color) => Err(Error::InvalidConfig(format!(
                "{field}.color must lie in [0, 1]"
            ))),
            Texture::Checker { a, b, .. } if !in_unit(a) || !in_unit(b) => Err(Error::InvalidConfig(
                format!("{field}: checker colors must lie in [0, 1]"),
            )),
            Texture::Checker { period, .. } if !(*period > 0.0 && period.is_finite()) => Err(
                Error::InvalidConfig(format!("{field}.period must be > 0, got {period}")),
            ),
            Texture::Checker { jitter, .. } if !(0.0..=0.5).contains(jitter) => Err(
                Error::InvalidConfig(format!("{field}.jitter must lie in [0, 0.5], got {jitter}")),
            ),
            _ => Ok(()),
        }
    }

    fn sample(&self, uv: Vector2<f64>, seed: u64, prim: usize) -> Vector3<f64> {
        match self {
            Texture::Solid { color } => Vector3::from(*color),
            Texture::Checker {
                a,
                b,
                period,
                jitter,
            } => {
                let i = (uv.x / period).floor() as i64;
                let j = (uv.y / period).floor() as i64;
                let base = if (i + j).rem_euclid(2) == 0 { a } else { b };
                let mut c = Vector3::from(*base);
                if *jitter > 0.0 {
                    let h = splitmix(seed ^ splitmix(prim as u64 ^ splitmix(i as u64 ^ splitmix(j as u64))));
                    let u = (h >> 11) as f64 / (1u64 << 53) as f64;
                    c *= 1.0 + jitter * (2.0 * u - 1.0);
                }
                c.map(|v| v.clamp(0.0, 1.0))
            }
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Horizontal plane `y = height` (the camera frame has y pointing down).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundSpec {
    pub height: f64,
    pub texture: Texture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub texture: Texture,
    /// World units per second; zero for static boxes.
    #[serde(default)]
    pub velocity: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
}

/// Camera path keyframe; keyframes are spread evenly over the sequence and
/// interpolated linearly in position and yaw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keyframe {
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub frame_count: usize,
    pub fps: f64,
    pub camera: CameraSpec,
    #[serde(default)]
    pub ground: Option<GroundSpec>,
    #[serde(default)]
    pub boxes: Vec<BoxSpec>,
    #[serde(default)]
    pub movers: Vec<BoxSpec>,
    pub path: Vec<Keyframe>,
    #[serde(default = "default_sky")]
    pub sky: [f64; 3],
}

fn default_sky() -> [f64; 3] {
    [0.62, 0.74, 0.9]
}

pub const PRESETS: [&str; 3] = ["static-street", "one-mover", "multi-mover"];

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SceneSpec =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("scene spec: {}", e.message())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scene spec serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::centered(self.camera.width, self.camera.height, self.camera.focal)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_count == 0 {
            return Err(Error::InvalidConfig("frame_count must be >= 1".into()));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::InvalidConfig(format!("fps must be > 0, got {}", self.fps)));
        }
        if self.camera.width < 2 || self.camera.height < 2 {
            return Err(Error::InvalidConfig("camera.width and camera.height must be >= 2".into()));
        }
        if !(self.camera.focal > 0.0 && self.camera.focal.is_finite()) {
            return Err(Error::InvalidConfig(format!("camera.focal must be > 0, got {}", self.camera.focal)));
        }
        if self.path.is_empty() {
            return Err(Error::InvalidConfig("path needs at least one keyframe".into()));
        }
        if let Some(g) = &self.ground {
            g.texture.validate("ground.texture")?;
        }
        for (name, list) in [("boxes", &self.boxes), ("movers", &self.movers)] {
            for (i, b) in list.iter().enumerate() {
                if (0..3).any(|k| b.min[k] > b.max[k]) {
                    return Err(Error::InvalidConfig(format!("{name}[{i}]: min must not exceed max")));
                }
                if b.velocity.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidConfig(format!("{name}[{i}].velocity must be finite")));
                }
                b.texture.validate(&format!("{name}[{i}].texture"))?;
            }
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if b.velocity != [0.0; 3] {
                return Err(Error::InvalidConfig(format!(
                    "boxes[{i}].velocity must be zero; moving boxes belong in movers"
                )));
            }
        }
        Ok(())
    }

    /// Bundled scenes: a textured street canyon, optionally with moving cars.
    pub fn preset(name: &str) -> Result<Self> {
        let checker = |a: [f64; 3], b: [f64; 3], period: f64| Texture::Checker {
            a,
            b,
            period,
            jitter: 0.15,
        };
        let mut spec = SceneSpec {
            frame_count: 30,
            fps: 10.0,
            camera: CameraSpec {
                width: 96,
                height: 96,
                focal: 80.0,
            },
            ground: Some(GroundSpec {
                height: 1.5,
                texture: checker([0.35, 0.35, 0.38], [0.62, 0.6, 0.55], 2.0),
            }),
            boxes: vec![
                // street walls and the far facade
                BoxSpec {
                    min: [-5.0, -20.0, -5.0],
                    max: [-4.0, 1.5, 40.0],
                    texture: checker([0.75, 0.45, 0.3], [0.45, 0.25, 0.2], 2.0),
                    velocity: [0.0; 3],
                },
                BoxSpec {
                    min: [4.0, -20.0, -5.0],
                    max: [5.0, 1.5, 40.0],
                    texture: checker([0.3, 0.5, 0.7], [0.8, 0.8, 0.75], 2.0),
                    velocity: [0.0; 3],
                },
                BoxSpec {
                    min: [-5.0, -20.0, 24.0],
                    max: [5.0, 1.5, 25.0],
                    texture: checker([0.85, 0.8, 0.4], [0.3, 0.55, 0.3], 2.0),
                    velocity: [0.0; 3],
                },
                // parked cars
                BoxSpec {
                    min: [-3.6, 0.3, 6.0],
                    max: [-2.2, 1.5, 9.0],
                    texture: checker([0.8, 0.2, 0.2], [0.95, 0.9, 0.9], 0.8),
                    velocity: [0.0; 3],
                },
                BoxSpec {
                    min: [2.2, 0.2, 11.0],
                    max: [3.6, 1.5, 14.5],
                    texture: checker([0.2, 0.3, 0.8], [0.9, 0.9, 0.3], 0.8),
                    velocity: [0.0; 3],
                },
            ],
            movers: Vec::new(),
            path: vec![
                Keyframe {
                    position: [0.0, 0.0, 0.0],
                    yaw_deg: 0.0,
                },
                Keyframe {
                    position: [0.4, -0.1, 1.5],
                    yaw_deg: 3.0,
                },
                Keyframe {
                    position: [0.1, 0.0, 3.0],
                    yaw_deg: -2.0,
                },
            ],
            sky: default_sky(),
        };
        let car = |min: [f64; 3], max: [f64; 3], velocity: [f64; 3], a: [f64; 3]| BoxSpec {
            min,
            max,
            texture: checker(a, [0.1, 0.1, 0.1], 0.6),
            velocity,
        };
        match name {
            "static-street" => {}
            "one-mover" => {
                spec.movers.push(car([-3.2, 0.2, 9.0], [-1.4, 1.5, 10.2], [2.0, 0.0, 0.0], [0.95, 0.55, 0.1]));
            }
            "multi-mover" => {
                spec.movers.push(car([-3.2, 0.2, 9.0], [-1.4, 1.5, 10.2], [2.0, 0.0, 0.0], [0.95, 0.55, 0.1]));
                spec.movers.push(car([1.0, 0.3, 16.0], [2.4, 1.5, 19.0], [0.0, 0.0, -2.5], [0.2, 0.8, 0.3]));
                spec.movers.push(car([2.5, 0.5, 7.0], [3.2, 1.5, 7.6], [-1.2, 0.0, 0.4], [0.9, 0.2, 0.8]));
            }
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown preset {other:?}; expected one of {}",
                    PRESETS.join(", ")
                )))
            }
        }
        Ok(spec)
    }

    /// Camera pose at frame `i` (world-from-camera).
    pub fn camera_pose(&self, i: usize) -> CameraPose {
        let ts = i as f64 / self.fps;
        let n = self.path.len();
        let (pos, yaw) = if n == 1 || self.frame_count <= 1 {
            (Vector3::from(self.path[0].position), self.path[0].yaw_deg)
        } else {
            let s = i as f64 / (self.frame_count - 1) as f64 * (n - 1) as f64;
            let k = (s.floor() as usize).min(n - 2);
            let f = s - k as f64;
            let (a, b) = (&self.path[k], &self.path[k + 1]);
            (
                Vector3::from(a.position) * (1.0 - f) + Vector3::from(b.position) * f,
                a.yaw_deg * (1.0 - f) + b.yaw_deg * f,
            )
        };
        let r = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), yaw.to_radians());
        CameraPose::new(r, pos, ts)
    }
}

/// Per-frame ground truth. `ids` holds the front-most primitive per pixel
/// (`NO_HIT` for sky).
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticFrame {
    pub timestamp: f64,
    pub image: ColorImage,
    /// Camera z-depth of the visible surface; 0 where nothing is hit.
    pub depth: Plane,
    pub mask: Mask,
    pub ids: Vec<u32>,
}

/// Position of a mover's min corner per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectTrack {
    pub mover: usize,
    pub positions: Vec<Vector3<f64>>,
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<SyntheticFrame>,
    pub trajectory: Trajectory,
    pub tracks: Vec<ObjectTrack>,
    /// Ids at or above this are movers.
    pub first_mover_id: u32,
}

pub const NO_HIT: u32 = u32::MAX;
const GROUND_ID: u32 = 0;

struct Prim<'a> {
    min: Vector3<f64>,
    max: Vector3<f64>,
    texture: &'a Texture,
}

/// Entry parameter and slab axis of a ray-box hit.
fn ray_box(o: &Vector3<f64>, d: &Vector3<f64>, min: &Vector3<f64>, max: &Vector3<f64>) -> Option<(f64, usize)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    let mut axis = 0;
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k] < min[k] || o[k] > max[k] {
                return None;
            }
            continue;
        }
        let a = (min[k] - o[k]) / d[k];
        let b = (max[k] - o[k]) / d[k];
        let (near, far) = if a < b { (a, b) } else { (b, a) };
        if near > t0 {
            t0 = near;
            axis = k;
        }
        t1 = t1.min(far);
    }
    (t0 <= t1 && t0 > 1e-9).then_some((t0, axis))
}

fn shade(axis: usize) -> f64 {
    [0.8, 1.0, 0.9][axis]
}

fn render_frame(spec: &SceneSpec, k: &CameraIntrinsics, pose: &CameraPose, seed: u64) -> SyntheticFrame {
    let (w, h) = (k.width, k.height);
    let t = pose.timestamp;
    let mut prims: Vec<Prim> = Vec::new();
    for b in &spec.boxes {
        prims.push(Prim {
            min: Vector3::from(b.min),
            max: Vector3::from(b.max),
            texture: &b.texture,
        });
    }
    for m in &spec.movers {
        let off = Vector3::from(m.velocity) * t;
        prims.push(Prim {
            min: Vector3::from(m.min) + off,
            max: Vector3::from(m.max) + off,
            texture: &m.texture,
        });
    }
    let first_mover = 1 + spec.boxes.len() as u32;
    let rot = pose.rotation_matrix();
    let sky = Vector3::from(spec.sky);
    let mut image = ColorImage::new(w, h);
    let mut depth = Plane::new(w, h);
    let mut mask = Mask::new(w, h);
    let mut ids = vec![NO_HIT; w * h];
    for py in 0..h {
        for px in 0..w {
            // z component 1 in the camera frame, so the ray parameter is z-depth
            let dc = Vector3::new((px as f64 - k.cx) / k.fx, (py as f64 - k.cy) / k.fy, 1.0);
            let d = rot * dc;
            let o = pose.t;
            let mut best: Option<(f64, u32, Vector3<f64>)> = None;
            if let Some(g) = &spec.ground {
                if d.y.abs() > 1e-15 {
                    let s = (g.height - o.y) / d.y;
                    if s > 1e-9 {
                        let p = o + d * s;
                        let c = g.texture.sample(Vector2::new(p.x, p.z), seed, 0);
                        best = Some((s, GROUND_ID, c));
                    }
                }
            }
            for (i, pr) in prims.iter().enumerate() {
                let Some((s, axis)) = ray_box(&o, &d, &pr.min, &pr.max) else {
                    continue;
                };
                if best.is_some_and(|b| b.0 <= s) {
                    continue;
                }
                let rel = o + d * s - pr.min;
                let uv = match axis {
                    0 => Vector2::new(rel.z, rel.y),
                    1 => Vector2::new(rel.x, rel.z),
                    _ => Vector2::new(rel.x, rel.y),
                };
                let c = pr.texture.sample(uv, seed, i + 1) * shade(axis);
                best = Some((s, i as u32 + 1, c));
            }
            let idx = py * w + px;
            match best {
                Some((s, id, c)) => {
                    image.data[idx] = c;
                    depth.data[idx] = s;
                    mask.data[idx] = id >= first_mover;
                    ids[idx] = id;
                }
                None => image.data[idx] = sky,
            }
        }
    }
    SyntheticFrame {
        timestamp: t,
        image,
        depth,
        mask,
        ids,
    }
}

/// Renders every frame of `spec`. Texture jitter is drawn from `seed`.
pub fn generate(spec: &SceneSpec, seed: u64) -> Result<SyntheticDataset> {
    use rayon::prelude::*;
    spec.validate()?;
    if spec.ground.is_none() && spec.boxes.is_empty() {
        return Err(Error::EmptyScene);
    }
    let k = spec.intrinsics();
    let poses: Vec<CameraPose> = (0..spec.frame_count).map(|i| spec.camera_pose(i)).collect();
    let frames: Vec<SyntheticFrame> = poses
        .par_iter()
        .map(|p| render_frame(spec, &k, p, seed))
        .collect();
    let tracks = spec
        .movers
        .iter()
        .enumerate()
        .map(|(m, b)| ObjectTrack {
            mover: m,
            positions: poses
                .iter()
                .map(|p| Vector3::from(b.min) + Vector3::from(b.velocity) * p.timestamp)
                .collect(),
        })
        .collect();
    Ok(SyntheticDataset {
        intrinsics: k,
        frames,
        trajectory: Trajectory::new(poses),
        tracks,
        first_mover_id: 1 + spec.boxes.len() as u32,
    })
}

/// Relative poses `T_{i-1}^{-1} T_i`, identity for the first frame.
pub fn relative_poses(traj: &Trajectory) -> Vec<CameraPose> {
    let mut out = Vec::with_capacity(traj.len());
    for (i, p) in traj.poses.iter().enumerate() {
        if i == 0 {
            out.push(CameraPose::identity(p.timestamp));
        } else {
            out.push(traj.poses[i - 1].inverse().compose(p));
        }
    }
    out
}

pub fn frame_name(i: usize, ext: &str) -> String {
    format!("{i:06}.{ext}")
}

/// Writes the disk-provider layout plus `gt_poses.tum`.
pub fn export(ds: &SyntheticDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in ds.frames.iter().enumerate() {
        io::png::write_rgb(&dir.join("rgb").join(frame_name(i, "png")), &f.image)?;
        io::pfm::write_pfm(&dir.join("depth").join(frame_name(i, "pfm")), &f.depth)?;
        io::png::write_mask(&dir.join("mask").join(frame_name(i, "png")), &f.mask)?;
    }
    io::tum::write_trajectory(&dir.join("rel_poses.tum"), &Trajectory::new(relative_poses(&ds.trajectory)))?;
    io::tum::write_trajectory(&dir.join("gt_poses.tum"), &ds.trajectory)?;
    io::write_intrinsics(&dir.join("intrinsics.json"), &ds.intrinsics)?;
    Ok(())
}
