//! Binary little-endian PLY with one float32 vertex per Gaussian.
//!
//! Property order: `x y z`, `log_scale_0..2`, `rot_0..3` (w x y z),
//! `logit_opacity`, `sh_0..sh_{3K-1}` (coefficient-major, RGB-minor),
//! `vx vy vz`, `tau`, `log_beta`. Scene hyperparameters travel as header
//! comments.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Vector3, Vector4};

use crate::error::{Error, Result};
use crate::scene::{DynamicGaussian, GaussianScene, SceneConfig};
use crate::sh::num_coeffs;

fn property_names(sh_degree: usize) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
    names.extend((0..3).map(|i| format!("log_scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names.push("logit_opacity".into());
    names.extend((0..3 * num_coeffs(sh_degree)).map(|i| format!("sh_{i}")));
    names.extend(["vx", "vy", "vz", "tau", "log_beta"].iter().map(|s| s.to_string()));
    names
}

fn gaussian_values(g: &DynamicGaussian, sh_degree: usize) -> Vec<f64> {
    let mut v = vec![g.mu.x, g.mu.y, g.mu.z];
    v.extend(g.log_scale.iter());
    v.extend(g.rot_q.iter());
    v.push(g.logit_opacity);
    for c in g.sh.iter().take(num_coeffs(sh_degree)) {
        v.extend(c.iter());
    }
    v.extend(g.v.iter());
    v.push(g.tau);
    v.push(g.log_beta);
    v
}

pub fn encode_scene(scene: &GaussianScene) -> Vec<u8> {
    let cfg = &scene.config;
    let names = property_names(cfg.sh_degree);
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header += &format!("comment sh_degree {}\n", cfg.sh_degree);
    header += &format!("comment cycle_length {}\n", cfg.cycle_length);
    header += &format!("comment v_thr {}\n", cfg.v_thr);
    header += &format!("comment v_scale {}\n", cfg.v_scale);
    header += &format!("element vertex {}\n", scene.len());
    for n in &names {
        header += &format!("property float {n}\n");
    }
    header += "end_header\n";
    let mut buf = header.into_bytes();
    for g in scene.gaussians() {
        for v in gaussian_values(g, cfg.sh_degree) {
            buf.write_f32::<LittleEndian>(v as f32).expect("vec write");
        }
    }
    buf
}

pub fn write_scene(path: &Path, scene: &GaussianScene) -> Result<()> {
    super::create_parent(path)?;
    std::fs::write(path, encode_scene(scene)).map_err(|e| Error::io(path, e))
}

pub fn read_scene(path: &Path) -> Result<GaussianScene> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |m: String| Error::format(path, m);

    let mut cfg = SceneConfig::default();
    let mut count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut line = String::new();
    let mut first = true;
    loop {
        line.clear();
        let n = r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(bad("unexpected end of header".into()));
        }
        let l = line.trim_end();
        if first {
            if l != "ply" {
                return Err(bad("missing 'ply' magic".into()));
            }
            first = false;
            continue;
        }
        if l == "end_header" {
            break;
        }
        let parts: Vec<&str> = l.split_whitespace().collect();
        match parts.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", other, _] => return Err(bad(format!("unsupported format {other}"))),
            ["comment", key, value] => {
                let parse = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("bad {key}")));
                match *key {
                    "sh_degree" => cfg.sh_degree = parse(value)? as usize,
                    "cycle_length" => cfg.cycle_length = parse(value)?,
                    "v_thr" => cfg.v_thr = parse(value)?,
                    "v_scale" => cfg.v_scale = parse(value)?,
                    _ => {}
                }
            }
            ["comment", ..] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse().map_err(|_| bad(format!("bad vertex count {n}")))?)
            }
            ["property", "float", name] => props.push(name.to_string()),
            ["property", ty, name] => {
                return Err(bad(format!("property {name} has unsupported type {ty}")))
            }
            _ => return Err(bad(format!("unrecognized header line {l:?}"))),
        }
    }
    cfg.validate().map_err(|e| bad(e.to_string()))?;
    let count = count.ok_or_else(|| bad("missing vertex element".into()))?;
    let expected = property_names(cfg.sh_degree);
    if props != expected {
        return Err(bad(format!(
            "property list does not match sh_degree {} layout",
            cfg.sh_degree
        )));
    }
    let mut data = Vec::new();
    r.read_to_end(&mut data).map_err(|e| Error::io(path, e))?;
    if data.len() != count * props.len() * 4 {
        return Err(bad(format!(
            "expected {} bytes of vertex data, found {}",
            count * props.len() * 4,
            data.len()
        )));
    }
    let mut cur = std::io::Cursor::new(data);
    let k = num_coeffs(cfg.sh_degree);
    let mut gaussians = Vec::with_capacity(count);
    let mut vals = vec![0.0f64; props.len()];
    for _ in 0..count {
        for v in vals.iter_mut() {
            *v = cur.read_f32::<LittleEndian>().map_err(|e| Error::io(path, e))? as f64;
        }
        let mut g = DynamicGaussian {
            mu: Vector3::new(vals[0], vals[1], vals[2]),
            log_scale: Vector3::new(vals[3], vals[4], vals[5]),
            rot_q: Vector4::new(vals[6], vals[7], vals[8], vals[9]),
            logit_opacity: vals[10],
            ..Default::default()
        };
        for c in 0..k {
            g.sh[c] = Vector3::new(vals[11 + 3 * c], vals[12 + 3 * c], vals[13 + 3 * c]);
        }
        let o = 11 + 3 * k;
        g.v = Vector3::new(vals[o], vals[o + 1], vals[o + 2]);
        g.tau = vals[o + 3];
        g.log_beta = vals[o + 4];
        gaussians.push(g);
    }
    Ok(GaussianScene::from_gaussians(cfg, gaussians))
}
