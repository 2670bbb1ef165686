use nalgebra::Vector3;

use super::{run_tiles, BackwardState, ProjectedGaussian, RasterConfig, RenderOutput};
use crate::buffer::{ColorImage, Plane};
use crate::camera::CameraIntrinsics;

/// Gaussian kernel value at pixel center `(px, py)`, or `None` outside the
/// truncated support.
#[inline]
pub(super) fn kernel(p: &ProjectedGaussian, px: f64, py: f64) -> Option<(f64, f64, f64)> {
    let dx = px - p.mu2d.x;
    let dy = py - p.mu2d.y;
    let [a, b, c] = p.conic;
    let d2 = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
    if d2 > p.cutoff_sq {
        return None;
    }
    Some(((-0.5 * d2).exp(), dx, dy))
}

pub(super) struct TileGeometry {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

pub(super) fn tile_geometry(tile: usize, tiles_x: usize, ts: usize, w: usize, h: usize) -> TileGeometry {
    let tx = tile % tiles_x;
    let ty = tile / tiles_x;
    TileGeometry {
        x0: tx * ts,
        y0: ty * ts,
        x1: ((tx + 1) * ts).min(w),
        y1: ((ty + 1) * ts).min(h),
    }
}

struct TilePixels {
    color: Vec<Vector3<f64>>,
    depth: Vec<f64>,
    velocity: Vec<f64>,
    alpha: Vec<f64>,
    traversed: Vec<u32>,
}

fn bin_tiles(
    projected: &[ProjectedGaussian],
    tiles_x: usize,
    tiles_y: usize,
    ts: usize,
    w: usize,
    h: usize,
) -> Vec<Vec<u32>> {
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    let tsf = ts as f64;
    for (i, p) in projected.iter().enumerate() {
        let (rx, ry) = (p.extent.x.min(1e9), p.extent.y.min(1e9));
        let px0 = (p.mu2d.x - rx).ceil().max(0.0);
        let px1 = (p.mu2d.x + rx).floor().min(w as f64 - 1.0);
        let py0 = (p.mu2d.y - ry).ceil().max(0.0);
        let py1 = (p.mu2d.y + ry).floor().min(h as f64 - 1.0);
        if px0 > px1 || py0 > py1 {
            continue;
        }
        let (tx0, tx1) = ((px0 / tsf) as usize, (px1 / tsf) as usize);
        let (ty0, ty1) = ((py0 / tsf) as usize, (py1 / tsf) as usize);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                lists[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    lists
}

/// Sorts the splats by depth and alpha-blends them front to back per tile.
pub fn rasterize(
    mut projected: Vec<ProjectedGaussian>,
    k: &CameraIntrinsics,
    cfg: &RasterConfig,
) -> RenderOutput {
    let (w, h) = (k.width, k.height);
    let ts = cfg.tile_size.max(1);
    let tiles_x = w.div_ceil(ts);
    let tiles_y = h.div_ceil(ts);
    projected.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then(a.source_id.cmp(&b.source_id))
    });
    let tile_lists = bin_tiles(&projected, tiles_x, tiles_y, ts, w, h);

    let tiles = run_tiles(tiles_x * tiles_y, cfg.single_threaded, |tile| {
        let geo = tile_geometry(tile, tiles_x, ts, w, h);
        let list = &tile_lists[tile];
        let n = (geo.x1 - geo.x0) * (geo.y1 - geo.y0);
        let mut out = TilePixels {
            color: Vec::with_capacity(n),
            depth: Vec::with_capacity(n),
            velocity: Vec::with_capacity(n),
            alpha: Vec::with_capacity(n),
            traversed: Vec::with_capacity(n),
        };
        for py in geo.y0..geo.y1 {
            for px in geo.x0..geo.x1 {
                let mut trans = 1.0;
                let mut color = Vector3::zeros();
                let mut depth = 0.0;
                let mut vel = 0.0;
                let mut acc = 0.0;
                let mut traversed = 0u32;
                for (j, &gi) in list.iter().enumerate() {
                    let p = &projected[gi as usize];
                    let Some((g, _, _)) = kernel(p, px as f64, py as f64) else {
                        continue;
                    };
                    let a = p.alpha_t * g;
                    if a < cfg.min_contribution {
                        continue;
                    }
                    let wgt = a * trans;
                    color += p.color * wgt;
                    depth += p.depth * wgt;
                    vel += p.vel_scalar * wgt;
                    acc += wgt;
                    trans *= 1.0 - a;
                    traversed = j as u32 + 1;
                    if trans < cfg.min_transmittance {
                        break;
                    }
                }
                let norm = acc.max(cfg.norm_eps);
                out.color.push(color);
                out.depth.push(depth / norm);
                out.velocity.push(vel / norm);
                out.alpha.push(acc);
                out.traversed.push(traversed);
            }
        }
        out
    });

    let mut color = ColorImage::new(w, h);
    let mut depth = Plane::new(w, h);
    let mut velocity = Plane::new(w, h);
    let mut alpha_acc = Plane::new(w, h);
    let mut traversed = vec![0u32; w * h];
    for (tile, px) in tiles.into_iter().enumerate() {
        let geo = tile_geometry(tile, tiles_x, ts, w, h);
        let mut i = 0;
        for y in geo.y0..geo.y1 {
            for x in geo.x0..geo.x1 {
                let idx = y * w + x;
                color.data[idx] = px.color[i];
                depth.data[idx] = px.depth[i];
                velocity.data[idx] = px.velocity[i];
                alpha_acc.data[idx] = px.alpha[i];
                traversed[idx] = px.traversed[i];
                i += 1;
            }
        }
    }

    RenderOutput {
        color,
        depth,
        velocity,
        alpha_acc,
        backward_state: BackwardState {
            projected,
            tile_lists,
            traversed,
            tiles_x,
            tiles_y,
            config: cfg.clone(),
            context: None,
        },
    }
}
