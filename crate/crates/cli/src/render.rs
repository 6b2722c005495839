//! PNG heatmaps of swept observables and Wigner grids.

use std::path::Path;

use cascade_core::observables::PhaseSpaceGrid;
use image::{Rgb, RgbImage};

use crate::scenario::Scenario;

const MISSING: Rgb<u8> = Rgb([150, 150, 150]);
const CONTOUR: Rgb<u8> = Rgb([0, 0, 0]);
const TARGET_PIXELS: usize = 480;

/// Blue below zero, white at zero, red above; `t` is clamped to [-1, 1].
fn diverging(t: f64) -> Rgb<u8> {
    let t = t.clamp(-1.0, 1.0);
    let fade = |x: f64| (255.0 * (1.0 - x.abs())).round() as u8;
    if t < 0.0 {
        Rgb([fade(t), fade(t), 255])
    } else {
        Rgb([255, fade(t), fade(t)])
    }
}

/// Draw a `nx` by `ny` cell map, row 0 at the bottom. Where the value
/// changes sign between neighbours a black edge pixel is drawn, which traces
/// the zero contour; values with magnitude below `floor` never count.
fn cell_map(nx: usize, ny: usize, value: impl Fn(usize, usize) -> Option<f64>, color: impl Fn(f64) -> Rgb<u8>, floor: f64) -> RgbImage {
    let scale = (TARGET_PIXELS / nx.max(ny)).max(1);
    let (w, h) = ((nx * scale) as u32, (ny * scale) as u32);
    let mut img = RgbImage::new(w, h);
    for iy in 0..ny {
        for ix in 0..nx {
            let v = value(ix, iy);
            let c = v.map_or(MISSING, &color);
            let sign = |u: Option<f64>| u.filter(|u| u.abs() >= floor).map(|u| u > 0.0);
            let here = sign(v);
            let edge_x = ix + 1 < nx && here.is_some() && sign(value(ix + 1, iy)).is_some_and(|s| Some(s) != here);
            let edge_y = iy + 1 < ny && here.is_some() && sign(value(ix, iy + 1)).is_some_and(|s| Some(s) != here);
            for py in 0..scale {
                for px in 0..scale {
                    let on_edge = (edge_x && px == scale - 1) || (edge_y && py == scale - 1);
                    let x = (ix * scale + px) as u32;
                    let y = h - 1 - (iy * scale + py) as u32;
                    img.put_pixel(x, y, if on_edge { CONTOUR } else { c });
                }
            }
        }
    }
    img
}

/// Heatmaps over (axis value, delta) for every g2 and Duan column, with
/// log2 colour scale and the value-1 contour. Needs at least two points on
/// both axes; otherwise nothing is drawn.
pub fn heatmaps(s: &Scenario, header: &[String], rows: &[Vec<String>], dir: &Path) -> Result<(), image::ImageError> {
    let nx = s.sweep.values.len();
    let ny = s.sweep.delta.len();
    if nx < 2 || ny < 2 {
        return Ok(());
    }
    let status = header.iter().position(|h| h == "status").expect("status column");
    for (col, name) in header.iter().enumerate() {
        if !(name.starts_with("g2_") || name == "duan") {
            continue;
        }
        let mut grid = vec![None; nx * ny];
        for r in rows {
            let Ok(i) = r[0].parse::<usize>() else { continue };
            if i < grid.len() && r[status] == "ok" {
                grid[i] = r[col].parse::<f64>().ok().filter(|v| *v > 0.0).map(f64::log2);
            }
        }
        let img = cell_map(nx, ny, |ix, iy| grid[iy * nx + ix], |v| diverging(v / 2.0), 0.0);
        img.save(dir.join(format!("{name}.png")))?;
    }
    Ok(())
}

/// Wigner grid with a colour scale symmetric about zero and the W = 0
/// contour, ignoring tails below a millionth of the peak.
pub fn wigner_png(g: &PhaseSpaceGrid, path: &Path) -> Result<(), image::ImageError> {
    let (nx, ny) = (g.x_values.len(), g.p_values.len());
    let peak = g.max().abs().max(g.min().abs()).max(f64::MIN_POSITIVE);
    cell_map(nx, ny, |ix, iy| Some(g.get(ix, iy)), |v| diverging(v / peak), 1e-6 * peak).save(path)
}
