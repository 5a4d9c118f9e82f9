//! Exponential boundary distance maps.
//!
//! Boundary pixels are foreground pixels with at least one background
//! 4-neighbour, where anything outside the frame counts as background. The
//! map is `exp(-D)` over the whole frame, `D` being the exact Euclidean
//! distance (in pixels) to the nearest boundary pixel.

use crate::{BinaryMask, DistanceMap, Error, Grid, Pixel, Result};

const FAR: f64 = 1e20;

/// Foreground pixels touching the background (or the frame edge) through a
/// 4-neighbour, in row-major order.
pub fn boundary_pixels(mask: &BinaryMask) -> Result<Vec<Pixel>> {
    let on = |y: i64, x: i64| mask.try_get(y, x).is_some_and(|&v| v != 0);
    let out: Vec<Pixel> = mask
        .foreground()
        .filter(|&(y, x)| {
            let (y, x) = (y as i64, x as i64);
            !(on(y - 1, x) && on(y + 1, x) && on(y, x - 1) && on(y, x + 1))
        })
        .collect();
    if out.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(out)
}

/// Same as [`boundary_pixels`] but as a mask.
pub fn boundary_mask(mask: &BinaryMask) -> Result<BinaryMask> {
    let mut out = Grid::filled(mask.height(), mask.width(), 0u8);
    for (y, x) in boundary_pixels(mask)? {
        *out.get_mut(y, x) = 1;
    }
    Ok(out)
}

#[inline]
fn intersect(f: &[f64], p: usize, q: usize, fq: f64) -> f64 {
    (fq - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64)
}

/// 1-D squared distance transform of a sampled function (lower envelope of
/// parabolas). `f` is read and `d` written; `v` and `z` are scratch.
fn envelope_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let fq = f[q] + (q * q) as f64;
        let mut s = intersect(f, v[k], q, fq);
        // z[0] = -inf stops the scan at k = 0
        while s <= z[k] {
            k -= 1;
            s = intersect(f, v[k], q, fq);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *out = dq * dq + f[p];
    }
}

/// Exact squared Euclidean distance to the nearest `true` cell.
pub fn squared_edt(sites: &Grid<bool>) -> Result<Grid<f64>> {
    if !sites.as_slice().iter().any(|&s| s) {
        return Err(Error::EmptySiteSet);
    }
    let (h, w) = sites.shape();
    let n = h.max(w);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    let mut grid: Grid<f64> = sites.map(|&s| if s { 0.0 } else { FAR });

    for x in 0..w {
        for y in 0..h {
            f[y] = *grid.get(y, x);
        }
        envelope_1d(&f[..h], &mut d[..h], &mut v, &mut z);
        for y in 0..h {
            *grid.get_mut(y, x) = d[y];
        }
    }
    for y in 0..h {
        let row = &mut grid.as_mut_slice()[y * w..(y + 1) * w];
        f[..w].copy_from_slice(row);
        envelope_1d(&f[..w], &mut d[..w], &mut v, &mut z);
        row.copy_from_slice(&d[..w]);
    }
    Ok(grid)
}

/// Exact Euclidean distance from every pixel of an `h x w` frame to the
/// nearest site.
pub fn euclidean_dt(sites: &[Pixel], shape: (usize, usize)) -> Result<Grid<f64>> {
    let (h, w) = shape;
    if sites.is_empty() {
        return Err(Error::EmptySiteSet);
    }
    let mut grid = Grid::filled(h, w, false);
    for &(y, x) in sites {
        if y >= h || x >= w {
            return Err(Error::shape(format!("site ({y}, {x}) outside {h}x{w} frame")));
        }
        *grid.get_mut(y, x) = true;
    }
    Ok(squared_edt(&grid)?.map(|v| v.sqrt()))
}

/// `exp(-D)`; exactly 1 on boundary pixels.
pub fn mask_to_distance_map(mask: &BinaryMask) -> Result<DistanceMap> {
    let boundary = boundary_pixels(mask)?;
    let dist = euclidean_dt(&boundary, mask.shape())?;
    Ok(dist.map(|&d| (-d).exp() as f32))
}
