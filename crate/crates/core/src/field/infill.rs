use crate::{Error, Result};

/// For every cell, the flat index of the sea cell whose value it takes.
///
/// Sea cells map to themselves. A land cell maps to the Euclidean-nearest sea
/// cell, ties broken by smaller row then smaller column.
pub fn nearest_sea_sources(mask: &[bool], height: usize, width: usize) -> Result<Vec<usize>> {
    if mask.len() != height * width {
        return Err(Error::shape(format!(
            "mask length {} does not match {height}x{width}",
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::NoValidCells);
    }
    // The nearest sea cell to a land cell always has a land 4-neighbor: the
    // neighbor one step toward the land cell is strictly closer to it.
    let is_land = |y: isize, x: isize| {
        y >= 0
            && x >= 0
            && (y as usize) < height
            && (x as usize) < width
            && !mask[y as usize * width + x as usize]
    };
    let coast: Vec<(usize, usize)> = (0..height)
        .flat_map(|y| (0..width).map(move |x| (y, x)))
        .filter(|&(y, x)| {
            let (yi, xi) = (y as isize, x as isize);
            mask[y * width + x]
                && (is_land(yi - 1, xi) || is_land(yi + 1, xi) || is_land(yi, xi - 1) || is_land(yi, xi + 1))
        })
        .collect();

    let mut sources: Vec<usize> = (0..height * width).collect();
    for y in 0..height {
        for x in 0..width {
            if mask[y * width + x] {
                continue;
            }
            // coast is in row-major order, so strict < keeps the first tie
            let mut best = (usize::MAX, 0usize);
            for &(sy, sx) in &coast {
                let d2 = sy.abs_diff(y).pow(2) + sx.abs_diff(x).pow(2);
                if d2 < best.0 {
                    best = (d2, sy * width + sx);
                }
            }
            sources[y * width + x] = best.1;
        }
    }
    Ok(sources)
}

/// Nearest-valid infill over `planes` consecutive `[height, width]` planes.
pub fn infill_nearest_planes(
    data: &mut [f32],
    planes: usize,
    height: usize,
    width: usize,
    mask: &[bool],
) -> Result<()> {
    let n = height * width;
    if data.len() != planes * n {
        return Err(Error::shape(format!(
            "data length {} does not match {planes} planes of {height}x{width}",
            data.len()
        )));
    }
    let sources = nearest_sea_sources(mask, height, width)?;
    for plane in data.chunks_exact_mut(n) {
        for (i, &src) in sources.iter().enumerate() {
            if src != i {
                plane[i] = plane[src];
            }
        }
    }
    Ok(())
}
