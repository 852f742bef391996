use crate::field::{cell_center, resample_mask_nearest, ScaleFactor, TidalField, CHANNELS};
use crate::Result;

const KEYS_A: f64 = -0.5;

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn keys_kernel(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((KEYS_A + 2.0) * x - (KEYS_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((KEYS_A * x - 5.0 * KEYS_A) * x + 8.0 * KEYS_A) * x - 4.0 * KEYS_A
    } else {
        0.0
    }
}

/// Four clamped source taps and weights for each of `m` target cells.
fn axis_taps(n: usize, m: usize) -> Vec<([usize; 4], [f64; 4])> {
    (0..m)
        .map(|j| {
            let src = (cell_center(j, m) + 1.0) / 2.0 * n as f64 - 0.5;
            let base = src.floor();
            let frac = src - base;
            let mut idx = [0usize; 4];
            let mut wts = [0.0f64; 4];
            for k in 0..4 {
                let i = base as i64 - 1 + k as i64;
                idx[k] = i.clamp(0, n as i64 - 1) as usize;
                wts[k] = keys_kernel(frac - (k as f64 - 1.0));
            }
            (idx, wts)
        })
        .collect()
}

/// Separable bicubic resampling onto the `round(s H) x round(s W)` lattice.
///
/// Source taps outside the grid are clamped to the edge. The output mask is
/// the nearest-neighbor resampling of the input mask.
pub fn bicubic_upsample(lr: &TidalField, scale: ScaleFactor) -> Result<TidalField> {
    let (h, w) = (lr.height(), lr.width());
    let (oh, ow) = (scale.apply(h), scale.apply(w));
    let rows = axis_taps(h, oh);
    let cols = axis_taps(w, ow);

    let mut data = Vec::with_capacity(lr.timesteps() * CHANNELS * oh * ow);
    let mut tmp = vec![0.0f64; h * ow];
    for t in 0..lr.timesteps() {
        for c in 0..CHANNELS {
            let src = lr.plane(t, c);
            for y in 0..h {
                let row = &src[y * w..(y + 1) * w];
                for (x, (idx, wts)) in cols.iter().enumerate() {
                    tmp[y * ow + x] = (0..4).map(|k| wts[k] * row[idx[k]] as f64).sum();
                }
            }
            for (idx, wts) in &rows {
                for x in 0..ow {
                    let v: f64 = (0..4).map(|k| wts[k] * tmp[idx[k] * ow + x]).sum();
                    data.push(v as f32);
                }
            }
        }
    }
    let mask = resample_mask_nearest(lr.mask(), h, w, oh, ow);
    TidalField::new(
        lr.timesteps(),
        oh,
        ow,
        data,
        mask,
        lr.extent,
        lr.meters_per_cell * h as f64 / oh as f64,
    )
}
