//! Bicubic resampling with MATLAB `imresize` semantics: Keys cubic (a = -0.5),
//! kernel widened by `1/scale` when shrinking, symmetric border extension.

pub fn output_size(height: usize, width: usize, scale: f64) -> (usize, usize) {
    ((height as f64 * scale).ceil() as usize, (width as f64 * scale).ceil() as usize)
}

fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i - 1
    } else if i >= n {
        2 * n - 1 - i
    } else {
        i
    };
    r.clamp(0, n - 1) as usize
}

/// Per-output-sample source indices and normalized weights along one axis.
fn contributions(in_len: usize, out_len: usize, scale: f64) -> Vec<Vec<(usize, f64)>> {
    let shrink = scale < 1.0;
    let kernel_width = if shrink { 4.0 / scale } else { 4.0 };
    let taps = kernel_width.ceil() as isize + 2;
    (1..=out_len)
        .map(|x| {
            let u = x as f64 / scale + 0.5 * (1.0 - 1.0 / scale);
            let left = (u - kernel_width / 2.0).floor() as isize;
            let mut row: Vec<(isize, f64)> = (0..taps)
                .map(|j| {
                    let idx = left + j;
                    let d = u - idx as f64;
                    let w = if shrink { scale * cubic(d * scale) } else { cubic(d) };
                    (idx, w)
                })
                .collect();
            let sum: f64 = row.iter().map(|(_, w)| w).sum();
            row.iter_mut().for_each(|(_, w)| *w /= sum);
            row.into_iter().map(|(idx, w)| (reflect(idx - 1, in_len), w)).collect()
        })
        .collect()
}

/// Resizes a single row-major plane by `scale` along both axes.
pub fn imresize(plane: &[f64], height: usize, width: usize, scale: f64) -> Vec<f64> {
    assert_eq!(plane.len(), height * width, "plane size");
    let (oh, ow) = output_size(height, width, scale);
    let rows = contributions(height, oh, scale);
    let cols = contributions(width, ow, scale);

    let mut tmp = vec![0.0; oh * width];
    for (oy, taps) in rows.iter().enumerate() {
        let dst = &mut tmp[oy * width..(oy + 1) * width];
        for &(sy, w) in taps {
            let src = &plane[sy * width..(sy + 1) * width];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        let src = &tmp[y * width..(y + 1) * width];
        for (ox, taps) in cols.iter().enumerate() {
            out[y * ow + ox] = taps.iter().map(|&(sx, w)| w * src[sx]).sum();
        }
    }
    out
}
