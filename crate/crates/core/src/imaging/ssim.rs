use super::Image;
use crate::error::{Error, Result};

/// Side length of the square, uniformly weighted SSIM window.
pub const SSIM_WINDOW: usize = 8;

const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Summed-area table with a zero guard row/column.
struct Integral {
    stride: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(w: usize, h: usize, f: impl Fn(usize) -> f64) -> Self {
        let stride = w + 1;
        let mut sums = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += f(y * w + x);
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self { stride, sums }
    }

    fn window(&self, x: usize, y: usize, size: usize) -> f64 {
        let s = self.stride;
        self.sums[(y + size) * s + x + size] - self.sums[y * s + x + size] - self.sums[(y + size) * s + x]
            + self.sums[y * s + x]
    }
}

/// Mean SSIM over every 8x8 window position (stride 1), dynamic range 1,
/// population (co)variances.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.grid().ensure_same_dims(b.grid())?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidImage(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let (pa, pb) = (a.pixels(), b.pixels());
    let sa = Integral::new(w, h, |i| pa[i]);
    let sb = Integral::new(w, h, |i| pb[i]);
    let saa = Integral::new(w, h, |i| pa[i] * pa[i]);
    let sbb = Integral::new(w, h, |i| pb[i] * pb[i]);
    let sab = Integral::new(w, h, |i| pa[i] * pb[i]);

    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..=h - SSIM_WINDOW {
        for x in 0..=w - SSIM_WINDOW {
            let mu_a = sa.window(x, y, SSIM_WINDOW) / n;
            let mu_b = sb.window(x, y, SSIM_WINDOW) / n;
            let var_a = (saa.window(x, y, SSIM_WINDOW) / n - mu_a * mu_a).max(0.0);
            let var_b = (sbb.window(x, y, SSIM_WINDOW) / n - mu_b * mu_b).max(0.0);
            let cov = sab.window(x, y, SSIM_WINDOW) / n - mu_a * mu_b;
            total += window_ssim(mu_a, mu_b, var_a, var_b, cov);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[inline]
pub(crate) fn window_ssim(mu_a: f64, mu_b: f64, var_a: f64, var_b: f64, cov: f64) -> f64 {
    ((2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2)) / ((mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2))
}
