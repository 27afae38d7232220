use super::{GeometryError, PlaneImage, Result};

const WINDOW: usize = 7;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Mean local structural similarity between two equally-shaped images.
///
/// Uses a 7×7 uniform window slid over every fully-contained position, with
/// stabilizers C1 = (K1·L)², C2 = (K2·L)² and dynamic range L taken as the
/// max-minus-min over both images (L = 1 when both are constant).
pub fn ssim(a: &PlaneImage, b: &PlaneImage) -> Result<f64> {
    let da = a.pixels.dim();
    let db = b.pixels.dim();
    if da != db {
        return Err(GeometryError::ShapeMismatch { a: da, b: db });
    }
    let (h, w) = da;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in a.pixels.iter().chain(b.pixels.iter()) {
        lo = lo.min(v as f64);
        hi = hi.max(v as f64);
    }
    let range = hi - lo;
    let l = if range > 0.0 { range } else { 1.0 };
    let c1 = (K1 * l) * (K1 * l);
    let c2 = (K2 * l) * (K2 * l);

    let n = (WINDOW * WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for i0 in 0..=(h - WINDOW) {
        for j0 in 0..=(w - WINDOW) {
            let mut sa = 0.0;
            let mut sb = 0.0;
            let mut saa = 0.0;
            let mut sbb = 0.0;
            let mut sab = 0.0;
            for i in i0..i0 + WINDOW {
                for j in j0..j0 + WINDOW {
                    let x = a.pixels[(i, j)] as f64;
                    let y = b.pixels[(i, j)] as f64;
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            }
            let ma = sa / n;
            let mb = sb / n;
            let va = saa / n - ma * ma;
            let vb = sbb / n - mb * mb;
            let cov = sab / n - ma * mb;
            let local = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            total += local;
            count += 1;
        }
    }
    Ok(total / count as f64)
}
