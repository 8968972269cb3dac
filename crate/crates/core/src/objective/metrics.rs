use crate::real::Real;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Hard mask IoU in percent after binarizing both masks at 0.5. Two empty
/// masks score 100.
pub fn mask_iou<T: Real>(target: &[T], predicted: &[T]) -> f64 {
    let half = T::lit(0.5);
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in target.iter().zip(predicted) {
        let (a, b) = (a >= half, b >= half);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    if union == 0 {
        100.0
    } else {
        100.0 * inter as f64 / union as f64
    }
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable valid-mode filtering of one `h×w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..n).map(|j| k[j] * plane[r * w + c + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..n).map(|i| k[i] * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let stats: Vec<Vec<f64>> = if h < SSIM_WINDOW || w < SSIM_WINDOW {
        // one window spanning the whole image, uniform weights
        let n = (h * w) as f64;
        let mean = |f: &dyn Fn(usize) -> f64| vec![(0..h * w).map(f).sum::<f64>() / n];
        vec![
            mean(&|i| x[i]),
            mean(&|i| y[i]),
            mean(&|i| x[i] * x[i]),
            mean(&|i| y[i] * y[i]),
            mean(&|i| x[i] * y[i]),
        ]
    } else {
        let k = gaussian_kernel();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
        [x, y, &xx[..], &yy[..], &xy[..]]
            .iter()
            .map(|p| filter_valid(p, h, w, &k))
            .collect()
    };
    let n = stats[0].len();
    let mut total = 0.0;
    for i in 0..n {
        let (mx, my) = (stats[0][i], stats[1][i]);
        let vx = stats[2][i] - mx * mx;
        let vy = stats[3][i] - my * my;
        let cov = stats[4][i] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    total / n as f64
}

/// SSIM in percent between two `h×w×channels` images with values in [0, 1]:
/// 11×11 Gaussian window (σ = 1.5), K1 = 0.01, K2 = 0.03, valid positions
/// only, averaged over channels. Images smaller than the window use a single
/// global window.
pub fn ssim<T: Real>(a: &[T], b: &[T], h: usize, w: usize, channels: usize) -> f64 {
    assert_eq!(a.len(), h * w * channels, "ssim: first image size");
    assert_eq!(b.len(), h * w * channels, "ssim: second image size");
    let plane = |img: &[T], c: usize| -> Vec<f64> {
        (0..h * w).map(|i| img[i * channels + c].to_f64_lossy()).collect()
    };
    let sum: f64 = (0..channels).map(|c| ssim_plane(&plane(a, c), &plane(b, c), h, w)).sum();
    100.0 * sum / channels as f64
}
