//! Small sample statistics used by the Monte Carlo checks.

/// Sample mean, unbiased variance and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub var: f64,
    pub se: f64,
}

pub fn moments(xs: &[f64]) -> Moments {
    let n = xs.len();
    if n == 0 {
        return Moments { n, mean: f64::NAN, var: f64::NAN, se: f64::NAN };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    Moments { n, mean, var, se: (var / n as f64).sqrt() }
}

/// Self-normalised weighted mean `sum w x / sum w` with its delta-method
/// standard error.
pub fn weighted_mean(xs: &[f64], ws: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let sw: f64 = ws.iter().sum();
    let r = xs.iter().zip(ws).map(|(x, w)| x * w).sum::<f64>() / sw;
    let wbar = sw / n;
    let resid: Vec<f64> = xs.iter().zip(ws).map(|(x, w)| w * (x - r)).collect();
    let m = moments(&resid);
    (r, m.se / wbar)
}

/// Ordinary least-squares slope and intercept of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Linear-interpolated empirical quantile of sorted data, `p` in `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let i = (h.floor() as usize).min(n - 2);
    let w = h - i as f64;
    sorted[i] * (1.0 - w) + sorted[i + 1] * w
}
