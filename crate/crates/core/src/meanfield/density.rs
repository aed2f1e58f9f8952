use super::MeanFieldError;

/// Nodal density values on a uniform grid, integrated with the trapezoid
/// rule.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    x_min: f64,
    dx: f64,
    values: Vec<f64>,
}

impl DensityGrid {
    /// Wraps nodal values; they must be finite, non-negative and carry unit
    /// mass to within `1e-6`.
    pub fn new(x_min: f64, x_max: f64, values: Vec<f64>) -> Result<Self, MeanFieldError> {
        let g = Self::unchecked(x_min, x_max, values)?;
        if g.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(MeanFieldError::Precondition("density values must be finite and >= 0".into()));
        }
        let m = g.mass();
        if (m - 1.0).abs() > 1e-6 {
            return Err(MeanFieldError::Precondition(format!("density mass is {m}, expected 1")));
        }
        Ok(g)
    }

    pub(crate) fn unchecked(x_min: f64, x_max: f64, values: Vec<f64>) -> Result<Self, MeanFieldError> {
        if values.len() < 3 || !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(MeanFieldError::Precondition("density grid needs x_min < x_max and at least 3 nodes".into()));
        }
        let dx = (x_max - x_min) / (values.len() - 1) as f64;
        Ok(DensityGrid { x_min, dx, values })
    }

    /// Samples `f` at the nodes and rescales to unit mass.
    pub fn from_fn(x_min: f64, x_max: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self, MeanFieldError> {
        let mut g = Self::unchecked(x_min, x_max, vec![0.0; n.max(3)])?;
        for j in 0..g.values.len() {
            g.values[j] = f(g.node(j)).max(0.0);
        }
        let m = g.mass();
        if !(m > 0.0) || !m.is_finite() {
            return Err(MeanFieldError::Precondition("density has no mass on the grid".into()));
        }
        g.values.iter_mut().for_each(|v| *v /= m);
        Ok(g)
    }

    pub fn gaussian(mean: f64, sd: f64, x_min: f64, x_max: f64, n: usize) -> Result<Self, MeanFieldError> {
        if !(sd > 0.0) {
            return Err(MeanFieldError::Precondition("gaussian needs sd > 0".into()));
        }
        Self::from_fn(x_min, x_max, n, |x| gaussian_pdf(x, mean, sd))
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.node(self.values.len() - 1)
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn node(&self, j: usize) -> f64 {
        self.x_min + self.dx * j as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.values.len()).map(|j| self.node(j)).collect()
    }

    /// Trapezoid weights: `dx / 2` at the ends, `dx` inside.
    pub fn weight(&self, j: usize) -> f64 {
        if j == 0 || j + 1 == self.values.len() {
            0.5 * self.dx
        } else {
            self.dx
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.values.len()).map(|j| self.weight(j)).collect()
    }

    /// `int f(x) u(x) dx` by the trapezoid rule.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.values.iter().enumerate().map(|(j, u)| self.weight(j) * u * f(self.node(j))).sum()
    }

    pub fn mass(&self) -> f64 {
        self.integrate(|_| 1.0)
    }

    pub fn mean(&self) -> f64 {
        self.integrate(|x| x) / self.mass()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.integrate(|x| (x - m) * (x - m)) / self.mass()
    }

    /// `int |u - f| dx` by the trapezoid rule.
    pub fn l1_distance_to(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.values.iter().enumerate().map(|(j, u)| self.weight(j) * (u - f(self.node(j))).abs()).sum()
    }

    /// Quantiles at the levels `(i + 1/2) / k`, `i = 0..k`, of the
    /// piecewise-linear density through the nodes.
    pub fn quantiles(&self, k: usize) -> Vec<f64> {
        let n = self.values.len();
        let mut cdf = vec![0.0; n];
        for j in 1..n {
            cdf[j] = cdf[j - 1] + 0.5 * self.dx * (self.values[j - 1] + self.values[j]);
        }
        let total = cdf[n - 1];
        let mut out = Vec::with_capacity(k);
        let mut j = 0;
        for i in 0..k {
            let target = (i as f64 + 0.5) / k as f64 * total;
            while j + 2 < n && cdf[j + 1] < target {
                j += 1;
            }
            // solve F_j + u_j s + (u_{j+1} - u_j) s^2 / (2 dx) = target on [0, dx]
            let (u0, u1) = (self.values[j], self.values[j + 1]);
            let c = target - cdf[j];
            let a = 0.5 * (u1 - u0) / self.dx;
            let denom = u0 + (u0 * u0 + 4.0 * a * c).max(0.0).sqrt();
            let s = if denom > 0.0 { 2.0 * c / denom } else { 0.5 * self.dx };
            out.push(self.node(j) + s.clamp(0.0, self.dx));
        }
        out
    }
}

pub fn gaussian_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}
