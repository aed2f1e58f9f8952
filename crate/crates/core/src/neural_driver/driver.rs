use serde::{Deserialize, Serialize};

use super::mlp::{softplus, softplus_inverse, MlpParams};
use super::DriverError;

/// Default lower bound on the z-slope of monotone networks.
pub const DEFAULT_C_H: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverKind {
    QuadraticConstant,
    MonotoneNetwork,
    ShiftedMonotone,
    PolynomialTest,
    MeanField,
}

impl std::fmt::Display for DriverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DriverKind::QuadraticConstant => "quadratic_constant",
            DriverKind::MonotoneNetwork => "monotone_network",
            DriverKind::ShiftedMonotone => "shifted_monotone",
            DriverKind::PolynomialTest => "polynomial_test",
            DriverKind::MeanField => "mean_field",
        };
        f.write_str(s)
    }
}

/// `g(z) = alpha/2 z^2 - beta` with `beta/alpha > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticDriver {
    alpha: f64,
    beta: f64,
}

impl QuadraticDriver {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, DriverError> {
        if !alpha.is_finite() || !beta.is_finite() {
            return Err(DriverError::Domain("alpha and beta must be finite".into()));
        }
        if alpha == 0.0 {
            return Err(DriverError::Precondition("alpha must be non-zero".into()));
        }
        if !(beta / alpha > 0.0) {
            return Err(DriverError::Precondition(format!("beta/alpha must be positive (alpha={alpha}, beta={beta})")));
        }
        Ok(QuadraticDriver { alpha, beta })
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    /// The closed-form positive root `sqrt(2 beta / alpha)`.
    pub fn volatility(&self) -> f64 {
        (2.0 * self.beta / self.alpha).sqrt()
    }
}

/// `h(t, x, z) = mlp(t, x, z) + (c_h + softplus(skip_raw_slope)) z`.
///
/// The network part is non-decreasing in `z` by its positivity mask, so
/// `dh/dz >= c_h` everywhere. Without a network, `h` is linear in `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneNet {
    mlp: Option<MlpParams>,
    skip_raw_slope: f64,
    c_h: f64,
}

impl MonotoneNet {
    pub fn new(mlp: Option<MlpParams>, skip_raw_slope: f64, c_h: f64) -> Result<Self, DriverError> {
        if !(c_h > 0.0 && c_h.is_finite()) {
            return Err(DriverError::Precondition(format!("c_h must be positive, got {c_h}")));
        }
        if !skip_raw_slope.is_finite() {
            return Err(DriverError::Domain("skip_raw_slope must be finite".into()));
        }
        if let Some(m) = &mlp {
            if m.n_inputs() != 3 {
                return Err(DriverError::Shape(format!(
                    "monotone network takes (t, x, z), got {} inputs",
                    m.n_inputs()
                )));
            }
            if !(m.is_monotone_in(2) || m.ignores_input(2)) {
                return Err(DriverError::Precondition(
                    "monotone network needs positive weights on every z path and a monotone activation".into(),
                ));
            }
        }
        Ok(MonotoneNet { mlp, skip_raw_slope, c_h })
    }

    /// `h(t, x, z) = slope * z` with no network.
    pub fn linear(slope: f64, c_h: f64) -> Result<Self, DriverError> {
        if !(slope > c_h) {
            return Err(DriverError::Precondition(format!("slope {slope} must exceed c_h {c_h}")));
        }
        MonotoneNet::new(None, softplus_inverse(slope - c_h), c_h)
    }

    pub fn mlp(&self) -> Option<&MlpParams> {
        self.mlp.as_ref()
    }
    pub fn skip_raw_slope(&self) -> f64 {
        self.skip_raw_slope
    }
    pub fn c_h(&self) -> f64 {
        self.c_h
    }
    /// Lower bound on `dh/dz` including the skip connection.
    pub fn slope_floor(&self) -> f64 {
        self.c_h + softplus(self.skip_raw_slope)
    }

    pub fn value(&self, t: f64, x: f64, z: f64) -> f64 {
        let net = self.mlp.as_ref().map_or(0.0, |m| m.forward(&[t, x, z]));
        net + self.slope_floor() * z
    }

    pub fn value_and_dz(&self, t: f64, x: f64, z: f64) -> (f64, f64) {
        let slope = self.slope_floor();
        match &self.mlp {
            Some(m) => {
                let (v, d) = m.value_and_partial(&[t, x, z], 2);
                (v + slope * z, d + slope)
            }
            None => (slope * z, slope),
        }
    }

    pub fn n_params(&self) -> usize {
        self.mlp.as_ref().map_or(0, MlpParams::n_params) + 1
    }

    pub fn param_vector(&self) -> Vec<f64> {
        let mut v = self.mlp.as_ref().map(MlpParams::param_vector).unwrap_or_default();
        v.push(self.skip_raw_slope);
        v
    }

    pub fn set_param_vector(&mut self, theta: &[f64]) {
        let n = theta.len() - 1;
        if let Some(m) = self.mlp.as_mut() {
            m.set_param_vector(&theta[..n]);
        }
        self.skip_raw_slope = theta[n];
    }

    /// Accumulates `scale * dh/dtheta` at `(t, x, z)` into `grad` and returns `h`.
    pub(crate) fn accumulate_param_grad(&self, t: f64, x: f64, z: f64, scale: f64, grad: &mut [f64]) -> f64 {
        let n = grad.len() - 1;
        let net = match &self.mlp {
            Some(m) => {
                let trace = m.forward_trace(&[t, x, z]);
                m.backward(&trace, scale, Some(&mut grad[..n]));
                trace.output()
            }
            None => 0.0,
        };
        grad[n] += scale * z * super::mlp::sigmoid(self.skip_raw_slope);
        net + self.slope_floor() * z
    }
}

/// `f(t, x, y, z) = h1(t, x, z) - h2(t, x) - mu y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedMonotone {
    h: MonotoneNet,
    shift: MlpParams,
    mu: f64,
}

impl ShiftedMonotone {
    pub fn new(h: MonotoneNet, shift: MlpParams, mu: f64) -> Result<Self, DriverError> {
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(DriverError::Precondition(format!("mu must be finite and >= 0, got {mu}")));
        }
        if shift.n_inputs() != 2 {
            return Err(DriverError::Shape(format!("shift network takes (t, m), got {} inputs", shift.n_inputs())));
        }
        Ok(ShiftedMonotone { h, shift, mu })
    }
    pub fn h(&self) -> &MonotoneNet {
        &self.h
    }
    pub fn shift(&self) -> &MlpParams {
        &self.shift
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
}

/// `g(z) = sum_k c_k z^k`, deliberately allowed to have several roots.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    coefficients: Vec<f64>,
}

impl Polynomial {
    /// Coefficients in ascending powers of z.
    pub fn new(coefficients: Vec<f64>) -> Result<Self, DriverError> {
        if coefficients.is_empty() {
            return Err(DriverError::Precondition("polynomial needs at least one coefficient".into()));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(DriverError::Domain("polynomial coefficients must be finite".into()));
        }
        Ok(Polynomial { coefficients })
    }

    /// Monic polynomial with the given roots.
    pub fn from_roots(roots: &[f64]) -> Self {
        let mut c = vec![1.0];
        for &r in roots {
            let mut next = vec![0.0; c.len() + 1];
            for (k, &ck) in c.iter().enumerate() {
                next[k + 1] += ck;
                next[k] -= r * ck;
            }
            c = next;
        }
        Polynomial { coefficients: c }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn value_and_derivative(&self, z: f64) -> (f64, f64) {
        let mut p = 0.0;
        let mut dp = 0.0;
        for &c in self.coefficients.iter().rev() {
            dp = dp * z + p;
            p = p * z + c;
        }
        (p, dp)
    }
}

/// `g(t, x, mu, z) = h1(t, x, z) - E_{Y~mu}[phi(x, Y)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldDriver {
    h: MonotoneNet,
    interaction: MlpParams,
}

impl MeanFieldDriver {
    pub fn new(h: MonotoneNet, interaction: MlpParams) -> Result<Self, DriverError> {
        if interaction.n_inputs() != 2 {
            return Err(DriverError::Shape(format!(
                "interaction network takes (x, y), got {} inputs",
                interaction.n_inputs()
            )));
        }
        Ok(MeanFieldDriver { h, interaction })
    }
    pub fn h(&self) -> &MonotoneNet {
        &self.h
    }
    pub fn interaction(&self) -> &MlpParams {
        &self.interaction
    }

    /// `(1/N) sum_j phi(x, y_j)`.
    pub fn interaction_mean(&self, x: f64, sample: &[f64]) -> Result<f64, DriverError> {
        if sample.is_empty() {
            return Err(DriverError::Precondition("empirical measure needs a non-empty sample".into()));
        }
        let s: f64 = sample.iter().map(|&y| self.interaction.forward(&[x, y])).sum();
        Ok(s / sample.len() as f64)
    }

    pub fn value(&self, t: f64, x: f64, sample: &[f64], z: f64) -> Result<f64, DriverError> {
        check_finite(&[t, x, z])?;
        Ok(self.h.value(t, x, z) - self.interaction_mean(x, sample)?)
    }

    /// `L_{h,w} * L_{phi,y}`: a Lipschitz constant of the implicit volatility
    /// with respect to the measure argument in W2.
    pub fn measure_lipschitz_bound(&self) -> f64 {
        self.interaction.input_lipschitz_bound(1) / self.h.slope_floor()
    }
}

/// A driver in specialised form `g(t, m, z) = f(t, m, m, z)`.
#[derive(Debug, Clone, PartialEq)]
pub enum SpecializedDriver {
    QuadraticConstant(QuadraticDriver),
    MonotoneNetwork(MonotoneNet),
    ShiftedMonotone(ShiftedMonotone),
    PolynomialTest(Polynomial),
    MeanField(MeanFieldDriver),
}

/// The general driver `f(t, x, y, z)` of a one-dimensional BSDE.
pub trait GeneralDriver: Sync {
    fn general(&self, t: f64, x: f64, y: f64, z: f64) -> Result<f64, DriverError>;
}

fn check_finite(args: &[f64]) -> Result<(), DriverError> {
    if args.iter().all(|a| a.is_finite()) {
        Ok(())
    } else {
        Err(DriverError::Domain(format!("non-finite driver argument in {args:?}")))
    }
}

impl SpecializedDriver {
    pub fn quadratic(alpha: f64, beta: f64) -> Result<Self, DriverError> {
        Ok(SpecializedDriver::QuadraticConstant(QuadraticDriver::new(alpha, beta)?))
    }

    pub fn polynomial(coefficients: Vec<f64>) -> Result<Self, DriverError> {
        Ok(SpecializedDriver::PolynomialTest(Polynomial::new(coefficients)?))
    }

    pub fn kind(&self) -> DriverKind {
        match self {
            SpecializedDriver::QuadraticConstant(_) => DriverKind::QuadraticConstant,
            SpecializedDriver::MonotoneNetwork(_) => DriverKind::MonotoneNetwork,
            SpecializedDriver::ShiftedMonotone(_) => DriverKind::ShiftedMonotone,
            SpecializedDriver::PolynomialTest(_) => DriverKind::PolynomialTest,
            SpecializedDriver::MeanField(_) => DriverKind::MeanField,
        }
    }

    /// Kinds whose g is strictly increasing in z by construction.
    pub fn is_increasing_in_z(&self) -> bool {
        matches!(
            self,
            SpecializedDriver::MonotoneNetwork(_)
                | SpecializedDriver::ShiftedMonotone(_)
                | SpecializedDriver::MeanField(_)
        )
    }

    /// Kinds with at most one positive root in z for every (t, m).
    pub fn has_unique_positive_root(&self) -> bool {
        self.is_increasing_in_z() || matches!(self, SpecializedDriver::QuadraticConstant(_))
    }

    /// Kinds whose g does not depend on (t, m).
    pub fn is_state_independent(&self) -> bool {
        matches!(self, SpecializedDriver::QuadraticConstant(_) | SpecializedDriver::PolynomialTest(_))
    }

    /// Guaranteed lower bound on dg/dz for the monotone kinds.
    pub fn c_h(&self) -> Option<f64> {
        match self {
            SpecializedDriver::MonotoneNetwork(h) => Some(h.c_h()),
            SpecializedDriver::ShiftedMonotone(s) => Some(s.h.c_h()),
            SpecializedDriver::MeanField(m) => Some(m.h.c_h()),
            _ => None,
        }
    }

    /// g(t, m, z) and dg/dz.
    pub fn value_and_dz(&self, t: f64, m: f64, z: f64) -> Result<(f64, f64), DriverError> {
        check_finite(&[t, m, z])?;
        Ok(match self {
            SpecializedDriver::QuadraticConstant(q) => (0.5 * q.alpha * z * z - q.beta, q.alpha * z),
            SpecializedDriver::MonotoneNetwork(h) => h.value_and_dz(t, m, z),
            SpecializedDriver::ShiftedMonotone(s) => {
                let (v, d) = s.h.value_and_dz(t, m, z);
                (v - s.shift.forward(&[t, m]) - s.mu * m, d)
            }
            SpecializedDriver::PolynomialTest(p) => p.value_and_derivative(z),
            SpecializedDriver::MeanField(_) => {
                return Err(DriverError::UnsupportedKind {
                    op: "specialized evaluation without a measure",
                    kind: DriverKind::MeanField,
                })
            }
        })
    }

    pub fn value(&self, t: f64, m: f64, z: f64) -> Result<f64, DriverError> {
        self.value_and_dz(t, m, z).map(|(v, _)| v)
    }

    pub fn dz(&self, t: f64, m: f64, z: f64) -> Result<f64, DriverError> {
        self.value_and_dz(t, m, z).map(|(_, d)| d)
    }

    /// Number of entries in [`param_vector`](Self::param_vector).
    pub fn n_params(&self) -> usize {
        self.param_vector().len()
    }

    /// Unconstrained parameters. Any vector of this length maps back to a
    /// driver that satisfies the kind's invariants.
    pub fn param_vector(&self) -> Vec<f64> {
        match self {
            SpecializedDriver::QuadraticConstant(q) => vec![q.alpha.abs().ln(), q.beta.abs().ln()],
            SpecializedDriver::MonotoneNetwork(h) => h.param_vector(),
            SpecializedDriver::ShiftedMonotone(s) => {
                let mut v = s.h.param_vector();
                v.extend(s.shift.param_vector());
                v
            }
            SpecializedDriver::PolynomialTest(p) => p.coefficients.clone(),
            SpecializedDriver::MeanField(m) => {
                let mut v = m.h.param_vector();
                v.extend(m.interaction.param_vector());
                v
            }
        }
    }

    pub fn with_param_vector(&self, theta: &[f64]) -> Result<Self, DriverError> {
        if theta.len() != self.n_params() {
            return Err(DriverError::Shape(format!("expected {} parameters, got {}", self.n_params(), theta.len())));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(DriverError::Domain("parameters must be finite".into()));
        }
        let mut out = self.clone();
        match &mut out {
            SpecializedDriver::QuadraticConstant(q) => {
                let alpha = q.alpha.signum() * theta[0].exp();
                let beta = q.beta.signum() * theta[1].exp();
                *q = QuadraticDriver::new(alpha, beta)?;
            }
            SpecializedDriver::MonotoneNetwork(h) => h.set_param_vector(theta),
            SpecializedDriver::ShiftedMonotone(s) => {
                let n = s.h.n_params();
                s.h.set_param_vector(&theta[..n]);
                s.shift.set_param_vector(&theta[n..]);
            }
            SpecializedDriver::PolynomialTest(p) => p.coefficients.copy_from_slice(theta),
            SpecializedDriver::MeanField(m) => {
                let n = m.h.n_params();
                m.h.set_param_vector(&theta[..n]);
                m.interaction.set_param_vector(&theta[n..]);
            }
        }
        Ok(out)
    }
}

impl GeneralDriver for SpecializedDriver {
    /// `f(t, x, y, z)`. Only the shifted kind depends on y (through `-mu y`);
    /// the other non-mean-field kinds are y-independent, so `f(t, m, m, z) = g(t, m, z)`.
    fn general(&self, t: f64, x: f64, y: f64, z: f64) -> Result<f64, DriverError> {
        check_finite(&[t, x, y, z])?;
        match self {
            SpecializedDriver::QuadraticConstant(q) => Ok(0.5 * q.alpha * z * z - q.beta),
            SpecializedDriver::MonotoneNetwork(h) => Ok(h.value(t, x, z)),
            SpecializedDriver::ShiftedMonotone(s) => Ok(s.h.value(t, x, z) - s.shift.forward(&[t, x]) - s.mu * y),
            SpecializedDriver::PolynomialTest(p) => Ok(p.value_and_derivative(z).0),
            SpecializedDriver::MeanField(_) => {
                Err(DriverError::UnsupportedKind { op: "general driver evaluation", kind: DriverKind::MeanField })
            }
        }
    }
}
