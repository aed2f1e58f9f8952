//! Least-squares projection onto a standardised polynomial basis.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::BsdeError;

/// Basis `1, u, u^2, ..., u^degree` with `u = (x - centre) / scale`,
/// fitted to one cross-section of states. A cross-section with no spread
/// gets the intercept alone.
#[derive(Debug, Clone)]
pub struct Projector {
    centre: f64,
    scale: f64,
    degree: usize,
    /// Cholesky factor of the Gram matrix.
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    condition: f64,
    basis: Vec<f64>,
    n: usize,
}

impl Projector {
    pub fn new(xs: &[f64], degree: usize, max_condition: f64, step: usize) -> Result<Self, BsdeError> {
        let n = xs.len();
        let centre = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - centre) * (x - centre)).sum::<f64>() / n as f64;
        let (scale, degree) =
            if var > 0.0 && var.sqrt() > 1e-12 * centre.abs().max(1.0) { (var.sqrt(), degree) } else { (1.0, 0) };
        let p = degree + 1;
        let mut basis = vec![0.0; n * p];
        for (i, &x) in xs.iter().enumerate() {
            let u = (x - centre) / scale;
            let row = &mut basis[i * p..(i + 1) * p];
            row[0] = 1.0;
            for j in 1..p {
                row[j] = row[j - 1] * u;
            }
        }
        let mut gram = DMatrix::<f64>::zeros(p, p);
        for row in basis.chunks_exact(p) {
            for a in 0..p {
                for b in a..p {
                    gram[(a, b)] += row[a] * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                gram[(a, b)] = gram[(b, a)];
            }
        }
        gram /= n as f64;
        let eig = SymmetricEigen::new(gram.clone());
        let lmax = eig.eigenvalues.max();
        let lmin = eig.eigenvalues.min();
        let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
        if !(condition <= max_condition) {
            return Err(BsdeError::IllConditioned { step, condition });
        }
        let chol = gram.cholesky().ok_or(BsdeError::IllConditioned { step, condition })?;
        Ok(Projector { centre, scale, degree, chol, condition, basis, n })
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Degree actually used (0 for a degenerate cross-section).
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coefficients(&self, ys: &[f64]) -> DVector<f64> {
        let p = self.degree + 1;
        let mut rhs = DVector::<f64>::zeros(p);
        for (row, &y) in self.basis.chunks_exact(p).zip(ys) {
            for a in 0..p {
                rhs[a] += row[a] * y;
            }
        }
        rhs /= self.n as f64;
        self.chol.solve(&rhs)
    }

    /// Fitted values of `ys` at the sample states.
    pub fn project(&self, ys: &[f64]) -> Vec<f64> {
        let c = self.coefficients(ys);
        let p = self.degree + 1;
        self.basis.chunks_exact(p).map(|row| row.iter().zip(c.iter()).map(|(b, c)| b * c).sum()).collect()
    }

    /// The fitted function evaluated at an arbitrary state.
    pub fn evaluate(&self, coefficients: &DVector<f64>, x: f64) -> f64 {
        let u = (x - self.centre) / self.scale;
        let mut acc = 0.0;
        let mut pow = 1.0;
        for c in coefficients.iter() {
            acc += c * pow;
            pow *= u;
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_polynomials_exactly() {
        let xs: Vec<f64> = (0..200).map(|i| i as f64 / 50.0 - 2.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - 2.0 * x + 0.5 * x * x * x).collect();
        let p = Projector::new(&xs, 3, 1e12, 0).unwrap();
        for (f, y) in p.project(&ys).iter().zip(&ys) {
            assert!((f - y).abs() < 1e-10);
        }
        let c = p.coefficients(&ys);
        assert!((p.evaluate(&c, 0.3) - (1.0 - 0.6 + 0.5 * 0.027)).abs() < 1e-10);
    }

    #[test]
    fn constant_states_fall_back_to_the_mean() {
        let xs = vec![0.0; 10];
        let ys: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let p = Projector::new(&xs, 3, 1e12, 0).unwrap();
        assert_eq!(p.degree(), 0);
        assert!(p.project(&ys).iter().all(|&v| (v - 4.5).abs() < 1e-14));
    }

    #[test]
    fn ill_conditioning_is_reported() {
        // two distinct states cannot support a cubic
        let xs: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
        assert!(matches!(Projector::new(&xs, 3, 1e12, 7), Err(BsdeError::IllConditioned { step: 7, .. })));
    }
}
