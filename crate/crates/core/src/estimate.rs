use serde::{Deserialize, Serialize};

/// A value with its standard error and the number of samples behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub n: u64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, stderr: 0.0, n: 0 }
    }

    pub fn new(value: f64, stderr: f64, n: u64) -> Self {
        Estimate { value, stderr, n }
    }

    /// Mean and standard error of the mean.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Estimate::new(f64::NAN, f64::NAN, 0);
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Estimate::new(mean, (var / n as f64).sqrt(), n as u64)
    }

    /// Sample variance with its large-sample standard error `√((m4 − s⁴)/n)`.
    pub fn variance_of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        let var = m2 * n / (n - 1.0);
        Estimate::new(var, ((m4 - m2 * m2).max(0.0) / n).sqrt(), xs.len() as u64)
    }

    /// Distance to `target` in units of the standard error (0/0 counts as agreement).
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.value - target).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.stderr
        }
    }

    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.stderr
    }

    pub fn add(&self, o: &Estimate) -> Estimate {
        Estimate::new(self.value + o.value, self.stderr.hypot(o.stderr), self.n.min(o.n))
    }

    pub fn sub(&self, o: &Estimate) -> Estimate {
        Estimate::new(self.value - o.value, self.stderr.hypot(o.stderr), self.n.min(o.n))
    }

    pub fn scale(&self, c: f64) -> Estimate {
        Estimate::new(c * self.value, c.abs() * self.stderr, self.n)
    }

    /// Quotient of independent estimates, relative errors in quadrature.
    pub fn ratio(&self, o: &Estimate) -> Estimate {
        let v = self.value / o.value;
        let rel = (self.stderr / self.value).hypot(o.stderr / o.value);
        Estimate::new(v, if rel.is_finite() { v.abs() * rel } else { 0.0 }, self.n.min(o.n))
    }

    pub fn relative_error(&self) -> f64 {
        self.stderr / self.value.abs()
    }
}

/// `prefactor · exp(Σ c_k x_k)` for independent estimates `x_k`, first-order error propagation.
pub fn exp_of_sum(prefactor: f64, terms: &[(f64, Estimate)]) -> Estimate {
    let expo: f64 = terms.iter().map(|(c, x)| c * x.value).sum();
    let var: f64 = terms.iter().map(|(c, x)| (c * x.stderr).powi(2)).sum();
    let n = terms.iter().map(|(_, x)| x.n).min().unwrap_or(0);
    let v = prefactor * expo.exp();
    Estimate::new(v, v.abs() * var.sqrt(), n)
}

/// Whether two estimates agree within `k` combined standard errors.
pub fn agree(a: &Estimate, b: &Estimate, k: f64) -> bool {
    (a.value - b.value).abs() <= k * a.stderr.hypot(b.stderr)
}
