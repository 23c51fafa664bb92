//! Count-distribution helpers used by distributional checks.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Poisson pmf for `k = 0..len`, by recurrence.
pub fn poisson_pmf(mean: f64, len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let mut p = (-mean).exp();
    for k in 0..len {
        out.push(p);
        p *= mean / (k + 1) as f64;
    }
    out
}

/// Skellam pmf (difference of independent Poisson(μ₁) and Poisson(μ₂)) on `−kmax..=kmax`,
/// by direct convolution; index `k + kmax`.
pub fn skellam_pmf(mu1: f64, mu2: f64, kmax: usize) -> Vec<f64> {
    let len = kmax + 60 + (4.0 * (mu1 + mu2)) as usize;
    let (p, q) = (poisson_pmf(mu1, len), poisson_pmf(mu2, len));
    (0..=2 * kmax)
        .map(|i| {
            let k = i as i64 - kmax as i64;
            q.iter()
                .enumerate()
                .filter_map(|(m, &qm)| {
                    let n = m as i64 + k;
                    (n >= 0 && (n as usize) < len).then(|| p[n as usize] * qm)
                })
                .sum::<f64>()
        })
        .collect()
}

/// Result of a χ² goodness-of-fit test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GofResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// χ² goodness of fit of observed integer samples against a pmf on `lo..lo+pmf.len()`. Cells are
/// merged from the tails inward until every expected count is at least 5; the tails beyond the
/// pmf's support join the outermost cells.
pub fn chi2_gof(samples: &[i64], lo: i64, pmf: &[f64]) -> GofResult {
    let n = samples.len() as f64;
    let m = pmf.len();
    let mut obs = vec![0.0; m];
    for &x in samples {
        let i = (x - lo).clamp(0, m as i64 - 1) as usize;
        obs[i] += 1.0;
    }
    let mut exp: Vec<f64> = pmf.iter().map(|p| p * n).collect();
    let below: f64 = 1.0 - pmf.iter().sum::<f64>();
    // Unrepresented mass is split over the two tail cells.
    exp[0] += 0.5 * below.max(0.0) * n;
    exp[m - 1] += 0.5 * below.max(0.0) * n;
    let mut cells: Vec<(f64, f64)> = obs.into_iter().zip(exp).collect();
    let merge_front = |cells: &mut Vec<(f64, f64)>| {
        while cells.len() > 2 && cells[0].1 < 5.0 {
            let (o, e) = cells.remove(0);
            cells[0].0 += o;
            cells[0].1 += e;
        }
    };
    merge_front(&mut cells);
    cells.reverse();
    merge_front(&mut cells);
    let statistic: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = cells.len().saturating_sub(1).max(1);
    let p_value = 1.0 - ChiSquared::new(dof as f64).expect("positive dof").cdf(statistic);
    GofResult { statistic, dof, p_value }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `I_k(x)` by its power series.
    fn bessel_i(k: u32, x: f64) -> f64 {
        let mut term = (x / 2.0).powi(k as i32) / (1..=k).map(f64::from).product::<f64>();
        let mut sum = term;
        for m in 1..200 {
            term *= (x / 2.0).powi(2) / (m as f64 * (m + k) as f64);
            sum += term;
        }
        sum
    }

    #[test]
    fn skellam_matches_bessel_form() {
        let (a, b) = (0.7, 0.4);
        let pmf = skellam_pmf(a, b, 6);
        for k in -6i64..=6 {
            let oracle = (-(a + b)).exp() * (a / b).powf(k as f64 / 2.0) * bessel_i(k.unsigned_abs() as u32, 2.0 * (a * b).sqrt());
            assert!((pmf[(k + 6) as usize] - oracle).abs() < 1e-14, "k = {k}");
        }
    }

    #[test]
    fn gof_accepts_exact_frequencies_and_rejects_shift() {
        let pmf = poisson_pmf(2.0, 15);
        let mut xs = Vec::new();
        for (k, p) in pmf.iter().enumerate() {
            xs.extend(std::iter::repeat_n(k as i64, (p * 10_000.0).round() as usize));
        }
        assert!(chi2_gof(&xs, 0, &pmf).p_value > 0.99);
        let shifted: Vec<i64> = xs.iter().map(|x| x + 1).collect();
        assert!(chi2_gof(&shifted, 0, &pmf).p_value < 1e-6);
    }
}
