//! Truncated stick-breaking weights over the units of the phone loop.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

pub const DEFAULT_CONCENTRATION: f64 = 1.0;
pub const DEFAULT_TRUNCATION: usize = 100;

/// Beta posteriors `q(v_u) = Beta(a_u, b_u)` of the stick proportions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhoneLoop {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub concentration: f64,
}

impl PhoneLoop {
    /// Posterior initialised at the prior `Beta(1, γ)`.
    pub fn new(truncation: usize, concentration: f64) -> Result<Self> {
        if truncation == 0 {
            return Err(Error::InvalidInput("truncation must be at least 1".into()));
        }
        if !(concentration > 0.0 && concentration.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "concentration must be positive, got {concentration}"
            )));
        }
        Ok(Self {
            a: vec![1.0; truncation],
            b: vec![concentration; truncation],
            concentration,
        })
    }

    pub fn from_parts(a: Vec<f64>, b: Vec<f64>, concentration: f64) -> Result<Self> {
        if a.len() != b.len() || a.is_empty() {
            return Err(Error::InvalidInput("stick parameter lengths differ".into()));
        }
        if a.iter().chain(&b).any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidInput("stick parameters must be positive".into()));
        }
        Ok(Self { a, b, concentration })
    }

    pub fn truncation(&self) -> usize {
        self.a.len()
    }

    /// `E[ln w_u] = ψ(a_u) − ψ(a_u+b_u) + Σ_{v<u} (ψ(b_v) − ψ(a_v+b_v))`.
    pub fn expected_log_weights(&self) -> Vec<f64> {
        let mut rest = 0.0;
        self.a
            .iter()
            .zip(&self.b)
            .map(|(&a, &b)| {
                let total = digamma(a + b);
                let w = digamma(a) - total + rest;
                rest += digamma(b) - total;
                w
            })
            .collect()
    }

    /// Closed-form update from expected unit counts:
    /// `a_u = 1 + N_u`, `b_u = γ + Σ_{v>u} N_v`.
    pub fn update(&self, counts: &[f64]) -> Result<Self> {
        if counts.len() != self.truncation() {
            return Err(Error::DimMismatch {
                expected: self.truncation(),
                got: counts.len(),
                context: "unit counts".into(),
            });
        }
        if let Some(c) = counts.iter().find(|c| !(**c >= 0.0 && c.is_finite())) {
            return Err(Error::InvalidInput(format!("unit count {c} is not a nonnegative number")));
        }
        let a = counts.iter().map(|n| 1.0 + n).collect();
        let mut b = vec![0.0; counts.len()];
        let mut tail = 0.0;
        for (slot, &n) in b.iter_mut().zip(counts).rev() {
            *slot = self.concentration + tail;
            tail += n;
        }
        Ok(Self {
            a,
            b,
            concentration: self.concentration,
        })
    }

    /// `Σ_u KL(Beta(a_u, b_u) || Beta(1, γ))`.
    pub fn kl_divergence(&self) -> f64 {
        let g = self.concentration;
        let ln_beta = |a: f64, b: f64| ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
        self.a
            .iter()
            .zip(&self.b)
            .map(|(&a, &b)| {
                ln_beta(1.0, g) - ln_beta(a, b)
                    + (a - 1.0) * digamma(a)
                    + (b - g) * digamma(b)
                    + (1.0 - a + g - b) * digamma(a + b)
            })
            .sum()
    }
}

/// Convenience wrapper matching the free-function form.
pub fn stick_breaking_expected_log_weights(phone_loop: &PhoneLoop) -> Vec<f64> {
    phone_loop.expected_log_weights()
}

pub fn update_stick_breaking(phone_loop: &PhoneLoop, counts: &[f64]) -> Result<PhoneLoop> {
    phone_loop.update(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Beta, Distribution};

    #[test]
    fn single_unit_uniform_stick() {
        let pl = PhoneLoop::new(1, 1.0).unwrap();
        assert!((pl.expected_log_weights()[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn large_a_concentrates_on_first_unit() {
        let pl = PhoneLoop::from_parts(vec![1e9; 3], vec![1.0; 3], 1.0).unwrap();
        let w = pl.expected_log_weights();
        assert!(w[0].abs() < 1e-8);
        assert!(w[1] < -10.0);
    }

    #[test]
    fn truncated_weights_leave_remainder() {
        for u in [1, 2, 5, 100] {
            let pl = PhoneLoop::new(u, 1.0).unwrap();
            let w = pl.expected_log_weights();
            assert!(w.iter().all(|x| x.is_finite() && *x < 0.0));
            assert!(w.iter().map(|x| x.exp()).sum::<f64>() < 1.0);
        }
    }

    #[test]
    fn updates() {
        let pl = PhoneLoop::new(3, 1.0).unwrap();
        assert_eq!(pl.update(&[0.0; 3]).unwrap(), pl);
        let up = pl.update(&[10.0, 0.0, 0.0]).unwrap();
        assert_eq!(up.a, vec![11.0, 1.0, 1.0]);
        assert_eq!(up.b, vec![1.0, 1.0, 1.0]);
        let up = PhoneLoop::new(2, 1.0).unwrap().update(&[2.0, 3.0]).unwrap();
        assert_eq!(up.a, vec![3.0, 4.0]);
        assert_eq!(up.b, vec![4.0, 1.0]);
        assert!(pl.update(&[1.0, -1.0, 0.0]).is_err());
        assert!(pl.update(&[1.0]).is_err());
    }

    #[test]
    fn kl_is_zero_at_prior_and_positive_elsewhere() {
        let pl = PhoneLoop::new(4, 2.0).unwrap();
        assert!(pl.kl_divergence().abs() < 1e-12);
        let up = pl.update(&[3.0, 0.5, 0.0, 7.0]).unwrap();
        assert!(up.kl_divergence() > 0.0);
    }

    #[test]
    fn expected_log_weights_match_monte_carlo() {
        let pl = PhoneLoop::from_parts(vec![2.0, 3.5, 1.2], vec![4.0, 1.5, 2.2], 1.0).unwrap();
        let exact = pl.expected_log_weights();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let betas: Vec<Beta<f64>> = pl.a.iter().zip(&pl.b).map(|(&a, &b)| Beta::new(a, b).unwrap()).collect();
        let n = 200_000;
        let mut sums = vec![0.0; 3];
        let mut sq = vec![0.0; 3];
        for _ in 0..n {
            let mut rest = 0.0;
            for (u, beta) in betas.iter().enumerate() {
                let v: f64 = beta.sample(&mut rng);
                let lw = v.ln() + rest;
                rest += (1.0 - v).ln();
                sums[u] += lw;
                sq[u] += lw * lw;
            }
        }
        for u in 0..3 {
            let mean = sums[u] / n as f64;
            let var = sq[u] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            assert!((mean - exact[u]).abs() < 3.0 * se, "unit {u}: {mean} vs {}", exact[u]);
        }
    }
}
