//! Responsibility-weighted sufficient statistics per Gaussian component.

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

use super::emission::EmissionScores;

/// Statistics for `n_components` Gaussians of dimension `dim`, indexed
/// `(unit * n_states + state) * K + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub dim: usize,
    pub zeroth: Vec<f64>,
    /// `n_components × dim`, row-major.
    pub first: Vec<f64>,
    /// Per-dimension second moments, `n_components × dim`.
    pub second: Vec<f64>,
    /// Expected number of entries into each unit.
    pub unit_counts: Vec<f64>,
}

impl SufficientStats {
    pub fn zeros(n_components: usize, dim: usize, n_units: usize) -> Self {
        Self {
            dim,
            zeroth: vec![0.0; n_components],
            first: vec![0.0; n_components * dim],
            second: vec![0.0; n_components * dim],
            unit_counts: vec![0.0; n_units],
        }
    }

    pub fn n_components(&self) -> usize {
        self.zeroth.len()
    }

    pub fn first_of(&self, c: usize) -> &[f64] {
        &self.first[c * self.dim..][..self.dim]
    }

    pub fn second_of(&self, c: usize) -> &[f64] {
        &self.second[c * self.dim..][..self.dim]
    }

    pub fn total_count(&self) -> f64 {
        self.zeroth.iter().sum()
    }

    pub fn merge(&mut self, other: &SufficientStats) -> Result<()> {
        if self.dim != other.dim
            || self.zeroth.len() != other.zeroth.len()
            || self.unit_counts.len() != other.unit_counts.len()
        {
            return Err(Error::DimMismatch {
                expected: self.zeroth.len(),
                got: other.zeroth.len(),
                context: "merged statistics".into(),
            });
        }
        let add = |a: &mut Vec<f64>, b: &Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.zeroth, &other.zeroth);
        add(&mut self.first, &other.first);
        add(&mut self.second, &other.second);
        add(&mut self.unit_counts, &other.unit_counts);
        Ok(())
    }
}

/// Accumulates statistics from a `n_frames × n_components` responsibility matrix.
pub fn accumulate_stats(resp: &[Vec<f64>], features: &FeatureMatrix) -> Result<SufficientStats> {
    if resp.len() != features.n_frames() {
        return Err(Error::DimMismatch {
            expected: features.n_frames(),
            got: resp.len(),
            context: "responsibility rows".into(),
        });
    }
    let n_comp = resp.first().map_or(0, Vec::len);
    let dim = features.dim();
    let mut stats = SufficientStats::zeros(n_comp, dim, 0);
    for (n, row) in resp.iter().enumerate() {
        if row.len() != n_comp {
            return Err(Error::DimMismatch {
                expected: n_comp,
                got: row.len(),
                context: format!("responsibilities of frame {n}"),
            });
        }
        let x = features.row_f64(n);
        for (c, &g) in row.iter().enumerate() {
            if !(g >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "negative responsibility {g} at frame {n}, component {c}"
                )));
            }
            if g == 0.0 {
                continue;
            }
            stats.zeroth[c] += g;
            for d in 0..dim {
                stats.first[c * dim + d] += g * x[d];
                stats.second[c * dim + d] += g * x[d] * x[d];
            }
        }
    }
    Ok(stats)
}

/// Component responsibilities `γ_n(col) · r_n(col, j)` from emission-column
/// posteriors and the within-mixture responsibilities of `scores`.
pub fn component_responsibilities(column_posteriors: &[Vec<f64>], scores: &EmissionScores) -> Vec<Vec<f64>> {
    let k = scores.n_components;
    column_posteriors
        .iter()
        .zip(&scores.log_resp)
        .map(|(post, lr)| {
            let mut row = vec![0.0; post.len() * k];
            for (col, &p) in post.iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                for j in 0..k {
                    row[col * k + j] = p * lr[col * k + j].exp();
                }
            }
            row
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_frame_moments() {
        let x = FeatureMatrix::from_rows("u", &[vec![1.0, 2.0]]).unwrap();
        let s = accumulate_stats(&[vec![1.0, 0.0]], &x).unwrap();
        assert_eq!(s.zeroth, vec![1.0, 0.0]);
        assert_eq!(s.first_of(0), &[1.0, 2.0]);
        assert_eq!(s.second_of(0), &[1.0, 4.0]);
        assert_eq!(s.first_of(1), &[0.0, 0.0]);
        assert_eq!(s.second_of(1), &[0.0, 0.0]);
    }

    #[test]
    fn negative_responsibility_is_rejected() {
        let x = FeatureMatrix::from_rows("u", &[vec![1.0]]).unwrap();
        assert!(accumulate_stats(&[vec![-0.1]], &x).is_err());
        assert!(accumulate_stats(&[vec![f64::NAN]], &x).is_err());
        assert!(accumulate_stats(&[], &x).is_err());
    }

    proptest! {
        #[test]
        fn merge_is_additive(
            a in prop::collection::vec((-3.0f64..3.0, 0.0f64..1.0, 0.0f64..1.0), 1..10),
            b in prop::collection::vec((-3.0f64..3.0, 0.0f64..1.0, 0.0f64..1.0), 1..10),
        ) {
            let feats = |v: &[(f64, f64, f64)]| FeatureMatrix::from_rows(
                "u", &v.iter().map(|t| vec![t.0]).collect::<Vec<_>>()).unwrap();
            let resp = |v: &[(f64, f64, f64)]| v.iter().map(|t| vec![t.1, t.2]).collect::<Vec<_>>();
            let mut sa = accumulate_stats(&resp(&a), &feats(&a)).unwrap();
            let sb = accumulate_stats(&resp(&b), &feats(&b)).unwrap();
            let all: Vec<_> = a.iter().chain(&b).copied().collect();
            let sab = accumulate_stats(&resp(&all), &feats(&all)).unwrap();
            sa.merge(&sb).unwrap();
            for (x, y) in sa.zeroth.iter().chain(&sa.first).chain(&sa.second)
                .zip(sab.zeroth.iter().chain(&sab.first).chain(&sab.second)) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
