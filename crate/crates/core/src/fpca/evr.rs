//! Eigenvalue-ratio selection of the number of retained components.
//!
//! Both selectors minimise, over `1 <= k <= n - 1`, the term
//! `ratio_k * 1[gate_k] + 1[!gate_k]` with `ratio_k = lambda_{k+1} / lambda_k`
//! and threshold `delta = 1 / ln(max(lambda_1, n))`. They differ only in the
//! gate:
//!
//! * [`EvrGate::Adjacent`]: `ratio_k >= delta`, the gate as literally printed
//!   with the criterion.
//! * [`EvrGate::Leading`]: `lambda_k / lambda_1 >= delta`, which restricts the
//!   search to components that are not negligible next to the leading one.
//!
//! Ties go to the smallest `k`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvrGate {
    #[default]
    Leading,
    Adjacent,
}

/// `1 / ln(max(lambda_1, n))`.
pub fn evr_threshold(lambda1: f64, n: usize) -> f64 {
    1.0 / lambda1.max(n as f64).ln()
}

/// Number of strictly positive eigenvalues.
fn positive_rank(eigenvalues: &[f64]) -> usize {
    eigenvalues.iter().take_while(|&&l| l > 0.0).count()
}

/// Selection with the adjacent-ratio gate. The search stops at
/// `rank - 1` so that no ratio divides by a zero eigenvalue.
pub fn select_k_evr(eigenvalues: &[f64], n: usize) -> usize {
    select_k(eigenvalues, n, EvrGate::Adjacent)
}

pub fn select_k(eigenvalues: &[f64], n: usize, gate: EvrGate) -> usize {
    let Some(&lambda1) = eigenvalues.first() else {
        return 1;
    };
    if lambda1 <= 0.0 || n < 2 {
        return 1;
    }
    let delta = evr_threshold(lambda1, n);
    let mut k_max = (n - 1).min(eigenvalues.len().saturating_sub(1));
    if gate == EvrGate::Adjacent {
        k_max = k_max.min(positive_rank(eigenvalues).saturating_sub(1));
    }
    let mut best = (1usize, f64::INFINITY);
    for k in 1..=k_max {
        let (lk, lk1) = (eigenvalues[k - 1], eigenvalues[k]);
        let term = match gate {
            EvrGate::Adjacent => {
                let ratio = lk1 / lk;
                if ratio >= delta {
                    ratio
                } else {
                    1.0
                }
            }
            EvrGate::Leading => {
                if lk / lambda1 >= delta {
                    lk1 / lk
                } else {
                    1.0
                }
            }
        };
        if term < best.1 {
            best = (k, term);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjacent_examples() {
        assert!((evr_threshold(10.0, 100) - 0.21715).abs() < 1e-5);
        assert_eq!(select_k_evr(&[10.0, 1.0, 0.5], 100), 2);
        assert!((evr_threshold(4.0, 3) - 0.72135).abs() < 1e-5);
        assert_eq!(select_k_evr(&[4.0, 2.0, 1.0], 3), 1);
        assert_eq!(select_k_evr(&[1.0, 1.0], 10), 1);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(select_k_evr(&[0.0, 0.0, 0.0], 10), 1);
        assert_eq!(select_k_evr(&[], 10), 1);
        assert_eq!(select_k_evr(&[5.0, 0.0, 0.0], 10), 1);
        assert_eq!(select_k(&[0.0, 0.0], 10, EvrGate::Leading), 1);
    }

    #[test]
    fn leading_gate_finds_the_gap() {
        // two strong components, then a flat noise floor
        let eig = [9.0, 4.0, 0.01, 0.0095, 0.009, 0.0085];
        assert_eq!(select_k(&eig, 48, EvrGate::Leading), 2);
        // the adjacent gate skips the tiny ratio and settles on the flattest noise pair
        assert_ne!(select_k(&eig, 48, EvrGate::Adjacent), 2);
    }

    #[test]
    fn search_is_capped_by_sample_size() {
        let eig = [10.0, 9.0, 8.0, 0.1];
        // n = 2 allows only k = 1
        assert_eq!(select_k(&eig, 2, EvrGate::Leading), 1);
    }
}
