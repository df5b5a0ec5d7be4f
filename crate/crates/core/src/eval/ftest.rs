use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::seed;

pub const ITERATIONS: usize = 5;

/// Outcome of the combined 5×2 cross-validation F-test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiveByTwoResult {
    /// `differences[i][j]`: metric of A minus metric of B on fold `j` of iteration `i`.
    pub differences: [[f64; 2]; ITERATIONS],
    pub means: [f64; ITERATIONS],
    pub variances: [f64; ITERATIONS],
    pub f: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
    /// Every difference was zero, so there is nothing to test.
    pub no_difference: bool,
}

impl FiveByTwoResult {
    pub fn from_differences(differences: [[f64; 2]; ITERATIONS], alpha: f64) -> Result<Self, EvalError> {
        if let Some(&bad) = differences.iter().flatten().find(|x| !x.is_finite()) {
            return Err(EvalError::NonFinite(bad));
        }
        let mut means = [0.0; ITERATIONS];
        let mut variances = [0.0; ITERATIONS];
        for (i, [a, b]) in differences.iter().enumerate() {
            means[i] = (a + b) / 2.0;
            variances[i] = (a - means[i]).powi(2) + (b - means[i]).powi(2);
        }
        let num: f64 = differences.iter().flatten().map(|p| p * p).sum();
        let den = 2.0 * variances.iter().sum::<f64>();
        if den == 0.0 {
            if num == 0.0 {
                return Ok(Self {
                    differences,
                    means,
                    variances,
                    f: 0.0,
                    p_value: 1.0,
                    alpha,
                    reject: false,
                    no_difference: true,
                });
            }
            return Err(EvalError::DegenerateVariance);
        }
        let f = num / den;
        let p_value = f_upper_tail(f, 10.0, 5.0)?;
        Ok(Self {
            differences,
            means,
            variances,
            f,
            p_value,
            alpha,
            reject: p_value < alpha,
            no_difference: false,
        })
    }
}

/// `P(X > f)` for `X ~ F(d1, d2)`.
pub fn f_upper_tail(f: f64, d1: f64, d2: f64) -> Result<f64, EvalError> {
    if !f.is_finite() {
        return Err(EvalError::NonFinite(f));
    }
    if f <= 0.0 {
        return Ok(1.0);
    }
    Ok(regularized_incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)))
}

/// `I_x(a, b)` by a continued fraction (modified Lentz).
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const TOL: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < TOL {
            break;
        }
    }
    h
}

/// One train/test assignment inside the 5×2 scheme.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSpec {
    pub iteration: usize,
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Seed for anything trained on this fold.
    pub seed: u64,
}

/// Five stratified halvings of `0..strata.len()`.
pub fn two_fold_splits(strata: &[usize], seed: u64) -> Vec<[Vec<usize>; 2]> {
    let n_strata = strata.iter().copied().max().map_or(0, |m| m + 1);
    (0..ITERATIONS)
        .map(|i| {
            let mut rng = seed::rng(seed, &format!("5x2cv-{i}"));
            let mut halves = [Vec::new(), Vec::new()];
            let mut k = 0usize;
            for s in 0..n_strata {
                let mut members: Vec<usize> = (0..strata.len()).filter(|&j| strata[j] == s).collect();
                members.shuffle(&mut rng);
                for m in members {
                    halves[k % 2].push(m);
                    k += 1;
                }
            }
            halves.iter_mut().for_each(|h| h.sort_unstable());
            halves
        })
        .collect()
}

/// Runs `evaluate` on all ten folds (in parallel) and tests the differences.
///
/// `evaluate` returns the metric of model A and of model B on the fold's test half.
pub fn five_by_two_cv_f_test<F>(
    strata: &[usize],
    seed: u64,
    alpha: f64,
    evaluate: F,
) -> Result<FiveByTwoResult, EvalError>
where
    F: Fn(&FoldSpec) -> Result<(f64, f64), EvalError> + Sync,
{
    if strata.len() < 4 {
        return Err(EvalError::Empty);
    }
    let folds: Vec<FoldSpec> = two_fold_splits(strata, seed)
        .into_iter()
        .enumerate()
        .flat_map(|(i, [a, b])| {
            [
                FoldSpec {
                    iteration: i,
                    fold: 0,
                    train: a.clone(),
                    test: b.clone(),
                    seed: seed::derive(seed, &format!("5x2cv-run-{i}-0")),
                },
                FoldSpec {
                    iteration: i,
                    fold: 1,
                    train: b,
                    test: a,
                    seed: seed::derive(seed, &format!("5x2cv-run-{i}-1")),
                },
            ]
        })
        .collect();
    let scores = folds
        .par_iter()
        .map(|f| evaluate(f))
        .collect::<Result<Vec<_>, _>>()?;
    let mut d = [[0.0; 2]; ITERATIONS];
    for (f, (a, b)) in folds.iter().zip(scores) {
        d[f.iteration][f.fold] = a - b;
    }
    FiveByTwoResult::from_differences(d, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_endpoints_and_monotonicity() {
        assert_eq!(f_upper_tail(0.0, 10.0, 5.0).unwrap(), 1.0);
        let mut last = 1.0;
        for k in 1..200 {
            let p = f_upper_tail(k as f64 * 0.1, 10.0, 5.0).unwrap();
            assert!(p < last);
            last = p;
        }
        assert!(f_upper_tail(f64::NAN, 10.0, 5.0).is_err());
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, 1) = x and I_x(a, 1) = x^a
        for x in [0.1, 0.5, 0.9] {
            assert!((regularized_incomplete_beta(1.0, 1.0, x) - x).abs() < 1e-14);
            assert!((regularized_incomplete_beta(2.5, 1.0, x) - x.powf(2.5)).abs() < 1e-13);
        }
    }

    #[test]
    fn constant_nonzero_differences_are_degenerate() {
        let d = [[0.1, 0.1]; 5];
        assert!(matches!(
            FiveByTwoResult::from_differences(d, 0.05),
            Err(EvalError::DegenerateVariance)
        ));
        let z = FiveByTwoResult::from_differences([[0.0; 2]; 5], 0.05).unwrap();
        assert!(z.no_difference && !z.reject && z.p_value == 1.0);
    }

    #[test]
    fn halves_are_balanced_and_disjoint() {
        let strata: Vec<usize> = (0..101).map(|i| i % 3).collect();
        for [a, b] in two_fold_splits(&strata, 4) {
            assert!((a.len() as i64 - b.len() as i64).abs() <= 1);
            assert!(a.iter().all(|x| !b.contains(x)));
            for s in 0..3 {
                let ca = a.iter().filter(|&&i| strata[i] == s).count() as i64;
                let cb = b.iter().filter(|&&i| strata[i] == s).count() as i64;
                assert!((ca - cb).abs() <= 1);
            }
        }
        assert_eq!(two_fold_splits(&strata, 4), two_fold_splits(&strata, 4));
    }
}
