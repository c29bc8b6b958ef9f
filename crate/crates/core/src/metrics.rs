//! Spearman rank and Pearson linear correlation.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub srcc: f64,
    pub plcc: f64,
    pub n: usize,
}

impl MetricReport {
    pub fn compute(pred: &[f64], gt: &[f64]) -> Result<Self> {
        Ok(Self {
            srcc: srcc(pred, gt)?,
            plcc: plcc(pred, gt)?,
            n: pred.len(),
        })
    }
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::UndefinedMetric(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::UndefinedMetric(format!(
            "correlation needs at least 2 samples, got {}",
            a.len()
        )));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::UndefinedMetric("non-finite input".into()));
    }
    Ok(())
}

/// 1-based fractional ranks; tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share rank mean((i+1)..=j)
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

fn pearson_unchecked(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedMetric("zero variance".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson linear correlation coefficient.
pub fn plcc(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_pair(pred, gt)?;
    pearson_unchecked(pred, gt)
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn srcc(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_pair(pred, gt)?;
    pearson_unchecked(&average_ranks(pred), &average_ranks(gt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn srcc_examples() {
        assert_abs_diff_eq!(
            srcc(&[0.1, 0.2, 0.3], &[1.0, 2.0, 3.0]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            srcc(&[3.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(),
            -0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(
            average_ranks(&[10.0, 20.0, 10.0, 30.0]),
            vec![1.5, 3.0, 1.5, 4.0]
        );
        assert_eq!(average_ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn plcc_examples() {
        let gt = [1.0, 4.0, 2.0, 8.0];
        assert_abs_diff_eq!(plcc(&gt, &gt).unwrap(), 1.0, epsilon = 1e-15);
        let anti: Vec<f64> = gt.iter().map(|x| -x + 7.0).collect();
        assert_abs_diff_eq!(plcc(&anti, &gt).unwrap(), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn undefined_cases() {
        assert!(matches!(
            srcc(&[1.0], &[2.0]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            srcc(&[1.0, 1.0], &[2.0, 3.0]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            plcc(&[1.0, 2.0], &[2.0, 2.0]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(plcc(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn distinct(v: &[f64]) -> bool {
            v.iter().any(|x| *x != v[0])
        }

        proptest! {
            #[test]
            fn srcc_invariant_under_monotone_transform(
                a in prop::collection::vec(-10.0f64..10.0, 2..40),
                seed in prop::collection::vec(-10.0f64..10.0, 40),
            ) {
                let b = &seed[..a.len()];
                prop_assume!(distinct(&a) && distinct(b));
                let base = srcc(&a, b).unwrap();
                let ta: Vec<f64> = a.iter().map(|x| x.exp()).collect();
                let tb: Vec<f64> = b.iter().map(|x| x * x * x + 2.0 * x).collect();
                prop_assert_eq!(srcc(&ta, &tb).unwrap(), base);
                prop_assert_eq!(srcc(b, &a).unwrap(), base);
            }

            #[test]
            fn plcc_invariant_under_positive_affine(
                a in prop::collection::vec(-10.0f64..10.0, 2..40),
                seed in prop::collection::vec(-10.0f64..10.0, 40),
                k in 0.1f64..10.0,
                m in -5.0f64..5.0,
            ) {
                let b = &seed[..a.len()];
                prop_assume!(distinct(&a) && distinct(b));
                let base = plcc(&a, b).unwrap();
                let ta: Vec<f64> = a.iter().map(|x| k * x + m).collect();
                prop_assert!((plcc(&ta, b).unwrap() - base).abs() <= 1e-12);
                prop_assert!((plcc(b, &a).unwrap() - base).abs() <= 1e-12);
            }
        }
    }
}
