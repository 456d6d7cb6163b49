// SPDX-License-Identifier: MIT OR Apache-2.0

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean (sample standard deviation / sqrt(n)).
pub fn standard_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::Statistics(format!("lengths differ: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::Statistics(format!("need at least 3 points, got {}", xs.len())));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Statistics("non-finite input".into()));
    }
    Ok(())
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Statistics("constant input has no correlation".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation and its two-sided p-value from the
/// t-approximation `t = rho * sqrt((n - 2) / (1 - rho^2))` with `n - 2` dof.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    check_pair(xs, ys)?;
    let rho = pearson(&average_ranks(xs), &average_ranks(ys))?;
    let n = xs.len() as f64;
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * ((n - 2.0) / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, n - 2.0).map_err(|e| Error::Statistics(e.to_string()))?;
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok((rho, p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn spearman_extremes() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let (rho, p) = spearman(&xs, &xs).unwrap();
        assert!((rho - 1.0).abs() < 1e-12);
        assert_eq!(p, 0.0);
        let rev: Vec<f64> = xs.iter().map(|x| -x * x).collect();
        assert!((spearman(&xs, &rev).unwrap().0 + 1.0).abs() < 1e-12);
        assert!(spearman(&xs, &[1.0; 5]).is_err());
        assert!(spearman(&xs[..2], &xs[..2]).is_err());
    }

    #[test]
    fn spearman_p_value_matches_reference() {
        // scipy.stats.spearmanr([1,2,3,4,5,6,7,8], [2,1,4,3,7,8,6,5]) -> (0.7380952, 0.0365528)
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let ys = [2.0, 1.0, 4.0, 3.0, 7.0, 8.0, 6.0, 5.0];
        let (rho, p) = spearman(&xs, &ys).unwrap();
        assert!((rho - 0.738_095_238).abs() < 1e-6);
        assert!((p - 0.036_552_761).abs() < 1e-6, "{p}");
    }

    #[test]
    fn standard_error_of_known_sample() {
        let se = standard_error(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert!((se - 2.138_089_935 / 8f64.sqrt()).abs() < 1e-9);
    }
}
