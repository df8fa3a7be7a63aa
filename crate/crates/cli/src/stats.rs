//! Summary statistics across repetitions.

use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; `None` below two samples.
pub fn sample_std(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    Some((xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
}

/// Half-width of the two-sided 95% Student-t interval for the mean.
pub fn ci95(xs: &[f64]) -> Option<f64> {
    let sd = sample_std(xs)?;
    let n = xs.len() as f64;
    let t = StudentsT::new(0.0, 1.0, n - 1.0).ok()?.inverse_cdf(0.975);
    Some(t * sd / n.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_matches_tabulated_quantile() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        let half = ci95(&xs).unwrap();
        let expected = 2.262_157_162_740_992 * sample_std(&xs).unwrap() / 10f64.sqrt();
        assert!((half - expected).abs() < 1e-9);
        assert_eq!(ci95(&[1.0]), None);
    }
}
