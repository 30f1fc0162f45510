//! Batch-means error estimation for time series.
//!
//! A long stationary trajectory is cut into consecutive batches; if a batch
//! is much longer than the correlation time, the batch averages are nearly
//! independent and their spread gives the standard error of the overall mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest number of batches accepted for an error bar.
pub const MIN_BATCHES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    /// Number of standard errors separating the estimate from `target`.
    pub fn z_score(&self, target: f64) -> f64 {
        if self.stderr > 0.0 {
            (self.mean - target).abs() / self.stderr
        } else if self.mean == target {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn within(&self, target: f64, sigmas: f64) -> bool {
        self.z_score(target) <= sigmas
    }
}

/// Mean and standard error from equally weighted batch values.
pub fn batch_means(batches: &[f64]) -> Result<Estimate> {
    let n = batches.len();
    if n < MIN_BATCHES {
        return Err(Error::InsufficientSamples(format!(
            "batch means need at least {MIN_BATCHES} batches, got {n}"
        )));
    }
    let mean = batches.iter().sum::<f64>() / n as f64;
    let var = batches.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>() / (n - 1) as f64;
    Ok(Estimate {
        mean,
        stderr: (var / n as f64).sqrt(),
    })
}

/// Covariance `E[xy] − E[x]E[y]` from per-batch averages of `x`, `y` and `xy`.
///
/// The error bar linearises the estimator around the pooled means (delta
/// method): batch `b` contributes `p_b − ȳ x_b − x̄ y_b`.
pub fn batch_covariance(x: &[f64], y: &[f64], xy: &[f64]) -> Result<Estimate> {
    let n = x.len();
    if y.len() != n || xy.len() != n {
        return Err(Error::GridMismatch("batch series have different lengths".into()));
    }
    let mx = x.iter().sum::<f64>() / n.max(1) as f64;
    let my = y.iter().sum::<f64>() / n.max(1) as f64;
    let mp = xy.iter().sum::<f64>() / n.max(1) as f64;
    let linear: Vec<f64> = (0..n).map(|b| xy[b] - my * x[b] - mx * y[b]).collect();
    let lin = batch_means(&linear)?;
    Ok(Estimate {
        mean: mp - mx * my,
        stderr: lin.stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn too_few_batches() {
        assert!(matches!(batch_means(&[1.0; 19]), Err(Error::InsufficientSamples(_))));
        let e = batch_means(&[1.0; 20]).unwrap();
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.stderr, 0.0);
        assert_eq!(e.z_score(1.0), 0.0);
        assert!(e.z_score(1.1).is_infinite());
    }

    #[test]
    fn stderr_matches_iid_theory() {
        // uniform(0,1) has variance 1/12
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..40_000).map(|_| rng.gen::<f64>()).collect();
        let e = batch_means(&xs).unwrap();
        let expected = (1.0f64 / 12.0 / 40_000.0).sqrt();
        assert!((e.stderr / expected - 1.0).abs() < 0.05);
        assert!(e.within(0.5, 4.0));
    }

    #[test]
    fn covariance_of_independent_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 2000;
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let c = batch_covariance(&x, &y, &xy).unwrap();
        assert!(c.within(0.0, 4.0), "{c:?}");
        // perfectly correlated: Var(U) = 1/12
        let xx: Vec<f64> = x.iter().map(|a| a * a).collect();
        let v = batch_covariance(&x, &x, &xx).unwrap();
        assert!((v.mean - 1.0 / 12.0).abs() < 5.0 * v.stderr);
    }
}
