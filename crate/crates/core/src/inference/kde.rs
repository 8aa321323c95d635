//! Gaussian kernel density with Silverman's rule-of-thumb bandwidth.
//!
//! Only the analytic standard errors of the CIC estimators use this.

use std::f64::consts::PI;

#[derive(Debug, Clone)]
pub struct Kde {
    sample: Vec<f64>,
    h: f64,
}

impl Kde {
    /// `sorted` must be ascending and non-empty.
    pub fn new(sorted: &[f64]) -> Self {
        Self {
            sample: sorted.to_vec(),
            h: silverman(sorted),
        }
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn density(&self, x: f64) -> f64 {
        let h = self.h;
        // Points beyond 8 bandwidths contribute < 1e-14 each.
        let lo = self.sample.partition_point(|&s| s < x - 8.0 * h);
        let hi = self.sample.partition_point(|&s| s <= x + 8.0 * h);
        let s: f64 = self.sample[lo..hi]
            .iter()
            .map(|&s| {
                let z = (x - s) / h;
                (-0.5 * z * z).exp()
            })
            .sum();
        s / (self.sample.len() as f64 * h * (2.0 * PI).sqrt())
    }
}

/// 0.9·min(sd, IQR/1.34)·n^(−1/5), falling back to whichever spread measure
/// is positive, and to 1 for a constant sample.
pub fn silverman(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = if sorted.len() > 1 {
        (sorted.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let iqr = (quantile(sorted, 0.75) - quantile(sorted, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => 1.0,
    };
    0.9 * spread * n.powf(-0.2)
}

// Linear interpolation between order statistics.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_to_one() {
        let s: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let mut s = s;
        s.sort_by(f64::total_cmp);
        let k = Kde::new(&s);
        let step = 0.01;
        let total: f64 = (-2000..2000).map(|i| k.density(i as f64 * step) * step).sum();
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }

    #[test]
    fn constant_sample_has_positive_bandwidth() {
        assert!(silverman(&[2.0, 2.0, 2.0]) > 0.0);
    }
}
