//! Exact step-function CDF algebra on finite grids.
//!
//! Nothing here smooths or interpolates: every function is right-continuous
//! and piecewise constant between grid points, which is all a finite sample
//! can support.

use serde::Serialize;

use crate::error::{Error, Result};

/// Slack used when comparing cumulative values against a level `q`, so that
/// sums like 1/3 + 1/3 + 1/3 still reach 1.
pub const Q_EPS: f64 = 1e-12;

pub fn clip01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Envelope {
    /// Running maximum from the left.
    SupBelow,
    /// Running minimum from the right.
    InfAbove,
}

/// Right-continuous step function: `values[i]` holds on `[grid[i], grid[i+1])`
/// and the function is 0 left of `grid[0]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepCdf {
    grid: Vec<f64>,
    values: Vec<f64>,
    support: (f64, f64),
    proper: bool,
}

impl StepCdf {
    /// Empirical CDF of an ascending sample.
    pub fn ecdf(sorted: &[f64]) -> Result<Self> {
        if sorted.is_empty() {
            return Err(Error::EmptySample);
        }
        debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
        let n = sorted.len() as f64;
        let mut grid = Vec::new();
        let mut values = Vec::new();
        for (i, &y) in sorted.iter().enumerate() {
            if grid.last() == Some(&y) {
                *values.last_mut().unwrap() = (i + 1) as f64 / n;
            } else {
                grid.push(y);
                values.push((i + 1) as f64 / n);
            }
        }
        *values.last_mut().unwrap() = 1.0;
        let support = (grid[0], *grid.last().unwrap());
        Ok(Self {
            grid,
            values,
            support,
            proper: true,
        })
    }

    /// Arbitrary (possibly signed, non-monotone) step function. Support
    /// defaults to the grid's extremes.
    pub fn from_parts(grid: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(grid.len(), values.len());
        assert!(grid.windows(2).all(|w| w[0] < w[1]), "grid must be strictly increasing");
        let support = match (grid.first(), grid.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => (f64::NAN, f64::NAN),
        };
        let proper = is_proper(&values);
        Self {
            grid,
            values,
            support,
            proper,
        }
    }

    pub fn with_support(mut self, lo: f64, hi: f64) -> Self {
        self.support = (lo, hi);
        self
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    pub fn is_proper(&self) -> bool {
        self.proper
    }

    pub fn eval(&self, y: f64) -> f64 {
        let k = self.grid.partition_point(|&g| g <= y);
        if k == 0 {
            0.0
        } else {
            self.values[k - 1]
        }
    }

    /// inf{x : F(x) ≥ q}, with F⁻¹(q) = inf support for q ≤ 0 and sup support
    /// when no grid point reaches q (in particular for q > 1).
    pub fn gen_inverse(&self, q: f64) -> f64 {
        if q <= 0.0 {
            return self.support.0;
        }
        if q > 1.0 {
            return self.support.1;
        }
        if self.proper {
            let k = self.values.partition_point(|&v| v < q - Q_EPS);
            return self.grid.get(k).copied().unwrap_or(self.support.1);
        }
        self.values
            .iter()
            .position(|&v| v >= q - Q_EPS)
            .map_or(self.support.1, |k| self.grid[k])
    }

    pub fn clip01(&self) -> Self {
        Self::from_parts(self.grid.clone(), self.values.iter().map(|&v| clip01(v)).collect())
            .with_support(self.support.0, self.support.1)
    }

    pub fn envelope(&self, mode: Envelope) -> Self {
        let mut v = self.values.clone();
        match mode {
            Envelope::SupBelow => {
                for i in 1..v.len() {
                    v[i] = v[i].max(v[i - 1]);
                }
            }
            Envelope::InfAbove => {
                for i in (0..v.len().saturating_sub(1)).rev() {
                    v[i] = v[i].min(v[i + 1]);
                }
            }
        }
        Self::from_parts(self.grid.clone(), v).with_support(self.support.0, self.support.1)
    }

    /// Jump sizes F(y_j) − F(y_j⁻), the first measured from 0.
    pub fn jumps(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.values
            .iter()
            .map(|&v| {
                let j = v - prev;
                prev = v;
                j
            })
            .collect()
    }

    /// ∫ y dF = Σ_j y_j (F(y_j) − F(y_j⁻)). Signed jumps are allowed; atoms at
    /// an infinite grid point are an error.
    pub fn stieltjes_mean(&self) -> Result<f64> {
        let mut s = 0.0;
        for (&y, j) in self.grid.iter().zip(self.jumps()) {
            if j == 0.0 {
                continue;
            }
            if !y.is_finite() {
                return Err(Error::UnboundedMass { mass: j });
            }
            s += y * j;
        }
        Ok(s)
    }

    /// ∫_lo^hi F(y) dy.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let mut total = 0.0;
        let mut x = lo;
        let mut level = self.eval(lo);
        let start = self.grid.partition_point(|&g| g <= lo);
        for k in start..self.grid.len() {
            let g = self.grid[k];
            if g >= hi {
                break;
            }
            total += level * (g - x);
            x = g;
            level = self.values[k];
        }
        total + level * (hi - x)
    }

    /// Largest amount by which the function decreases anywhere, plus the
    /// largest excursion outside [0,1].
    pub fn monotonicity_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        let mut run = f64::NEG_INFINITY;
        for &v in &self.values {
            run = run.max(v);
            worst = worst.max(run - v).max(-v).max(v - 1.0);
        }
        worst
    }
}

fn is_proper(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] <= w[1])
        && values.iter().all(|v| (0.0..=1.0).contains(v))
        && values.last().is_some_and(|&v| (v - 1.0).abs() <= Q_EPS)
}

/// Q(y) = F⁻¹_target(F_source(y)) on samples.
///
/// Evaluated with integer arithmetic: if F_source(y) = c/m, the target rank
/// is ⌈c·k/m⌉ for a target of size k, so no rounding enters.
#[derive(Debug, Clone, PartialEq)]
pub struct QqTransform {
    source: Vec<f64>,
    target: Vec<f64>,
}

impl QqTransform {
    pub fn new(source_sorted: &[f64], target_sorted: &[f64]) -> Result<Self> {
        if source_sorted.is_empty() || target_sorted.is_empty() {
            return Err(Error::EmptySample);
        }
        Ok(Self {
            source: source_sorted.to_vec(),
            target: target_sorted.to_vec(),
        })
    }

    pub fn source_cdf(&self) -> StepCdf {
        StepCdf::ecdf(&self.source).expect("non-empty")
    }

    pub fn target_cdf(&self) -> StepCdf {
        StepCdf::ecdf(&self.target).expect("non-empty")
    }

    /// Values below the source sample map to the smallest target point.
    pub fn eval(&self, y: f64) -> f64 {
        let c = self.source.partition_point(|&s| s <= y);
        let (m, k) = (self.source.len(), self.target.len());
        let rank = (c * k).div_ceil(m).max(1);
        self.target[rank - 1]
    }

    /// True when `y` lies outside the source sample's range.
    pub fn out_of_support(&self, y: f64) -> bool {
        y < self.source[0] || y > *self.source.last().unwrap()
    }
}
