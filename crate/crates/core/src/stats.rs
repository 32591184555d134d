//! Small statistical helpers shared by the estimators.

/// Default number of batches for batch-means standard errors.
pub const DEFAULT_BATCHES: usize = 50;

/// Accumulates a scalar time series into equal-length batches.
///
/// The batch length is fixed up front from the planned series length; any
/// tail shorter than a full batch still contributes to the mean but not to
/// the standard error.
#[derive(Debug, Clone)]
pub struct BatchMeans {
    batch_len: usize,
    total: f64,
    count: usize,
    current: f64,
    filled: usize,
    batch_sums: Vec<f64>,
}

impl BatchMeans {
    pub fn new(planned_len: usize, batches: usize) -> Self {
        let batches = batches.max(1);
        let batch_len = (planned_len / batches).max(1);
        Self {
            batch_len,
            total: 0.0,
            count: 0,
            current: 0.0,
            filled: 0,
            batch_sums: Vec::with_capacity(batches),
        }
    }

    pub fn push(&mut self, x: f64) {
        self.total += x;
        self.count += 1;
        self.current += x;
        self.filled += 1;
        if self.filled == self.batch_len {
            self.batch_sums.push(self.current);
            self.current = 0.0;
            self.filled = 0;
        }
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.total / self.count as f64
        }
    }

    /// Standard error of the mean from the spread of the batch means.
    pub fn std_error(&self) -> f64 {
        let b = self.batch_sums.len();
        if b < 2 {
            return f64::INFINITY;
        }
        let means: Vec<f64> = self
            .batch_sums
            .iter()
            .map(|s| s / self.batch_len as f64)
            .collect();
        let m = means.iter().sum::<f64>() / b as f64;
        let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b - 1) as f64;
        (var / b as f64).sqrt()
    }
}

/// Ordinary least squares fit `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.5 * x).collect();
        let fit = linear_fit(&xs, &ys).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-14);
        assert!((fit.intercept - 3.0).abs() < 1e-13);
        assert!((fit.r_squared - 1.0).abs() < 1e-14);
    }

    #[test]
    fn degenerate_fit() {
        assert!(linear_fit(&[1.0], &[2.0]).is_none());
        assert!(linear_fit(&[1.0, 1.0], &[2.0, 3.0]).is_none());
    }

    #[test]
    fn batch_means_constant_series() {
        let mut bm = BatchMeans::new(1000, 50);
        for _ in 0..1000 {
            bm.push(2.5);
        }
        assert_eq!(bm.mean(), 2.5);
        assert!(bm.std_error() < 1e-15);
    }

    #[test]
    fn batch_means_alternating_series() {
        let mut bm = BatchMeans::new(1000, 50);
        for i in 0..1000 {
            bm.push(if i % 2 == 0 { 1.0 } else { -1.0 });
        }
        assert_eq!(bm.mean(), 0.0);
        // batch length 20 is even so every batch mean is exactly zero
        assert_eq!(bm.std_error(), 0.0);
    }
}
