//! Compensated accumulation and the batch-means error estimate used by the
//! ergodic averages.

// backs f64 math in no_std builds; shadowed by inherent methods under test
#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
/// Neumaier-compensated running sum. The shift-invariance checks on the
/// response require means accurate to well below 1e-10 over ~1e6 samples,
/// which plain summation does not guarantee.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn sum(values: &[f64]) -> f64 {
    let mut acc = CompensatedSum::new();
    for &v in values {
        acc.add(v);
    }
    acc.value()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    sum(values) / values.len() as f64
}

/// Mean and batch-means standard error of a correlated series.
///
/// The series is split into `n_batches` equal contiguous batches (a trailing
/// remainder is dropped); the standard error of the mean is estimated from
/// the spread of the batch means, which absorbs serial correlation as long
/// as batches are longer than the correlation time.
pub fn batch_means(values: &[f64], n_batches: usize) -> (f64, f64) {
    let m = mean(values);
    if n_batches < 2 || values.len() < 2 * n_batches {
        return (m, f64::NAN);
    }
    let blen = values.len() / n_batches;
    let mut bm = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        bm.push(mean(&values[b * blen..(b + 1) * blen]));
    }
    let grand = mean(&bm);
    let var = bm.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>() / (n_batches - 1) as f64;
    (m, (var / n_batches as f64).sqrt())
}

/// q-quantile (0..=1) by sorting a copy; midpoint interpolation.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        v[lo]
    } else {
        let w = pos - lo as f64;
        v[lo] * (1.0 - w) + v[hi] * w
    }
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Ordinary least-squares slope and intercept of `y` against `x`.
pub fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = mean(x);
    let my = mean(y);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
    }
    let _ = n;
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Plain sample mean and standard error (independent samples).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let m = mean(values);
    if values.len() < 2 {
        return (m, f64::NAN);
    }
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64;
    (m, (var / values.len() as f64).sqrt())
}
