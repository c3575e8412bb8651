use serde::{Deserialize, Serialize};

/// Mean, sample standard deviation and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub std_error: f64,
}

impl SampleStats {
    /// Two-pass estimate; summation runs in slice order so the result does
    /// not depend on how the samples were produced.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                n,
                mean: f64::NAN,
                std_dev: f64::NAN,
                std_error: f64::NAN,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self {
                n,
                mean,
                std_dev: 0.0,
                std_error: 0.0,
            };
        }
        let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
        let std_dev = (ss / (n - 1) as f64).sqrt();
        Self {
            n,
            mean,
            std_dev,
            std_error: std_dev / (n as f64).sqrt(),
        }
    }
}
