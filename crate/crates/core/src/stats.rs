use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Arithmetic mean and sample (n - 1) standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 values for a sample standard deviation, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(Summary {
        mean,
        std: var.sqrt(),
        n: values.len(),
    })
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_pair() {
        let s = summarize(&[0.8; 5]).unwrap();
        assert!((s.mean - 0.8).abs() < 1e-15 && s.std.abs() < 1e-15);
        let s = summarize(&[1.0, 0.0]).unwrap();
        assert_eq!(s.mean, 0.5);
        assert!((s.std - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.to_string(), "0.500 ± 0.707");
    }

    #[test]
    fn needs_two() {
        assert!(summarize(&[0.5]).is_err());
        assert!(summarize(&[]).is_err());
    }
}
