//! Single-pass outlier rejection in the natural-log domain.
//!
//! Values are log-transformed, the mean and sample standard deviation are
//! computed once over the full input, and every value whose log deviates
//! from the mean by more than 2.5σ is removed. Retained values are returned
//! in their original units and order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{mean, sample_sd};
use crate::Scalar;

/// Rejection half-width in standard deviations.
pub const SIGMA_WINDOW: f64 = 2.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScreeningError {
    #[error("log transform needs positive values; offending indices {0:?}")]
    Domain(Vec<usize>),
    #[error("at least 2 values are required, got {0}")]
    InsufficientData(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport<T> {
    pub n_input: usize,
    pub n_removed: usize,
    pub log_mean: T,
    pub log_sd: T,
    pub removed_indices: Vec<usize>,
}

pub fn log_transform<T: Scalar>(values: &[T]) -> Result<Vec<T>, ScreeningError> {
    let bad: Vec<usize> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| !(**v > T::zero()))
        .map(|(i, _)| i)
        .collect();
    if !bad.is_empty() {
        return Err(ScreeningError::Domain(bad));
    }
    Ok(values.iter().map(|v| v.ln()).collect())
}

pub fn screen_outliers<T: Scalar>(values: &[T]) -> Result<(Vec<T>, ScreeningReport<T>), ScreeningError> {
    if values.len() < 2 {
        return Err(ScreeningError::InsufficientData(values.len()));
    }
    let logs = log_transform(values)?;
    let mu = mean(&logs).expect("non-empty");
    let sd = sample_sd(&logs).expect("n >= 2");
    let limit = T::lit(SIGMA_WINDOW) * sd;
    let mut retained = Vec::with_capacity(values.len());
    let mut removed = Vec::new();
    for (i, (&v, &l)) in values.iter().zip(&logs).enumerate() {
        if (l - mu).abs() > limit {
            removed.push(i);
        } else {
            retained.push(v);
        }
    }
    let report = ScreeningReport {
        n_input: values.len(),
        n_removed: removed.len(),
        log_mean: mu,
        log_sd: sd,
        removed_indices: removed,
    };
    Ok((retained, report))
}

/// Screens a survey's ECa values, dropping the rejected records.
pub fn screen_survey(survey: &crate::Survey) -> Result<(crate::Survey, ScreeningReport<f64>), ScreeningError> {
    let (_, report) = screen_outliers(&survey.values())?;
    let mut removed = report.removed_indices.iter().peekable();
    let keep: Vec<usize> = (0..survey.len())
        .filter(|i| {
            if removed.peek() == Some(&i) {
                removed.next();
                false
            } else {
                true
            }
        })
        .collect();
    let mut out = survey.subset(&keep);
    out.metadata.insert("screening_removed".into(), report.n_removed.to_string());
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn log_values() {
        assert_eq!(log_transform(&[1.0]).unwrap(), vec![0.0]);
        assert_relative_eq!(log_transform(&[std::f64::consts::E]).unwrap()[0], 1.0);
        assert_relative_eq!(log_transform(&[50.0]).unwrap()[0], 3.912023005428146, epsilon = 1e-14);
        assert_eq!(log_transform(&[1.0, 0.0, -2.0]), Err(ScreeningError::Domain(vec![1, 2])));
    }

    #[test]
    fn constant_input_keeps_everything() {
        let (kept, report) = screen_outliers(&[20.0, 20.0, 20.0]).unwrap();
        assert_eq!(kept, vec![20.0; 3]);
        assert_eq!(report.n_removed, 0);
        assert_eq!(report.log_sd, 0.0);
    }

    #[test]
    fn five_values_cannot_exceed_the_window() {
        // With the n-1 sample sd the largest attainable |z| is (n-1)/sqrt(n),
        // 1.79 for n = 5, so a 2.5σ window never rejects anything here.
        let values = [18.0, 19.0, 20.0, 21.0, 400.0];
        let (kept, report) = screen_outliers(&values).unwrap();
        assert_eq!(report.n_removed, 0);
        assert_eq!(kept.len(), 5);
        let logs: Vec<f64> = values.iter().map(|v: &f64| v.ln()).collect();
        let m = logs.iter().sum::<f64>() / 5.0;
        let sd = (logs.iter().map(|l| (l - m).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!((logs[4] - m) / sd < 1.79);
    }

    #[test]
    fn single_spike_in_a_longer_series() {
        let mut values: Vec<f64> = (0..20).map(|i| 18.0 + (i % 5) as f64).collect();
        values.push(400.0);
        let (kept, report) = screen_outliers(&values).unwrap();
        assert_eq!(report.removed_indices, vec![20]);
        assert_eq!(kept, values[..20].to_vec());
    }

    #[test]
    fn errors() {
        assert_eq!(screen_outliers(&[5.0]).unwrap_err(), ScreeningError::InsufficientData(1));
        assert_eq!(screen_outliers(&[5.0, -1.0]).unwrap_err(), ScreeningError::Domain(vec![1]));
    }

    #[test]
    fn single_pass_is_not_idempotent() {
        // second pass sees a narrower σ and may reject more
        let mut values: Vec<f64> = (0..40).map(|i| 20.0 + (i % 7) as f64 * 0.5).collect();
        values.extend([60.0, 2000.0]);
        let (kept, first) = screen_outliers(&values).unwrap();
        let (_, second) = screen_outliers(&kept).unwrap();
        assert_eq!(first.removed_indices, vec![41]);
        assert_eq!(second.n_removed, 1);
    }

    #[test]
    fn f32_screening() {
        let mut values: Vec<f32> = (0..20).map(|i| 18.0 + (i % 5) as f32).collect();
        values.push(400.0);
        let (_, report) = screen_outliers(&values).unwrap();
        assert_eq!(report.removed_indices, vec![20]);
    }

    proptest! {
        #[test]
        fn retained_within_window(values in proptest::collection::vec(0.1f64..500.0, 2..200)) {
            let (kept, report) = screen_outliers(&values).unwrap();
            prop_assert_eq!(kept.len() + report.n_removed, values.len());
            let limit = SIGMA_WINDOW * report.log_sd;
            let mut it = kept.iter();
            for (i, v) in values.iter().enumerate() {
                if report.removed_indices.binary_search(&i).is_ok() {
                    prop_assert!((v.ln() - report.log_mean).abs() > limit);
                } else {
                    prop_assert_eq!(it.next(), Some(v));
                    prop_assert!((v.ln() - report.log_mean).abs() <= limit);
                }
            }
        }
    }
}
