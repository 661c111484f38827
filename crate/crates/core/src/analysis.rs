//! Knockout simulations of the Nakamoto set and Pearson correlation studies.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, MetricError, NakamotoPartition};
use crate::model::{ContributionDistribution, TimeWindow};
use crate::stats::student_t_two_sided;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 paired samples, got {0}")]
    InsufficientData(usize),
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("series contains non-finite values")]
    NonFinite,
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnockoutMetrics {
    pub entropy: f64,
    pub nakamoto: usize,
    pub hhi: f64,
    pub node_count: usize,
}

impl KnockoutMetrics {
    fn of(d: &ContributionDistribution, threshold: f64) -> Result<Self, MetricError> {
        Ok(KnockoutMetrics {
            entropy: metrics::shannon_entropy(d).value,
            nakamoto: metrics::nakamoto(d, threshold)?.coefficient,
            hhi: metrics::hhi(d).value,
            node_count: d.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnockoutResult {
    pub window: TimeWindow,
    pub pre: KnockoutMetrics,
    /// `None` when the Nakamoto set was the whole network.
    pub post: Option<KnockoutMetrics>,
    pub removed: NakamotoPartition,
}

/// Removes the Nakamoto set, renormalizes what is left and recomputes metrics.
pub fn knockout(d: &ContributionDistribution, threshold: f64) -> Result<KnockoutResult, MetricError> {
    let removed = metrics::nakamoto(d, threshold)?;
    let pre = KnockoutMetrics::of(d, threshold)?;
    let post = if removed.non_nakamoto_set.is_empty() {
        None
    } else {
        let remainder = d
            .without(&removed.nakamoto_set)
            .expect("non-Nakamoto set has positive counts");
        Some(KnockoutMetrics::of(&remainder, threshold)?)
    };
    Ok(KnockoutResult {
        window: *d.window(),
        pre,
        post,
        removed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
    pub series_a: String,
    pub series_b: String,
}

/// A correlation that is either defined or flagged as degenerate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CorrelationOutcome {
    Defined(CorrelationReport),
    Degenerate {
        n: usize,
        series_a: String,
        series_b: String,
        reason: String,
    },
}

impl CorrelationOutcome {
    pub fn report(&self) -> Option<&CorrelationReport> {
        match self {
            CorrelationOutcome::Defined(r) => Some(r),
            CorrelationOutcome::Degenerate { .. } => None,
        }
    }

    fn from_result(
        result: Result<CorrelationReport, AnalysisError>,
        n: usize,
        series_a: &str,
        series_b: &str,
    ) -> Result<Self, AnalysisError> {
        match result {
            Ok(r) => Ok(CorrelationOutcome::Defined(CorrelationReport {
                series_a: series_a.into(),
                series_b: series_b.into(),
                ..r
            })),
            Err(AnalysisError::ZeroVariance) => Ok(CorrelationOutcome::Degenerate {
                n,
                series_a: series_a.into(),
                series_b: series_b.into(),
                reason: AnalysisError::ZeroVariance.to_string(),
            }),
            Err(e) => Err(e),
        }
    }
}

/// Pearson product-moment correlation with a two-sided t-test p-value.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<CorrelationReport, AnalysisError> {
    if xs.len() != ys.len() {
        return Err(AnalysisError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 3 {
        return Err(AnalysisError::InsufficientData(n));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    let mean_x = xs.iter().sum::<f64>() / n as f64;
    let mean_y = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok(CorrelationReport {
        r,
        p_value: pearson_p_value(r, n),
        n,
        series_a: "a".into(),
        series_b: "b".into(),
    })
}

/// Two-sided p-value of correlation `r` over `n` samples.
pub fn pearson_p_value(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let denom = 1.0 - r * r;
    if denom <= 0.0 {
        return 0.0;
    }
    let t = r * (df / denom).sqrt();
    student_t_two_sided(t, df)
}

/// Correlates two named series over the windows present in both.
pub fn correlate_aligned(
    a: &[(TimeWindow, f64)],
    b: &[(TimeWindow, f64)],
    name_a: &str,
    name_b: &str,
) -> Result<CorrelationOutcome, AnalysisError> {
    let lookup: std::collections::HashMap<&TimeWindow, f64> = b.iter().map(|(w, v)| (w, *v)).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = a.iter().filter_map(|(w, x)| lookup.get(w).map(|y| (*x, *y))).unzip();
    let n = xs.len();
    if n < 3 {
        return Err(AnalysisError::InsufficientData(n));
    }
    CorrelationOutcome::from_result(pearson(&xs, &ys), n, name_a, name_b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnockoutSeries {
    pub results: Vec<KnockoutResult>,
    pub entropy: CorrelationOutcome,
    pub nakamoto: CorrelationOutcome,
    /// Windows left out because nothing survived the knockout.
    pub undefined_windows: usize,
}

/// Knocks out every window and correlates pre- against post-knockout entropy
/// and Nakamoto coefficient. Windows with an empty remainder are dropped.
pub fn knockout_series(dists: &[ContributionDistribution], threshold: f64) -> Result<KnockoutSeries, AnalysisError> {
    let results = dists
        .iter()
        .map(|d| knockout(d, threshold))
        .collect::<Result<Vec<_>, _>>()?;
    let defined: Vec<(&KnockoutMetrics, &KnockoutMetrics)> = results
        .iter()
        .filter_map(|r| r.post.as_ref().map(|post| (&r.pre, post)))
        .collect();
    let n = defined.len();
    if n < 3 {
        return Err(AnalysisError::InsufficientData(n));
    }
    let pre_h: Vec<f64> = defined.iter().map(|(a, _)| a.entropy).collect();
    let post_h: Vec<f64> = defined.iter().map(|(_, b)| b.entropy).collect();
    let pre_n: Vec<f64> = defined.iter().map(|(a, _)| a.nakamoto as f64).collect();
    let post_n: Vec<f64> = defined.iter().map(|(_, b)| b.nakamoto as f64).collect();
    let entropy = CorrelationOutcome::from_result(pearson(&pre_h, &post_h), n, "pre_entropy", "post_entropy")?;
    let nakamoto = CorrelationOutcome::from_result(pearson(&pre_n, &post_n), n, "pre_nakamoto", "post_nakamoto")?;
    Ok(KnockoutSeries {
        undefined_windows: results.len() - n,
        results,
        entropy,
        nakamoto,
    })
}
