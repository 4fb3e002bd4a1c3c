//! Evaluation: per-step localization errors against ground truth,
//! threshold fractions, divergence detection and the storage report.

use serde::{Deserialize, Serialize};

use semloc_core::geometry::Pose;
use semloc_core::io::EstimateRow;
use semloc_core::map::{
    point_record_bytes, DescriptorKind, SemanticMap, DENSE_DESCRIPTOR_BYTES, POSITION_BYTES,
    SEMANTIC_DESCRIPTOR_BITS, SEMANTIC_DESCRIPTOR_BYTES, WEDGE_BYTES,
};

use crate::CliError;

/// Error magnitude above which a filter counts as diverged…
pub const DIVERGENCE_ERROR_M: f64 = 50.0;
/// …when sustained for this many consecutive steps.
pub const DIVERGENCE_STEPS: usize = 100;

/// Fraction of errors strictly below each threshold. Thresholds must be
/// positive and strictly increasing.
pub fn error_histogram(errors: &[f64], thresholds: &[f64]) -> Result<Vec<f64>, CliError> {
    if errors.is_empty() {
        return Err(CliError::Report("empty error trace".into()));
    }
    validate_thresholds(thresholds)?;
    Ok(thresholds
        .iter()
        .map(|&thr| errors.iter().filter(|&&e| e < thr).count() as f64 / errors.len() as f64)
        .collect())
}

pub fn validate_thresholds(thresholds: &[f64]) -> Result<(), CliError> {
    let increasing = thresholds.windows(2).all(|w| w[0] < w[1]);
    if thresholds.is_empty() || !increasing || thresholds[0] <= 0.0 {
        return Err(CliError::Report("thresholds must be positive and strictly increasing".into()));
    }
    Ok(())
}

/// One timestamped error sample.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ErrorSample {
    pub t: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SequenceEval {
    /// Post-burn-in fractions below each threshold.
    pub fractions: Vec<f64>,
    pub mean_error: f64,
    pub max_error: f64,
    pub steps: usize,
    pub burn_in: usize,
    pub diverged: bool,
    /// Full per-step trace (including burn-in).
    #[serde(skip)]
    pub trace: Vec<ErrorSample>,
}

/// Compare estimates with the ground-truth trajectory, aligned by
/// timestamp. `horizontal` restricts the error to the east/north plane.
pub fn evaluate(
    estimates: &[EstimateRow],
    truth: &[(Pose, f64)],
    thresholds: &[f64],
    burn_in: usize,
    horizontal: bool,
) -> Result<SequenceEval, CliError> {
    validate_thresholds(thresholds)?;
    if estimates.is_empty() {
        return Err(CliError::Report("no estimates to evaluate".into()));
    }
    let mut trace = Vec::with_capacity(estimates.len());
    let mut ti = 0usize;
    for row in estimates {
        while ti < truth.len() && truth[ti].1 < row.t - 1e-9 {
            ti += 1;
        }
        let Some((pose, t)) = truth.get(ti) else {
            return Err(CliError::Report("estimate timestamp beyond ground truth".into()));
        };
        if (t - row.t).abs() > 1e-9 {
            return Err(CliError::Report(format!("no ground-truth sample at t = {}", row.t)));
        }
        let d = pose.translation() - row.pose().translation();
        let error = if horizontal { (d.x * d.x + d.y * d.y).sqrt() } else { d.norm() };
        trace.push(ErrorSample { t: row.t, error });
    }
    let diverged = {
        let mut run = 0usize;
        let mut hit = false;
        for s in &trace {
            run = if s.error > DIVERGENCE_ERROR_M { run + 1 } else { 0 };
            if run >= DIVERGENCE_STEPS {
                hit = true;
                break;
            }
        }
        hit
    };
    let post: Vec<f64> = trace.iter().skip(burn_in.min(trace.len() - 1)).map(|s| s.error).collect();
    let fractions = error_histogram(&post, thresholds)?;
    Ok(SequenceEval {
        fractions,
        mean_error: post.iter().sum::<f64>() / post.len() as f64,
        max_error: post.iter().cloned().fold(0.0, f64::max),
        steps: trace.len(),
        burn_in: burn_in.min(trace.len() - 1),
        diverged,
        trace,
    })
}

pub fn write_error_trace<W: std::io::Write>(w: W, trace: &[ErrorSample]) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    for s in trace {
        out.serialize(s)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_error_trace<R: std::io::Read>(r: R) -> Result<Vec<ErrorSample>, CliError> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rd.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Per-point storage breakdown of the two map variants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StorageReport {
    pub position_bytes: usize,
    pub visibility_bytes: usize,
    pub semantic_descriptor_bits: usize,
    pub semantic_descriptor_bytes: usize,
    pub dense_descriptor_bytes: usize,
    pub semantic_record_bytes: usize,
    pub dense_record_bytes: usize,
    /// Dense over semantic descriptor size (bits over bits).
    pub descriptor_ratio: f64,
    pub semantic_points: usize,
    pub dense_points: usize,
}

pub fn storage_report(semantic: &SemanticMap, dense: &SemanticMap) -> Result<StorageReport, CliError> {
    if semantic.kind() != DescriptorKind::Semantic || dense.kind() != DescriptorKind::Dense {
        return Err(CliError::Report("storage report needs one semantic and one dense map".into()));
    }
    let report = StorageReport {
        position_bytes: POSITION_BYTES,
        visibility_bytes: WEDGE_BYTES,
        semantic_descriptor_bits: SEMANTIC_DESCRIPTOR_BITS,
        semantic_descriptor_bytes: SEMANTIC_DESCRIPTOR_BYTES,
        dense_descriptor_bytes: DENSE_DESCRIPTOR_BYTES,
        semantic_record_bytes: point_record_bytes(DescriptorKind::Semantic),
        dense_record_bytes: point_record_bytes(DescriptorKind::Dense),
        descriptor_ratio: (DENSE_DESCRIPTOR_BYTES * 8) as f64 / SEMANTIC_DESCRIPTOR_BITS as f64,
        semantic_points: semantic.points().len(),
        dense_points: dense.points().len(),
    };
    // The compactness claims are structural; refuse to report otherwise.
    if report.semantic_descriptor_bytes > 5
        || report.dense_descriptor_bytes != 128
        || report.descriptor_ratio <= 6.0
    {
        return Err(CliError::Report("storage layout violates the compactness contract".into()));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts_strictly_below() {
        let fr = error_histogram(&[0.1, 0.6, 1.5, 3.0], &[0.5, 1.0, 2.0]).unwrap();
        assert_eq!(fr, vec![0.25, 0.5, 0.75]);
        let all = error_histogram(&[0.0, 0.0], &[0.5, 1.0, 2.0]).unwrap();
        assert_eq!(all, vec![1.0, 1.0, 1.0]);
        assert!(error_histogram(&[], &[0.5]).is_err());
        assert!(error_histogram(&[0.1], &[1.0, 0.5]).is_err());
        assert!(error_histogram(&[0.1], &[]).is_err());
    }

    #[test]
    fn histogram_matches_sort_and_count_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let errors: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..5.0)).collect();
            let thresholds = [0.25, 0.5, 1.0, 2.0, 4.0];
            let ours = error_histogram(&errors, &thresholds).unwrap();
            let mut sorted = errors.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (k, thr) in thresholds.iter().enumerate() {
                let count = sorted.partition_point(|e| e < thr);
                assert!((ours[k] - count as f64 / errors.len() as f64).abs() < 1e-15);
            }
            // Fractions are monotone in the threshold.
            assert!(ours.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn evaluation_aligns_by_timestamp_and_flags_divergence() {
        let truth: Vec<(Pose, f64)> = (0..250)
            .map(|i| (Pose::from_enu_ypr(i as f64, 0.0, 1.5, 0.0, 0.0, 0.0), i as f64 * 0.1))
            .collect();
        let estimates: Vec<EstimateRow> = (1..250)
            .map(|i| {
                // 60 m off from step 100 onward: diverged after 100 steps.
                let off = if i >= 100 { 60.0 } else { 0.2 };
                EstimateRow {
                    t: i as f64 * 0.1,
                    e: i as f64 + off,
                    n: 0.0,
                    u: 1.5,
                    yaw: 0.0,
                    pitch: 0.0,
                    roll: 0.0,
                    ess: 0.0,
                    n_lambda: 0.0,
                }
            })
            .collect();
        let eval = evaluate(&estimates, &truth, &[0.5, 1.0, 2.0], 10, true).unwrap();
        assert!(eval.diverged);
        assert_eq!(eval.steps, 249);
        // Vertical error ignored under the horizontal metric.
        let flat = evaluate(
            &[EstimateRow { t: 0.1, e: 1.0, n: 0.0, u: 99.0, yaw: 0.0, pitch: 0.0, roll: 0.0, ess: 0.0, n_lambda: 0.0 }],
            &truth,
            &[0.5],
            0,
            true,
        )
        .unwrap();
        assert_eq!(flat.fractions, vec![1.0]);
    }
}
