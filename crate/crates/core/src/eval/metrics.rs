use nalgebra::Vector3;

use crate::geometry::{umeyama_similarity, SimilarityTransform, Trajectory};
use crate::maps::DepthMap;

use super::EvalError;

/// Absolute trajectory errors after similarity alignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub sigma: f64,
    pub matched: usize,
    /// Maps estimated positions onto the ground truth.
    pub alignment: SimilarityTransform,
}

/// Pairs each estimated entry with the ground-truth entry nearest in time,
/// accepting it within half a ground-truth frame period.
pub fn associate(est: &Trajectory, gt: &Trajectory) -> Vec<(usize, usize)> {
    let gt_e = gt.entries();
    let tolerance = if gt_e.len() > 1 { 0.5 * gt.frame_period() } else { f64::INFINITY };
    let mut pairs = Vec::new();
    for (i, e) in est.entries().iter().enumerate() {
        let j = gt_e.partition_point(|g| g.timestamp < e.timestamp);
        let candidates = [j.checked_sub(1), (j < gt_e.len()).then_some(j)];
        let best = candidates
            .into_iter()
            .flatten()
            .min_by(|&a, &b| {
                let da = (gt_e[a].timestamp - e.timestamp).abs();
                let db = (gt_e[b].timestamp - e.timestamp).abs();
                da.total_cmp(&db).then(a.cmp(&b))
            });
        if let Some(j) = best {
            if (gt_e[j].timestamp - e.timestamp).abs() <= tolerance {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

pub fn ate_metrics(est: &Trajectory, gt: &Trajectory) -> Result<TrajectoryMetrics, EvalError> {
    let pairs = associate(est, gt);
    if pairs.len() < 3 {
        return Err(EvalError::TooFewMatches(pairs.len()));
    }
    let src: Vec<Vector3<f64>> = pairs.iter().map(|&(i, _)| *est.entries()[i].pose.translation()).collect();
    let dst: Vec<Vector3<f64>> = pairs.iter().map(|&(_, j)| *gt.entries()[j].pose.translation()).collect();
    let alignment = umeyama_similarity(&src, &dst)?;
    let errors: Vec<f64> = src.iter().zip(&dst).map(|(s, d)| (d - alignment.apply(s)).norm()).collect();
    let n = errors.len() as f64;
    let mae = errors.iter().sum::<f64>() / n;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let sigma = (errors.iter().map(|e| (e - mae).powi(2)).sum::<f64>() / n).sqrt();
    Ok(TrajectoryMetrics {
        rmse,
        mae,
        sigma,
        matched: pairs.len(),
        alignment,
    })
}

/// Median-scaled depth errors. `mae` is the mean absolute relative error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub delta_125: f64,
    pub delta_105: f64,
    pub count: usize,
    /// Factor applied to the estimate, `median(gt) / median(est)`.
    pub scale: f64,
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn depth_metrics(est: &DepthMap, gt: &DepthMap, cap: f64) -> Result<DepthMetrics, EvalError> {
    if est.width != gt.width || est.height != gt.height {
        return Err(EvalError::Shape(format!(
            "estimate is {}x{}, ground truth {}x{}",
            est.width, est.height, gt.width, gt.height
        )));
    }
    let pairs: Vec<(f64, f64)> = est
        .data
        .iter()
        .zip(&gt.data)
        .filter(|(e, g)| **e > 0.0 && **g > 0.0 && (**g as f64) <= cap)
        .map(|(e, g)| (*e as f64, *g as f64))
        .collect();
    if pairs.is_empty() {
        return Err(EvalError::NoValidPixels);
    }
    let mut es: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut gs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let scale = median(&mut gs) / median(&mut es);
    let n = pairs.len() as f64;
    let (mut se, mut rel, mut d125, mut d105) = (0.0, 0.0, 0usize, 0usize);
    for &(e, g) in &pairs {
        let d = e * scale;
        se += (d - g).powi(2);
        rel += (d - g).abs() / g;
        let ratio = (d / g).max(g / d);
        d125 += (ratio < 1.25) as usize;
        d105 += (ratio < 1.05) as usize;
    }
    Ok(DepthMetrics {
        rmse: (se / n).sqrt(),
        mae: rel / n,
        delta_125: d125 as f64 / n,
        delta_105: d105 as f64 / n,
        count: pairs.len(),
        scale,
    })
}
