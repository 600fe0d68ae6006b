use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FNR_TARGETS: [f64; 8] = [0.01, 0.03, 0.05, 0.07, 0.09, 0.11, 0.13, 0.15];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OodPoint {
    pub fnr_target: f64,
    pub threshold: f64,
    pub tnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodCurve {
    pub points: Vec<OodPoint>,
    pub average_tnr: f64,
}

impl OodCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fnr_target,threshold,tnr\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.fnr_target, p.threshold, p.tnr));
        }
        out
    }
}

/// Smallest seen score `θ` such that the fraction of seen scores above `θ`
/// is at most `fnr`.
pub fn calibrate_threshold(scores_seen: &[f64], fnr: f64) -> Result<f64> {
    if scores_seen.is_empty() {
        return Err(Error::InvalidInput("no seen scores to calibrate on".into()));
    }
    if !(fnr > 0.0 && fnr < 1.0) {
        return Err(Error::InvalidInput(format!(
            "FNR target {fnr} is outside (0, 1)"
        )));
    }
    if scores_seen.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("seen OOD score".into()));
    }
    let mut sorted = scores_seen.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let allowed = fnr * n + 1e-9;
    Ok(*sorted
        .iter()
        .find(|&&theta| (sorted.len() - sorted.partition_point(|&s| s <= theta)) as f64 <= allowed)
        .expect("the largest score always qualifies"))
}

/// True-negative rate on unseen rows at thresholds calibrated on seen rows.
pub fn tnr_at_fnr(
    scores_seen: &[f64],
    scores_unseen: &[f64],
    fnr_targets: &[f64],
) -> Result<OodCurve> {
    if scores_unseen.is_empty() {
        return Err(Error::InvalidInput("no unseen scores".into()));
    }
    if fnr_targets.is_empty() || fnr_targets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(
            "FNR targets must be non-empty and strictly increasing".into(),
        ));
    }
    let points = fnr_targets
        .iter()
        .map(|&f| {
            let threshold = calibrate_threshold(scores_seen, f)?;
            let above = scores_unseen.iter().filter(|&&s| s > threshold).count();
            Ok(OodPoint {
                fnr_target: f,
                threshold,
                tnr: above as f64 / scores_unseen.len() as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let average_tnr = points.iter().map(|p| p.tnr).sum::<f64>() / points.len() as f64;
    Ok(OodCurve {
        points,
        average_tnr,
    })
}
