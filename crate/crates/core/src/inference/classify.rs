use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::PhiScanPoint;
use crate::error::{Error, Result};
use crate::model::TransitionKind;

/// Smallest modulation depth accepted as an exciton signature.
pub const DEFAULT_DEPTH_THRESHOLD: f64 = 0.2;

const MIN_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub kind: TransitionKind,
    /// Dipole angle in `[0, π/2)`; only reported for excitons since the scan
    /// cannot tell θ from θ + π/2.
    pub theta_est: Option<f64>,
    /// `(max - min)/(max + min)` of the fitted sinusoid, clamped to `[0, 1]`.
    pub modulation_depth: f64,
    /// Penalized residual sum of squares of the sinusoid fit, `RSS·n/(n-3)`.
    pub score_exciton: f64,
    /// Penalized residual sum of squares of the constant fit, `RSS·n/(n-1)`.
    pub score_trion: f64,
}

pub fn classify_transition(points: &[PhiScanPoint]) -> Result<ClassificationResult> {
    classify_transition_with(points, DEFAULT_DEPTH_THRESHOLD)
}

/// Compares `A·sin²(2(φ-θ)) + C` against a constant for the QD line intensity
/// of a polarization scan.
pub fn classify_transition_with(points: &[PhiScanPoint], depth_threshold: f64) -> Result<ClassificationResult> {
    let n = points.len();
    if n < MIN_POINTS {
        return Err(Error::Precondition(format!("{n} scan points, at least {MIN_POINTS} are needed")));
    }
    if points.iter().any(|p| !p.phi.is_finite() || !p.qd_light.is_finite()) {
        return Err(Error::Precondition("scan contains non-finite values".into()));
    }
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.phi), hi.max(p.phi)));
    if hi - lo < PI * (1.0 - 1e-9) {
        return Err(Error::Precondition(format!(
            "scan covers {:.1}°, at least 180° is needed",
            (hi - lo).to_degrees()
        )));
    }
    let y: Vec<f64> = points.iter().map(|p| p.qd_light).collect();
    let mean = y.iter().sum::<f64>() / n as f64;
    if y.iter().all(|&v| v == 0.0) || !(mean > 0.0) {
        return Err(Error::Unclassifiable("QD line intensity is zero across the scan".into()));
    }

    // A·sin²(2(φ-θ)) + C = a0 + a1·cos4φ + a2·sin4φ
    let mut ata = Matrix3::zeros();
    let mut aty = Vector3::zeros();
    for (p, &v) in points.iter().zip(&y) {
        let row = Vector3::new(1.0, (4.0 * p.phi).cos(), (4.0 * p.phi).sin());
        ata += row * row.transpose();
        aty += row * v;
    }
    let coef = ata
        .cholesky()
        .ok_or_else(|| Error::Precondition("scan angles do not resolve a 90° period".into()))?
        .solve(&aty);
    let (a0, a1, a2) = (coef[0], coef[1], coef[2]);
    let rss_sin: f64 = points
        .iter()
        .zip(&y)
        .map(|(p, &v)| (a0 + a1 * (4.0 * p.phi).cos() + a2 * (4.0 * p.phi).sin() - v).powi(2))
        .sum();
    let rss_const: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let nf = n as f64;
    let score_exciton = rss_sin * nf / (nf - 3.0);
    let score_trion = rss_const * nf / (nf - 1.0);

    let amp = 2.0 * a1.hypot(a2);
    let floor = a0 - 0.5 * amp;
    let denom = amp + 2.0 * floor;
    let modulation_depth = if denom > 0.0 {
        (amp / denom).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let exciton = modulation_depth > depth_threshold && score_exciton < score_trion;
    let theta_est = exciton.then(|| {
        let t = 0.25 * (-a2).atan2(-a1);
        t.rem_euclid(FRAC_PI_2)
    });
    Ok(ClassificationResult {
        kind: if exciton {
            TransitionKind::Exciton
        } else {
            TransitionKind::Trion
        },
        theta_est,
        modulation_depth,
        score_exciton,
        score_trion,
    })
}
