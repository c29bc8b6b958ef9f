//! Entailment cones rooted at text embeddings and the score-contracted
//! entailment hinge.
//!
//! The cone at a text point `T` has half-aperture
//! `asin(min(1, 2k / max(sqrt(c) |T_space|, eps)))`, so it widens to `pi/2`
//! near the origin and narrows further out. An image `I` is inside the cone
//! when the exterior angle at `T` of the triangle `(o, T, I)` does not exceed
//! the aperture. During training the aperture is contracted by
//! `1 - contraction * score`, so well-aligned pairs must sit in tighter cones.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::manifold::{self, LorentzPoint, ManifoldConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntailmentConfig {
    /// Aperture boundary constant.
    pub k: f64,
    /// Maximum aperture contraction at score 1.
    pub contraction: f64,
    pub eps: f64,
}

impl Default for EntailmentConfig {
    fn default() -> Self {
        Self {
            k: 0.1,
            contraction: 0.8,
            eps: 1e-8,
        }
    }
}

impl EntailmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(Error::invalid(format!(
                "k must be positive, got {}",
                self.k
            )));
        }
        if !(0.0..1.0).contains(&self.contraction) {
            return Err(Error::invalid(format!(
                "contraction must lie in [0, 1), got {}",
                self.contraction
            )));
        }
        if !(self.eps > 0.0 && self.eps < 1e-3) {
            return Err(Error::invalid(format!(
                "eps must lie in (0, 1e-3), got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// The triple fed to the modulation network, plus the score-contracted
/// aperture used by the entailment loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricPrimitives {
    pub distance: f64,
    pub exterior_angle: f64,
    pub aperture: f64,
    pub dynamic_aperture: f64,
}

/// Gradient with respect to a point's time and space components, treated as
/// independent ambient coordinates.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct PointGrad {
    pub time: f64,
    pub space: Vec<f64>,
}

impl PointGrad {
    pub fn zeros(dim: usize) -> Self {
        Self {
            time: 0.0,
            space: vec![0.0; dim],
        }
    }
}

fn aperture_arg(space_norm: f64, mcfg: &ManifoldConfig, ecfg: &EntailmentConfig) -> f64 {
    2.0 * ecfg.k / (mcfg.sqrt_c() * space_norm).max(ecfg.eps)
}

/// Half-aperture of the cone at `text`, in `(0, pi/2]`.
pub fn half_aperture(text: &LorentzPoint, mcfg: &ManifoldConfig, ecfg: &EntailmentConfig) -> f64 {
    aperture_arg(text.space_norm(), mcfg, ecfg).min(1.0).asin()
}

/// d(aperture)/d(text.space) scaled by `g`.
pub(crate) fn half_aperture_backward(
    text: &LorentzPoint,
    mcfg: &ManifoldConfig,
    ecfg: &EntailmentConfig,
    g: f64,
) -> Vec<f64> {
    let n = text.space_norm();
    let a = aperture_arg(n, mcfg, ecfg);
    if a >= 1.0 || n == 0.0 || g == 0.0 {
        return vec![0.0; text.dim()];
    }
    let sqrt_c = mcfg.sqrt_c();
    // a < 1 implies sqrt(c) n > 2k > eps, so the floor is inactive here
    let denom = sqrt_c * n;
    let da_dn = -2.0 * ecfg.k * sqrt_c / (denom * denom);
    let coef = g / (1.0 - a * a).sqrt() * da_dn / n;
    text.space.iter().map(|x| coef * x).collect()
}

struct AngleParts {
    eta: f64,
    text_norm: f64,
    q: f64,
    q_floored: bool,
    num: f64,
    ratio: f64,
}

fn angle_parts(
    text: &LorentzPoint,
    image: &LorentzPoint,
    mcfg: &ManifoldConfig,
    ecfg: &EntailmentConfig,
) -> Result<AngleParts> {
    if text.dim() != image.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: text {} vs image {}",
            text.dim(),
            image.dim()
        )));
    }
    let text_norm = text.space_norm();
    if text_norm < ecfg.eps {
        return Err(Error::DegenerateGeometry(
            "text point at the origin has no cone axis".into(),
        ));
    }
    let c = mcfg.curvature;
    let eta = text.inner(image);
    let ce = c * eta;
    let q2 = ce * ce - 1.0;
    let q_floored = q2 <= ecfg.eps;
    let q = q2.max(ecfg.eps).sqrt();
    let num = image.time + text.time * ce;
    let ratio = num / (text_norm * q);
    Ok(AngleParts {
        eta,
        text_norm,
        q,
        q_floored,
        num,
        ratio,
    })
}

/// Exterior angle at `text` of the geodesic triangle `(origin, text, image)`.
pub fn exterior_angle(
    text: &LorentzPoint,
    image: &LorentzPoint,
    mcfg: &ManifoldConfig,
    ecfg: &EntailmentConfig,
) -> Result<f64> {
    let p = angle_parts(text, image, mcfg, ecfg)?;
    Ok(p.ratio.clamp(-1.0, 1.0).acos())
}

/// Vector-Jacobian product of [`exterior_angle`] with upstream gradient `g`.
/// Returns `(d/d text, d/d image)`.
pub(crate) fn exterior_angle_backward(
    text: &LorentzPoint,
    image: &LorentzPoint,
    mcfg: &ManifoldConfig,
    ecfg: &EntailmentConfig,
    g: f64,
) -> Result<(PointGrad, PointGrad)> {
    let dim = text.dim();
    let mut gt = PointGrad::zeros(dim);
    let mut gi = PointGrad::zeros(dim);
    let p = angle_parts(text, image, mcfg, ecfg)?;
    if g == 0.0 || p.ratio.abs() >= 1.0 {
        return Ok((gt, gi));
    }
    let c = mcfg.curvature;
    let den = p.text_norm * p.q;
    let g_ratio = -g / (1.0 - p.ratio * p.ratio).sqrt();
    let g_num = g_ratio / den;
    let g_den = -g_ratio * p.num / (den * den);
    let g_text_norm = g_den * p.q;
    let g_q = g_den * p.text_norm;

    let mut g_eta = if p.q_floored {
        0.0
    } else {
        g_q * c * c * p.eta / p.q
    };

    // num = I0 + c T0 eta
    gi.time += g_num;
    gt.time += g_num * c * p.eta;
    g_eta += g_num * c * text.time;

    // eta = -T0 I0 + T_space . I_space
    gt.time -= g_eta * image.time;
    gi.time -= g_eta * text.time;
    let scale_n = g_text_norm / p.text_norm;
    for j in 0..dim {
        gt.space[j] += g_eta * image.space[j] + scale_n * text.space[j];
        gi.space[j] += g_eta * text.space[j];
    }
    Ok((gt, gi))
}

/// `1 - contraction * score`.
pub fn contraction_factor(score: f64, ecfg: &EntailmentConfig) -> Result<f64> {
    check_score(score)?;
    Ok(1.0 - ecfg.contraction * score)
}

fn check_score(score: f64) -> Result<()> {
    if (0.0..=1.0).contains(&score) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "score must lie in [0, 1], got {score}"
        )))
    }
}

/// Half-aperture contracted by the alignment score.
pub fn dynamic_aperture(
    text: &LorentzPoint,
    score: f64,
    mcfg: &ManifoldConfig,
    ecfg: &EntailmentConfig,
) -> Result<f64> {
    Ok(contraction_factor(score, ecfg)? * half_aperture(text, mcfg, ecfg))
}

/// Hinge `max(0, exterior_angle - dynamic_aperture)`.
pub fn entailment_loss(
    text: &LorentzPoint,
    image: &LorentzPoint,
    score: f64,
    mcfg: &ManifoldConfig,
    ecfg: &EntailmentConfig,
) -> Result<f64> {
    let phi = exterior_angle(text, image, mcfg, ecfg)?;
    let delta = dynamic_aperture(text, score, mcfg, ecfg)?;
    Ok(hinge(phi, delta))
}

#[inline]
pub(crate) fn hinge(phi: f64, dynamic_aperture: f64) -> f64 {
    (phi - dynamic_aperture).max(0.0)
}

/// Bundle distance, exterior angle and apertures. Without a score the dynamic
/// aperture equals the plain aperture.
pub fn geometric_primitives(
    text: &LorentzPoint,
    image: &LorentzPoint,
    score: Option<f64>,
    mcfg: &ManifoldConfig,
    ecfg: &EntailmentConfig,
) -> Result<GeometricPrimitives> {
    let distance = manifold::geodesic_distance(text, image, mcfg)?;
    let exterior_angle = exterior_angle(text, image, mcfg, ecfg)?;
    let aperture = half_aperture(text, mcfg, ecfg);
    let dynamic_aperture = match score {
        Some(s) => contraction_factor(s, ecfg)? * aperture,
        None => aperture,
    };
    debug_assert!((0.0..=PI).contains(&exterior_angle));
    debug_assert!(aperture > 0.0 && aperture <= FRAC_PI_2);
    Ok(GeometricPrimitives {
        distance,
        exterior_angle,
        aperture,
        dynamic_aperture,
    })
}
