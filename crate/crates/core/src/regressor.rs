//! Modulation regressor: a small feed-forward network maps the geometric
//! primitives `(distance, exterior angle, aperture)` to a per-sample
//! `(scale, bias, confidence)` triple that calibrates the Euclidean cosine
//! similarity: `s_hat = confidence * (scale * cos + bias)`.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::entailment::GeometricPrimitives;
use crate::manifold::{dot, norm};
use crate::{logistic, Error, Result};

pub const DEFAULT_HIDDEN: usize = 32;
/// Offset added to the confidence logit so a zero output layer gives
/// `confidence = logistic(4)`.
pub const CONFIDENCE_OFFSET: f64 = 4.0;

/// Fixed affine standardization of the primitives before the network.
const INPUT_SCALE: [f64; 3] = [1.0 / 2.0, 1.0 / PI, 1.0 / FRAC_PI_2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationParams {
    pub scale: f64,
    pub bias: f64,
    pub confidence: f64,
}

/// Weights of the `3 -> h -> h -> 3` tanh network. Matrices are row-major
/// with one row per output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationNetParams {
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct NetTrace {
    input: [f64; 3],
    h1: Vec<f64>,
    h2: Vec<f64>,
}

impl ModulationNetParams {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            hidden,
            w1: vec![0.0; hidden * 3],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * hidden],
            b2: vec![0.0; hidden],
            w3: vec![0.0; 3 * hidden],
            b3: vec![0.0; 3],
        }
    }

    /// Xavier-uniform hidden layers, zero output layer.
    pub fn init<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        let mut net = Self::zeros(hidden);
        let b1 = (6.0 / (3 + hidden) as f64).sqrt();
        for w in &mut net.w1 {
            *w = rng.random_range(-b1..b1);
        }
        let b2 = (6.0 / (2 * hidden) as f64).sqrt();
        for w in &mut net.w2 {
            *w = rng.random_range(-b2..b2);
        }
        net
    }

    pub fn num_params(&self) -> usize {
        self.w1.len()
            + self.b1.len()
            + self.w2.len()
            + self.b2.len()
            + self.w3.len()
            + self.b3.len()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden;
        let ok = self.w1.len() == h * 3
            && self.b1.len() == h
            && self.w2.len() == h * h
            && self.b2.len() == h
            && self.w3.len() == 3 * h
            && self.b3.len() == 3;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "modulation network shapes inconsistent with hidden width {h}"
            )))
        }
    }

    /// Raw network output for primitives `(distance, angle, aperture)`.
    pub(crate) fn forward(&self, prims: [f64; 3]) -> ([f64; 3], NetTrace) {
        let h = self.hidden;
        let input = [
            prims[0] * INPUT_SCALE[0],
            prims[1] * INPUT_SCALE[1],
            prims[2] * INPUT_SCALE[2],
        ];
        let h1: Vec<f64> = (0..h)
            .map(|j| (dot(&self.w1[j * 3..j * 3 + 3], &input) + self.b1[j]).tanh())
            .collect();
        let h2: Vec<f64> = (0..h)
            .map(|j| (dot(&self.w2[j * h..(j + 1) * h], &h1) + self.b2[j]).tanh())
            .collect();
        let mut out = [0.0; 3];
        for (o, slot) in out.iter_mut().enumerate() {
            *slot = dot(&self.w3[o * h..(o + 1) * h], &h2) + self.b3[o];
        }
        (out, NetTrace { input, h1, h2 })
    }

    /// Accumulate parameter gradients for upstream `g_out` and return the
    /// gradient with respect to the unstandardized primitives.
    pub(crate) fn backward(
        &self,
        trace: &NetTrace,
        g_out: [f64; 3],
        grad: &mut ModulationNetParams,
    ) -> [f64; 3] {
        let h = self.hidden;
        let mut g_h2 = vec![0.0; h];
        for o in 0..3 {
            let go = g_out[o];
            if go == 0.0 {
                continue;
            }
            grad.b3[o] += go;
            for j in 0..h {
                grad.w3[o * h + j] += go * trace.h2[j];
                g_h2[j] += go * self.w3[o * h + j];
            }
        }
        let g_z2: Vec<f64> = g_h2
            .iter()
            .zip(&trace.h2)
            .map(|(g, a)| g * (1.0 - a * a))
            .collect();
        let mut g_h1 = vec![0.0; h];
        for j in 0..h {
            let gz = g_z2[j];
            if gz == 0.0 {
                continue;
            }
            grad.b2[j] += gz;
            for i in 0..h {
                grad.w2[j * h + i] += gz * trace.h1[i];
                g_h1[i] += gz * self.w2[j * h + i];
            }
        }
        let mut g_in = [0.0; 3];
        for j in 0..h {
            let gz = g_h1[j] * (1.0 - trace.h1[j] * trace.h1[j]);
            if gz == 0.0 {
                continue;
            }
            grad.b1[j] += gz;
            for i in 0..3 {
                grad.w1[j * 3 + i] += gz * trace.input[i];
                g_in[i] += gz * self.w1[j * 3 + i];
            }
        }
        [
            g_in[0] * INPUT_SCALE[0],
            g_in[1] * INPUT_SCALE[1],
            g_in[2] * INPUT_SCALE[2],
        ]
    }
}

/// Map raw network outputs to modulation parameters.
pub(crate) fn output_transform(raw: [f64; 3]) -> ModulationParams {
    ModulationParams {
        scale: 1.0 + raw[0],
        bias: raw[1],
        confidence: logistic(raw[2] + CONFIDENCE_OFFSET),
    }
}

/// Cosine of the angle between two nonzero vectors, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Gradients of the (unclamped) cosine with respect to both arguments.
pub(crate) fn cosine_backward(a: &[f64], b: &[f64], g: f64) -> (Vec<f64>, Vec<f64>) {
    let (na, nb) = (norm(a), norm(b));
    let cos = dot(a, b) / (na * nb);
    let inv = 1.0 / (na * nb);
    let ga = a
        .iter()
        .zip(b)
        .map(|(x, y)| g * (y * inv - cos * x / (na * na)))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(x, y)| g * (x * inv - cos * y / (nb * nb)))
        .collect();
    (ga, gb)
}

fn check_primitives(z: &GeometricPrimitives) -> Result<[f64; 3]> {
    let v = [z.distance, z.exterior_angle, z.aperture];
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::invalid("non-finite geometric primitives"))
    }
}

/// Run the modulation network on a set of primitives.
pub fn modulation_params(
    z: &GeometricPrimitives,
    net: &ModulationNetParams,
) -> Result<ModulationParams> {
    net.validate()?;
    let (raw, _) = net.forward(check_primitives(z)?);
    Ok(output_transform(raw))
}

/// `confidence * (scale * s_base + bias)`.
pub fn modulate(s_base: f64, m: &ModulationParams) -> f64 {
    m.confidence * (m.scale * s_base + m.bias)
}

/// Final alignment score for an adapted feature pair and its primitives.
pub fn predict_score(
    f_image: &[f64],
    f_text: &[f64],
    z: &GeometricPrimitives,
    net: &ModulationNetParams,
) -> Result<f64> {
    let s_base = cosine_similarity(f_image, f_text)?;
    Ok(modulate(s_base, &modulation_params(z, net)?))
}
