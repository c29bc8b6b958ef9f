//! Per-sample forward pass and its reverse-mode derivative.
//!
//! `adapt -> scale -> exp map -> primitives -> modulation -> s_hat` for each
//! modality pair. The regressor always sees the plain aperture; the
//! score-contracted aperture only enters the entailment hinge, so
//! ground-truth scores never influence a prediction.

use serde::{Deserialize, Serialize};

use super::{ParameterSet, TrainConfig};
use crate::adapter::AdapterTrace;
use crate::data::{Dataset, Sample};
use crate::entailment::{self, EntailmentConfig, GeometricPrimitives};
use crate::manifold::{self, exp_map_origin, LorentzPoint, ManifoldConfig};
use crate::metrics::MetricReport;
use crate::regressor::{self, ModulationParams, NetTrace};
use crate::{Error, Result};

/// Inference-time quantities for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleGeometry {
    pub s_hat: f64,
    pub s_base: f64,
    pub primitives: GeometricPrimitives,
    pub modulation: ModulationParams,
    pub image_space_norm: f64,
    pub text_space_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub predictions: Vec<f64>,
    pub total: f64,
    pub reg: f64,
    /// Unweighted mean entailment hinge.
    pub entail: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub predictions: Vec<f64>,
}

struct Forward {
    image: Vec<f64>,
    text: Vec<f64>,
    image_adapted: Vec<f64>,
    text_adapted: Vec<f64>,
    image_trace: AdapterTrace,
    text_trace: AdapterTrace,
    image_tangent: Vec<f64>,
    text_tangent: Vec<f64>,
    image_point: LorentzPoint,
    text_point: LorentzPoint,
    primitives: GeometricPrimitives,
    net_trace: NetTrace,
    modulation: ModulationParams,
    s_base: f64,
    s_hat: f64,
    /// `1 - contraction * score` when a score was supplied.
    contraction: f64,
    hinge: f64,
}

fn forward(
    sample: &Sample,
    params: &ParameterSet,
    score: Option<f64>,
    mcfg: &ManifoldConfig,
    ecfg: &EntailmentConfig,
) -> Result<Forward> {
    let dim = params.dim();
    if sample.image_emb.len() != dim || sample.text_emb.len() != dim {
        return Err(Error::invalid(format!(
            "sample dimension {} does not match model dimension {dim}",
            sample.image_emb.len()
        )));
    }
    let image = sample.image_f64();
    let text = sample.text_f64();
    let (image_adapted, image_trace) = params.image_adapter.forward(&image)?;
    let (text_adapted, text_trace) = params.text_adapter.forward(&text)?;
    let s_base = regressor::cosine_similarity(&image_adapted, &text_adapted)?;

    let image_tangent = manifold::lift_to_tangent(&image_adapted, &params.image_scaler)?;
    let text_tangent = manifold::lift_to_tangent(&text_adapted, &params.text_scaler)?;
    let image_point = exp_map_origin(&image_tangent, mcfg);
    let text_point = exp_map_origin(&text_tangent, mcfg);

    let primitives =
        entailment::geometric_primitives(&text_point, &image_point, score, mcfg, ecfg)?;
    let contraction = match score {
        Some(s) => entailment::contraction_factor(s, ecfg)?,
        None => 1.0,
    };
    let hinge = entailment::hinge(primitives.exterior_angle, primitives.dynamic_aperture);

    let (raw, net_trace) = params.modnet.forward([
        primitives.distance,
        primitives.exterior_angle,
        primitives.aperture,
    ]);
    let modulation = regressor::output_transform(raw);
    let s_hat = regressor::modulate(s_base, &modulation);

    Ok(Forward {
        image,
        text,
        image_adapted,
        text_adapted,
        image_trace,
        text_trace,
        image_tangent: image_tangent.space,
        text_tangent: text_tangent.space,
        image_point,
        text_point,
        primitives,
        net_trace,
        modulation,
        s_base,
        s_hat,
        contraction,
        hinge,
    })
}

/// Accumulate `d/d params` of `g_pred * s_hat + g_hinge * hinge` into `grad`.
fn backward(
    fw: &Forward,
    params: &ParameterSet,
    g_pred: f64,
    g_hinge: f64,
    mcfg: &ManifoldConfig,
    ecfg: &EntailmentConfig,
    grad: &mut ParameterSet,
) -> Result<()> {
    let m = &fw.modulation;

    // s_hat = conf * (scale * s_base + bias)
    let g_scale = g_pred * m.confidence * fw.s_base;
    let g_bias = g_pred * m.confidence;
    let g_conf = g_pred * (m.scale * fw.s_base + m.bias);
    let g_s_base = g_pred * m.confidence * m.scale;
    let g_raw = [
        g_scale,
        g_bias,
        g_conf * m.confidence * (1.0 - m.confidence),
    ];
    let [g_dist, mut g_phi, mut g_delta] =
        params
            .modnet
            .backward(&fw.net_trace, g_raw, &mut grad.modnet);

    // hinge = max(0, phi - contraction * delta); subgradient 0 at the kink
    if fw.hinge > 0.0 {
        g_phi += g_hinge;
        g_delta -= g_hinge * fw.contraction;
    }

    let dim = params.dim();
    let (tp, ip) = (&fw.text_point, &fw.image_point);
    let mut g_text_time = 0.0;
    let mut g_image_time = 0.0;
    let mut g_text_space = vec![0.0; dim];
    let mut g_image_space = vec![0.0; dim];

    if g_dist != 0.0 {
        let (gt, gs) = manifold::distance_backward(tp, ip, mcfg, g_dist);
        g_text_time += gt;
        g_image_time -= gt;
        for j in 0..dim {
            g_text_space[j] += gs[j];
            g_image_space[j] -= gs[j];
        }
    }
    if g_phi != 0.0 {
        let (gt, gi) = entailment::exterior_angle_backward(tp, ip, mcfg, ecfg, g_phi)?;
        g_text_time += gt.time;
        g_image_time += gi.time;
        for j in 0..dim {
            g_text_space[j] += gt.space[j];
            g_image_space[j] += gi.space[j];
        }
    }
    if g_delta != 0.0 {
        let gt = entailment::half_aperture_backward(tp, mcfg, ecfg, g_delta);
        for j in 0..dim {
            g_text_space[j] += gt[j];
        }
    }

    let g_text_tangent =
        manifold::exp_map_origin_backward(&fw.text_tangent, mcfg, g_text_time, &g_text_space);
    let g_image_tangent =
        manifold::exp_map_origin_backward(&fw.image_tangent, mcfg, g_image_time, &g_image_space);

    let (mut g_image_adapted, mut g_text_adapted) =
        regressor::cosine_backward(&fw.image_adapted, &fw.text_adapted, g_s_base);

    for (scaler, scaler_grad, g_tan, adapted, g_adapted) in [
        (
            &params.image_scaler,
            &mut grad.image_scaler,
            &g_image_tangent,
            &fw.image_adapted,
            &mut g_image_adapted,
        ),
        (
            &params.text_scaler,
            &mut grad.text_scaler,
            &g_text_tangent,
            &fw.text_adapted,
            &mut g_text_adapted,
        ),
    ] {
        let alpha = scaler.alpha();
        let mut g_alpha = 0.0;
        for j in 0..dim {
            g_alpha += g_tan[j] * adapted[j];
            g_adapted[j] += alpha * g_tan[j];
        }
        scaler_grad.raw += g_alpha * scaler.alpha_grad();
    }

    params.image_adapter.backward(
        &fw.image,
        &fw.image_trace,
        &g_image_adapted,
        &mut grad.image_adapter,
    );
    params.text_adapter.backward(
        &fw.text,
        &fw.text_trace,
        &g_text_adapted,
        &mut grad.text_adapter,
    );
    Ok(())
}

fn require_score(sample: &Sample) -> Result<f64> {
    if sample.has_score() {
        Ok(sample.score)
    } else {
        Err(Error::invalid(format!(
            "training requires a score in [0, 1], got {}",
            sample.score
        )))
    }
}

fn batch_forward(
    batch: &[&Sample],
    params: &ParameterSet,
    cfg: &TrainConfig,
) -> Result<Vec<Forward>> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let (mcfg, ecfg) = (cfg.manifold(), cfg.entailment());
    cfg.exec.try_map(batch, |i, s| {
        require_score(s)
            .and_then(|score| forward(s, params, Some(score), &mcfg, &ecfg))
            .map_err(|e| e.at_sample(i))
    })
}

fn summarize(batch: &[&Sample], fws: &[Forward], lambda: f64) -> BatchLoss {
    let n = batch.len() as f64;
    let predictions: Vec<f64> = fws.iter().map(|f| f.s_hat).collect();
    let reg = batch
        .iter()
        .zip(&predictions)
        .map(|(s, p)| (p - s.score).abs())
        .sum::<f64>()
        / n;
    let entail = fws.iter().map(|f| f.hinge).sum::<f64>() / n;
    BatchLoss {
        predictions,
        total: reg + lambda * entail,
        reg,
        entail,
    }
}

/// Training-mode forward pass: predictions and the three loss terms.
pub fn forward_batch(
    batch: &[&Sample],
    params: &ParameterSet,
    cfg: &TrainConfig,
) -> Result<BatchLoss> {
    let fws = batch_forward(batch, params, cfg)?;
    Ok(summarize(batch, &fws, cfg.lambda))
}

/// Loss and its exact gradient with respect to every parameter.
///
/// Per-sample gradients are computed independently (possibly in parallel)
/// and summed in batch order, so the result does not depend on the
/// execution mode.
pub fn loss_and_gradients(
    batch: &[&Sample],
    params: &ParameterSet,
    cfg: &TrainConfig,
) -> Result<(BatchLoss, ParameterSet)> {
    let (mcfg, ecfg) = (cfg.manifold(), cfg.entailment());
    let fws = batch_forward(batch, params, cfg)?;
    let loss = summarize(batch, &fws, cfg.lambda);
    let n = batch.len() as f64;
    let g_hinge = cfg.lambda / n;
    let items: Vec<(&Forward, f64)> = fws
        .iter()
        .zip(batch)
        .map(|(f, s)| {
            let diff = f.s_hat - s.score;
            // d|x|/dx with sign(0) = 0
            let g = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            (f, g / n)
        })
        .collect();
    let per_sample = cfg.exec.try_map(&items, |i, (fw, g_pred)| {
        let mut g = params.zeros_like();
        backward(fw, params, *g_pred, g_hinge, &mcfg, &ecfg, &mut g).map_err(|e| e.at_sample(i))?;
        Ok::<_, Error>(g)
    })?;
    let mut total = params.zeros_like();
    for g in &per_sample {
        total.add_assign(g);
    }
    Ok((loss, total))
}

/// Flattened gradient of the batch loss.
pub fn gradients(batch: &[&Sample], params: &ParameterSet, cfg: &TrainConfig) -> Result<Vec<f64>> {
    Ok(loss_and_gradients(batch, params, cfg)?.1.flatten())
}

/// Inference for every sample; ground-truth scores are not read.
pub fn predict(
    ds: &Dataset,
    params: &ParameterSet,
    cfg: &TrainConfig,
) -> Result<Vec<SampleGeometry>> {
    if ds.dim != params.dim() {
        return Err(Error::invalid(format!(
            "dataset dimension {} does not match model dimension {}",
            ds.dim,
            params.dim()
        )));
    }
    let (mcfg, ecfg) = (cfg.manifold(), cfg.entailment());
    cfg.exec.try_map(&ds.samples, |i, s| {
        let fw = forward(s, params, None, &mcfg, &ecfg).map_err(|e| e.at_sample(i))?;
        Ok(SampleGeometry {
            s_hat: fw.s_hat,
            s_base: fw.s_base,
            primitives: fw.primitives,
            modulation: fw.modulation,
            image_space_norm: fw.image_point.space_norm(),
            text_space_norm: fw.text_point.space_norm(),
        })
    })
}

/// Predictions and SRCC/PLCC against the normalized scores.
pub fn evaluate(ds: &Dataset, params: &ParameterSet, cfg: &TrainConfig) -> Result<Evaluation> {
    if ds.len() < 2 {
        return Err(Error::UndefinedMetric(format!(
            "evaluation needs at least 2 samples, got {}",
            ds.len()
        )));
    }
    let predictions: Vec<f64> = predict(ds, params, cfg)?.iter().map(|g| g.s_hat).collect();
    let report = MetricReport::compute(&predictions, &ds.scores())?;
    Ok(Evaluation {
        report,
        predictions,
    })
}
