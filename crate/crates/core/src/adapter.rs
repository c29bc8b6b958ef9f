//! Gated residual bottleneck adapter.
//!
//! `adapt(f) = g * up(relu(down(f))) + (1 - g) * f` with `g = logistic(gate_raw)`.
//! With `up = 0` the adapter is exactly `(1 - g) * f`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{logistic, Error, Result};

pub const DEFAULT_REDUCTION: usize = 4;
pub const DEFAULT_GATE_RAW: f64 = -4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterParams {
    pub dim: usize,
    pub hidden: usize,
    /// `dim x hidden`, row-major.
    pub down: Vec<f64>,
    /// `hidden x dim`, row-major.
    pub up: Vec<f64>,
    pub gate_raw: f64,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct AdapterTrace {
    pre: Vec<f64>,
    act: Vec<f64>,
    branch: Vec<f64>,
    gate: f64,
}

/// Bottleneck width for a feature dimension and reduction ratio; at least 1.
pub fn bottleneck_width(dim: usize, reduction: usize) -> usize {
    (dim / reduction.max(1)).max(1)
}

impl AdapterParams {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            dim,
            hidden,
            down: vec![0.0; dim * hidden],
            up: vec![0.0; hidden * dim],
            gate_raw: 0.0,
        }
    }

    /// Near-identity initialization: `up = 0`, `down ~ U(-1/sqrt(d), 1/sqrt(d))`,
    /// `gate_raw = -4`.
    pub fn init<R: Rng + ?Sized>(dim: usize, reduction: usize, rng: &mut R) -> Self {
        let hidden = bottleneck_width(dim, reduction);
        let bound = 1.0 / (dim as f64).sqrt();
        let down = (0..dim * hidden)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            dim,
            hidden,
            down,
            up: vec![0.0; hidden * dim],
            gate_raw: DEFAULT_GATE_RAW,
        }
    }

    pub fn gate(&self) -> f64 {
        logistic(self.gate_raw)
    }

    pub fn num_params(&self) -> usize {
        self.down.len() + self.up.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.down.len() != self.dim * self.hidden || self.up.len() != self.hidden * self.dim {
            return Err(Error::invalid(format!(
                "adapter shapes inconsistent with dim {} and hidden {}",
                self.dim, self.hidden
            )));
        }
        Ok(())
    }

    pub(crate) fn forward(&self, f: &[f64]) -> Result<(Vec<f64>, AdapterTrace)> {
        if f.len() != self.dim {
            return Err(Error::invalid(format!(
                "adapter expects dimension {}, got {}",
                self.dim,
                f.len()
            )));
        }
        let h = self.hidden;
        let mut pre = vec![0.0; h];
        for (i, &fi) in f.iter().enumerate() {
            if fi == 0.0 {
                continue;
            }
            let row = &self.down[i * h..(i + 1) * h];
            for (p, w) in pre.iter_mut().zip(row) {
                *p += fi * w;
            }
        }
        let act: Vec<f64> = pre.iter().map(|&p| p.max(0.0)).collect();
        let mut branch = vec![0.0; self.dim];
        for (j, &a) in act.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let row = &self.up[j * self.dim..(j + 1) * self.dim];
            for (b, w) in branch.iter_mut().zip(row) {
                *b += a * w;
            }
        }
        let gate = self.gate();
        let out = branch
            .iter()
            .zip(f)
            .map(|(b, x)| gate * b + (1.0 - gate) * x)
            .collect();
        Ok((
            out,
            AdapterTrace {
                pre,
                act,
                branch,
                gate,
            },
        ))
    }

    /// Accumulate parameter gradients for upstream `g_out` into `grad`.
    pub(crate) fn backward(
        &self,
        f: &[f64],
        trace: &AdapterTrace,
        g_out: &[f64],
        grad: &mut AdapterParams,
    ) {
        let (h, d) = (self.hidden, self.dim);
        let gate = trace.gate;

        let mut g_gate = 0.0;
        for k in 0..d {
            g_gate += g_out[k] * (trace.branch[k] - f[k]);
        }
        grad.gate_raw += g_gate * gate * (1.0 - gate);

        let mut g_pre = vec![0.0; h];
        for j in 0..h {
            let row = &self.up[j * d..(j + 1) * d];
            let grow = &mut grad.up[j * d..(j + 1) * d];
            let a = trace.act[j];
            let mut acc = 0.0;
            for k in 0..d {
                let gb = gate * g_out[k];
                grow[k] += a * gb;
                acc += row[k] * gb;
            }
            g_pre[j] = if trace.pre[j] > 0.0 { acc } else { 0.0 };
        }
        for (i, &fi) in f.iter().enumerate() {
            let grow = &mut grad.down[i * h..(i + 1) * h];
            for j in 0..h {
                grow[j] += fi * g_pre[j];
            }
        }
    }
}

/// Apply the adapter to one feature vector.
pub fn adapt(f: &[f64], params: &AdapterParams) -> Result<Vec<f64>> {
    params.validate()?;
    params.forward(f).map(|(out, _)| out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_params(dim: usize, rng: &mut ChaCha8Rng) -> AdapterParams {
        let mut p = AdapterParams::init(dim, 2, rng);
        for w in &mut p.up {
            *w = rng.random_range(-0.5..0.5);
        }
        p.gate_raw = 0.3;
        p
    }

    #[test]
    fn closed_gate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = random_params(6, &mut rng);
        p.gate_raw = -30.0;
        let f = [0.3, -1.0, 2.0, 0.5, 0.0, -0.7];
        let out = adapt(&f, &p).unwrap();
        for (a, b) in out.iter().zip(&f) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_branch_scales_input() {
        let mut p = AdapterParams::zeros(3, 1);
        p.gate_raw = 0.7;
        let g = p.gate();
        let f = [1.0, -2.0, 4.0];
        let out = adapt(&f, &p).unwrap();
        for (a, b) in out.iter().zip(&f) {
            assert_eq!(*a, (1.0 - g) * b);
        }
    }

    #[test]
    fn zero_input_maps_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_params(5, &mut rng);
        assert_eq!(adapt(&[0.0; 5], &p).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn rejects_wrong_dimension() {
        let p = AdapterParams::zeros(4, 1);
        assert!(matches!(adapt(&[1.0; 3], &p), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn init_is_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = AdapterParams::init(32, DEFAULT_REDUCTION, &mut rng);
        assert_eq!(p.hidden, 8);
        let f: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin()).collect();
        let out = adapt(&f, &p).unwrap();
        let g0 = logistic(DEFAULT_GATE_RAW);
        for (a, b) in out.iter().zip(&f) {
            assert_eq!(*a, (1.0 - g0) * b);
        }
    }

    #[test]
    fn lipschitz_bound_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_params(6, &mut rng);
        // Frobenius norms bound the operator norms from above
        let fro = |m: &[f64]| m.iter().map(|x| x * x).sum::<f64>().sqrt();
        let lip = 1.0 + fro(&p.up) * fro(&p.down);
        for _ in 0..200 {
            let a: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (ya, yb) = (adapt(&a, &p).unwrap(), adapt(&b, &p).unwrap());
            let dy: f64 = ya
                .iter()
                .zip(&yb)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            let dx: f64 = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(dy <= lip * dx + 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_params(5, &mut rng);
        let f = [0.9, -0.4, 0.3, 1.2, -0.8];
        let w = [0.5, -1.0, 0.25, 0.7, -0.3];
        let objective = |p: &AdapterParams| -> f64 {
            adapt(&f, p)
                .unwrap()
                .iter()
                .zip(&w)
                .map(|(a, b)| a * b)
                .sum()
        };
        let (_, trace) = p.forward(&f).unwrap();
        let mut grad = AdapterParams::zeros(p.dim, p.hidden);
        p.backward(&f, &trace, &w, &mut grad);

        let h = 1e-6;
        let check = |an: f64, plus: AdapterParams, minus: AdapterParams| {
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            assert!((an - fd).abs() < 1e-7, "analytic {an} vs fd {fd}");
        };
        for idx in 0..p.down.len() {
            let (mut a, mut b) = (p.clone(), p.clone());
            a.down[idx] += h;
            b.down[idx] -= h;
            check(grad.down[idx], a, b);
        }
        for idx in 0..p.up.len() {
            let (mut a, mut b) = (p.clone(), p.clone());
            a.up[idx] += h;
            b.up[idx] -= h;
            check(grad.up[idx], a, b);
        }
        let (mut a, mut b) = (p.clone(), p.clone());
        a.gate_raw += h;
        b.gate_raw -= h;
        check(grad.gate_raw, a, b);
    }
}
