use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::{bottleneck_width, AdapterParams};
use crate::manifold::AdaptiveScaler;
use crate::regressor::ModulationNetParams;
use crate::{Error, Result};

/// Names of the flattened segments, in flattening order.
pub const SEGMENT_NAMES: [&str; 14] = [
    "image_scaler.raw",
    "text_scaler.raw",
    "image_adapter.down",
    "image_adapter.up",
    "image_adapter.gate_raw",
    "text_adapter.down",
    "text_adapter.up",
    "text_adapter.gate_raw",
    "modnet.w1",
    "modnet.b1",
    "modnet.w2",
    "modnet.b2",
    "modnet.w3",
    "modnet.b3",
];

/// Every trainable parameter of the model.
///
/// Flattening order: image scaler, text scaler, image adapter
/// (down, up, gate), text adapter (down, up, gate), modulation network
/// (w1, b1, w2, b2, w3, b3). Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub image_scaler: AdaptiveScaler,
    pub text_scaler: AdaptiveScaler,
    pub image_adapter: AdapterParams,
    pub text_adapter: AdapterParams,
    pub modnet: ModulationNetParams,
}

impl ParameterSet {
    pub fn init<R: Rng + ?Sized>(dim: usize, reduction: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            image_scaler: AdaptiveScaler::default(),
            text_scaler: AdaptiveScaler::default(),
            image_adapter: AdapterParams::init(dim, reduction, rng),
            text_adapter: AdapterParams::init(dim, reduction, rng),
            modnet: ModulationNetParams::init(hidden, rng),
        }
    }

    /// All-zero set with the same shapes as `self`.
    pub fn zeros_like(&self) -> Self {
        let a = &self.image_adapter;
        Self {
            image_scaler: AdaptiveScaler::new(0.0),
            text_scaler: AdaptiveScaler::new(0.0),
            image_adapter: AdapterParams::zeros(a.dim, a.hidden),
            text_adapter: AdapterParams::zeros(self.text_adapter.dim, self.text_adapter.hidden),
            modnet: ModulationNetParams::zeros(self.modnet.hidden),
        }
    }

    pub fn zeros(dim: usize, reduction: usize, hidden: usize) -> Self {
        let h = bottleneck_width(dim, reduction);
        Self {
            image_scaler: AdaptiveScaler::new(0.0),
            text_scaler: AdaptiveScaler::new(0.0),
            image_adapter: AdapterParams::zeros(dim, h),
            text_adapter: AdapterParams::zeros(dim, h),
            modnet: ModulationNetParams::zeros(hidden),
        }
    }

    pub fn dim(&self) -> usize {
        self.image_adapter.dim
    }

    pub fn len(&self) -> usize {
        2 + self.image_adapter.num_params()
            + self.text_adapter.num_params()
            + self.modnet.num_params()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn validate(&self) -> Result<()> {
        self.image_adapter.validate()?;
        self.text_adapter.validate()?;
        self.modnet.validate()?;
        if self.image_adapter.dim != self.text_adapter.dim {
            return Err(Error::invalid(
                "image and text adapters disagree on dimension",
            ));
        }
        Ok(())
    }

    fn slices(&self) -> Vec<&[f64]> {
        let (ia, ta, m) = (&self.image_adapter, &self.text_adapter, &self.modnet);
        vec![
            std::slice::from_ref(&self.image_scaler.raw),
            std::slice::from_ref(&self.text_scaler.raw),
            &ia.down,
            &ia.up,
            std::slice::from_ref(&ia.gate_raw),
            &ta.down,
            &ta.up,
            std::slice::from_ref(&ta.gate_raw),
            &m.w1,
            &m.b1,
            &m.w2,
            &m.b2,
            &m.w3,
            &m.b3,
        ]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let ParameterSet {
            image_scaler,
            text_scaler,
            image_adapter: ia,
            text_adapter: ta,
            modnet: m,
        } = self;
        vec![
            std::slice::from_mut(&mut image_scaler.raw),
            std::slice::from_mut(&mut text_scaler.raw),
            &mut ia.down,
            &mut ia.up,
            std::slice::from_mut(&mut ia.gate_raw),
            &mut ta.down,
            &mut ta.up,
            std::slice::from_mut(&mut ta.gate_raw),
            &mut m.w1,
            &mut m.b1,
            &mut m.w2,
            &mut m.b2,
            &mut m.w3,
            &mut m.b3,
        ]
    }

    /// `(name, values)` for each segment in flattening order.
    pub fn segments(&self) -> Vec<(&'static str, &[f64])> {
        SEGMENT_NAMES.into_iter().zip(self.slices()).collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for s in self.slices() {
            out.extend_from_slice(s);
        }
        out
    }

    /// Overwrite every parameter from a flat vector in flattening order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::invalid(format!(
                "flat parameter vector has length {}, expected {}",
                flat.len(),
                self.len()
            )));
        }
        let mut at = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[at..at + s.len()]);
            at += s.len();
        }
        Ok(())
    }

    /// Element-wise `self += other`.
    pub fn add_assign(&mut self, other: &ParameterSet) {
        for (mine, theirs) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in mine.iter_mut().zip(theirs) {
                *x += y;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flatten_round_trip_and_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParameterSet::init(8, 4, 5, &mut rng);
        p.image_scaler.raw = 0.25;
        p.text_scaler.raw = -0.5;
        let flat = p.flatten();
        assert_eq!(flat.len(), p.len());
        assert_eq!(flat[0], 0.25);
        assert_eq!(flat[1], -0.5);
        assert_eq!(flat[2], p.image_adapter.down[0]);
        assert_eq!(*flat.last().unwrap(), p.modnet.b3[2]);

        let mut q = p.zeros_like();
        q.assign_flat(&flat).unwrap();
        assert_eq!(p, q);
        assert!(q.assign_flat(&flat[1..]).is_err());
    }

    #[test]
    fn add_assign_is_elementwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = ParameterSet::init(4, 2, 3, &mut rng);
        let mut acc = p.zeros_like();
        acc.add_assign(&p);
        acc.add_assign(&p);
        let doubled: Vec<f64> = p.flatten().iter().map(|x| 2.0 * x).collect();
        assert_eq!(acc.flatten(), doubled);
    }
}
