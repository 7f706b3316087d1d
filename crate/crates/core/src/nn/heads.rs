//! Two-layer MLP heads: projectors, predictors, and the classifier.
//!
//! The classifier is exactly two affine layers with a ReLU between (hidden
//! width 1000 in the reference configuration). Projector and predictor
//! heads optionally insert batch norm after the first layer, the usual
//! arrangement for the SSL methods supported here.

use ndarray::Array2;
use rand_chacha::ChaCha12Rng;

use super::layers::{relu, relu_backward, BatchNorm1d, BatchNorm1dCache, Linear, LinearCache, Mode};
use super::{Buffer, HasParams, Param};

#[derive(Debug, Clone)]
pub struct Mlp {
    pub lin1: Linear,
    pub bn: Option<BatchNorm1d>,
    pub lin2: Linear,
}

pub struct MlpCache {
    lc1: LinearCache,
    bnc: Option<BatchNorm1dCache>,
    y1: Array2<f32>,
    lc2: LinearCache,
}

impl Mlp {
    pub fn new(
        name: &str,
        in_f: usize,
        hidden: usize,
        out_f: usize,
        batchnorm: bool,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        Mlp {
            lin1: Linear::new(&format!("{name}.lin1"), in_f, hidden, rng),
            bn: batchnorm.then(|| BatchNorm1d::new(&format!("{name}.bn"), hidden)),
            lin2: Linear::new(&format!("{name}.lin2"), hidden, out_f, rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.lin1.in_f
    }

    pub fn out_dim(&self) -> usize {
        self.lin2.out_f
    }

    pub fn forward(&mut self, x: &Array2<f32>, mode: Mode) -> (Array2<f32>, MlpCache) {
        let (h, lc1) = self.lin1.forward(x);
        let (h, bnc) = match &mut self.bn {
            Some(bn) => {
                let (o, c) = bn.forward(&h, mode);
                (o, c)
            }
            None => (h, None),
        };
        let y1 = relu(&h);
        let (y, lc2) = self.lin2.forward(&y1);
        (y, MlpCache { lc1, bnc, y1, lc2 })
    }

    pub fn forward_infer(&mut self, x: &Array2<f32>, mode: Mode) -> Array2<f32> {
        let (h, _) = self.lin1.forward(x);
        let h = match &mut self.bn {
            Some(bn) => bn.forward(&h, mode).0,
            None => h,
        };
        let y1 = relu(&h);
        self.lin2.forward(&y1).0
    }

    /// Accumulates parameter gradients; returns the input gradient.
    pub fn backward(&mut self, dy: &Array2<f32>, cache: &MlpCache) -> Array2<f32> {
        let d1 = self.lin2.backward(dy, &cache.lc2);
        let d1 = relu_backward(&d1, &cache.y1);
        let d1 = match (&mut self.bn, &cache.bnc) {
            (Some(bn), Some(c)) => bn.backward(&d1, c),
            (None, None) => d1,
            _ => panic!("mlp cache/batchnorm mismatch"),
        };
        self.lin1.backward(&d1, &cache.lc1)
    }
}

impl HasParams for Mlp {
    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.lin1.collect_params(out);
        if let Some(bn) = &self.bn {
            bn.collect_params(out);
        }
        self.lin2.collect_params(out);
    }
    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.lin1.collect_params_mut(out);
        if let Some(bn) = &mut self.bn {
            bn.collect_params_mut(out);
        }
        self.lin2.collect_params_mut(out);
    }
    fn collect_buffers<'a>(&'a self, out: &mut Vec<&'a Buffer>) {
        if let Some(bn) = &self.bn {
            bn.collect_buffers(out);
        }
    }
    fn collect_buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Buffer>) {
        if let Some(bn) = &mut self.bn {
            bn.collect_buffers_mut(out);
        }
    }
}
