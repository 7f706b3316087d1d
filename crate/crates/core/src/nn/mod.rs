//! Minimal CPU neural-network substrate.
//!
//! Everything here is plain `ndarray` math with hand-written backward
//! passes: convolution via im2col, batch normalization, linear layers,
//! pooling, and SGD with momentum. Layers return explicit cache values
//! from their forward pass so the same network can run several forward
//! passes per step (two augmented views share one parameter set) before
//! the backward passes accumulate gradients.

pub mod backbone;
pub mod heads;
pub mod init;
pub mod layers;
pub mod optim;
pub mod serialize;

use ndarray::ArrayD;
use sha2::{Digest, Sha256};

/// A named trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: ArrayD<f32>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Non-trainable state that still belongs to a network (batch-norm running
/// statistics). Serialized with checkpoints and copied by snapshots and
/// momentum updates, but never touched by the optimizer.
#[derive(Debug, Clone)]
pub struct Buffer {
    pub name: String,
    pub value: ArrayD<f32>,
}

impl Buffer {
    pub fn new(name: impl Into<String>, value: ArrayD<f32>) -> Self {
        Buffer {
            name: name.into(),
            value,
        }
    }
}

/// Uniform access to a component's parameters and buffers.
///
/// Collection order must be stable across calls and across identically
/// constructed components: the optimizer, EMA updates, snapshots and
/// checkpoints all align parameter lists positionally.
pub trait HasParams {
    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>);
    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>);
    fn collect_buffers<'a>(&'a self, out: &mut Vec<&'a Buffer>);
    fn collect_buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Buffer>);

    fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        self.collect_params(&mut v);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        self.collect_params_mut(&mut v);
        v
    }

    fn buffers(&self) -> Vec<&Buffer> {
        let mut v = Vec::new();
        self.collect_buffers(&mut v);
        v
    }

    fn buffers_mut(&mut self) -> Vec<&mut Buffer> {
        let mut v = Vec::new();
        self.collect_buffers_mut(&mut v);
        v
    }

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

/// SHA-256 over parameter bytes only, in collection order. Batch-norm
/// running statistics move with every training-mode forward pass, so
/// parameter-trajectory comparisons use this rather than
/// [`state_checksum`].
pub fn param_checksum<M: HasParams>(m: &M) -> String {
    let mut h = Sha256::new();
    for p in m.params() {
        h.update(p.name.as_bytes());
        for v in p.value.iter() {
            h.update(v.to_le_bytes());
        }
    }
    let digest = h.finalize();
    let mut s = String::with_capacity(64);
    for byte in digest {
        s.push_str(&format!("{byte:02x}"));
    }
    s
}

/// SHA-256 over all parameter and buffer bytes, in collection order.
/// Bitwise-stable: used to assert frozen-snapshot immutability.
pub fn state_checksum<M: HasParams>(m: &M) -> String {
    let mut h = Sha256::new();
    for p in m.params() {
        h.update(p.name.as_bytes());
        for v in p.value.iter() {
            h.update(v.to_le_bytes());
        }
    }
    for b in m.buffers() {
        h.update(b.name.as_bytes());
        for v in b.value.iter() {
            h.update(v.to_le_bytes());
        }
    }
    let digest = h.finalize();
    let mut s = String::with_capacity(64);
    for byte in digest {
        s.push_str(&format!("{byte:02x}"));
    }
    s
}

/// In-place exponential moving average: `target <- m*target + (1-m)*source`
/// over parameters and buffers alike, so momentum 1.0 is an exact fixed
/// point and momentum 0.0 a full copy. Lists must align.
pub fn ema_assign<T: HasParams, S: HasParams>(target: &mut T, source: &S, momentum: f32) {
    let src: Vec<ArrayD<f32>> = source.params().iter().map(|p| p.value.clone()).collect();
    let dst = target.params_mut();
    assert_eq!(src.len(), dst.len(), "EMA parameter lists misaligned");
    for (d, s) in dst.into_iter().zip(src.iter()) {
        d.value.zip_mut_with(s, |t, &v| *t = momentum * *t + (1.0 - momentum) * v);
    }
    let src_buf: Vec<ArrayD<f32>> = source.buffers().iter().map(|b| b.value.clone()).collect();
    let dst_buf = target.buffers_mut();
    assert_eq!(src_buf.len(), dst_buf.len(), "EMA buffer lists misaligned");
    for (d, s) in dst_buf.into_iter().zip(src_buf.iter()) {
        d.value.zip_mut_with(s, |t, &v| *t = momentum * *t + (1.0 - momentum) * v);
    }
}

/// Copy every parameter and buffer of `source` into `target` (identical
/// architectures assumed).
pub fn copy_state<T: HasParams, S: HasParams>(target: &mut T, source: &S) {
    ema_assign(target, source, 0.0);
}
