//! Feature-extractor backbones.
//!
//! Three options: `resnet18` (the reference architecture, width-scalable,
//! with a 3x3 stem below 64px input), `small` (a three-block CNN for
//! desk-scale presets), and `toy` (a single linear map used by the
//! hand-worked training-step tests).

use ndarray::{Array2, Array4};
use rand_chacha::ChaCha12Rng;

use super::layers::*;
use super::{Buffer, HasParams, Param};
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Small CNN
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SmallCnn {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    conv3: Conv2d,
    bn3: BatchNorm2d,
    width: usize,
}

pub struct SmallCnnCache {
    c1: Conv2dCache,
    b1: BatchNorm2dCache,
    y1: Array4<f32>,
    p1: MaxPool2Cache,
    c2: Conv2dCache,
    b2: BatchNorm2dCache,
    y2: Array4<f32>,
    p2: MaxPool2Cache,
    c3: Conv2dCache,
    b3: BatchNorm2dCache,
    y3: Array4<f32>,
    hw: (usize, usize),
}

impl SmallCnn {
    pub fn new(name: &str, width: usize, rng: &mut ChaCha12Rng) -> Self {
        SmallCnn {
            conv1: Conv2d::new(&format!("{name}.conv1"), 3, width, 3, 1, 1, rng),
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), width),
            conv2: Conv2d::new(&format!("{name}.conv2"), width, 2 * width, 3, 1, 1, rng),
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), 2 * width),
            conv3: Conv2d::new(&format!("{name}.conv3"), 2 * width, 4 * width, 3, 1, 1, rng),
            bn3: BatchNorm2d::new(&format!("{name}.bn3"), 4 * width),
            width,
        }
    }

    pub fn feature_dim(&self) -> usize {
        4 * self.width
    }

    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> (Array2<f32>, SmallCnnCache) {
        let (h1, c1) = self.conv1.forward(x);
        let (n1, b1) = self.bn1.forward(&h1, mode);
        let y1 = relu(&n1);
        let (q1, p1) = maxpool2(&y1);
        let (h2, c2) = self.conv2.forward(&q1);
        let (n2, b2) = self.bn2.forward(&h2, mode);
        let y2 = relu(&n2);
        let (q2, p2) = maxpool2(&y2);
        let (h3, c3) = self.conv3.forward(&q2);
        let (n3, b3) = self.bn3.forward(&h3, mode);
        let y3 = relu(&n3);
        let (feat, hw) = global_avg_pool(&y3);
        (
            feat,
            SmallCnnCache {
                c1,
                b1: b1.expect("train-mode cache"),
                y1,
                p1,
                c2,
                b2: b2.expect("train-mode cache"),
                y2,
                p2,
                c3,
                b3: b3.expect("train-mode cache"),
                y3,
                hw,
            },
        )
    }

    /// Inference pass; no caches kept.
    pub fn forward_infer(&mut self, x: &Array4<f32>, mode: Mode) -> Array2<f32> {
        let (h1, _) = self.conv1.forward(x);
        let (n1, _) = self.bn1.forward(&h1, mode);
        let y1 = relu(&n1);
        let (q1, _) = maxpool2(&y1);
        let (h2, _) = self.conv2.forward(&q1);
        let (n2, _) = self.bn2.forward(&h2, mode);
        let y2 = relu(&n2);
        let (q2, _) = maxpool2(&y2);
        let (h3, _) = self.conv3.forward(&q2);
        let (n3, _) = self.bn3.forward(&h3, mode);
        let y3 = relu(&n3);
        global_avg_pool(&y3).0
    }

    pub fn backward(&mut self, dfeat: &Array2<f32>, cache: &SmallCnnCache) {
        let d3 = global_avg_pool_backward(dfeat, cache.hw);
        let d3 = relu_backward(&d3, &cache.y3);
        let d3 = self.bn3.backward(&d3, &cache.b3);
        let d3 = self.conv3.backward(&d3, &cache.c3);
        let d2 = maxpool2_backward(&d3, &cache.p2);
        let d2 = relu_backward(&d2, &cache.y2);
        let d2 = self.bn2.backward(&d2, &cache.b2);
        let d2 = self.conv2.backward(&d2, &cache.c2);
        let d1 = maxpool2_backward(&d2, &cache.p1);
        let d1 = relu_backward(&d1, &cache.y1);
        let d1 = self.bn1.backward(&d1, &cache.b1);
        let _ = self.conv1.backward(&d1, &cache.c1);
    }
}

impl HasParams for SmallCnn {
    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.conv1.collect_params(out);
        self.bn1.collect_params(out);
        self.conv2.collect_params(out);
        self.bn2.collect_params(out);
        self.conv3.collect_params(out);
        self.bn3.collect_params(out);
    }
    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.conv1.collect_params_mut(out);
        self.bn1.collect_params_mut(out);
        self.conv2.collect_params_mut(out);
        self.bn2.collect_params_mut(out);
        self.conv3.collect_params_mut(out);
        self.bn3.collect_params_mut(out);
    }
    fn collect_buffers<'a>(&'a self, out: &mut Vec<&'a Buffer>) {
        self.bn1.collect_buffers(out);
        self.bn2.collect_buffers(out);
        self.bn3.collect_buffers(out);
    }
    fn collect_buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Buffer>) {
        self.bn1.collect_buffers_mut(out);
        self.bn2.collect_buffers_mut(out);
        self.bn3.collect_buffers_mut(out);
    }
}

// ---------------------------------------------------------------------------
// ResNet-18
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    down: Option<(Conv2d, BatchNorm2d)>,
}

struct BasicBlockCache {
    c1: Conv2dCache,
    b1: BatchNorm2dCache,
    y1: Array4<f32>,
    c2: Conv2dCache,
    b2: BatchNorm2dCache,
    down: Option<(Conv2dCache, BatchNorm2dCache)>,
    out: Array4<f32>,
}

impl BasicBlock {
    fn new(name: &str, c_in: usize, c_out: usize, stride: usize, rng: &mut ChaCha12Rng) -> Self {
        let down = if stride != 1 || c_in != c_out {
            Some((
                Conv2d::new(&format!("{name}.down.conv"), c_in, c_out, 1, stride, 0, rng),
                BatchNorm2d::new(&format!("{name}.down.bn"), c_out),
            ))
        } else {
            None
        };
        BasicBlock {
            conv1: Conv2d::new(&format!("{name}.conv1"), c_in, c_out, 3, stride, 1, rng),
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), c_out),
            conv2: Conv2d::new(&format!("{name}.conv2"), c_out, c_out, 3, 1, 1, rng),
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), c_out),
            down,
        }
    }

    fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> (Array4<f32>, BasicBlockCache) {
        let (h1, c1) = self.conv1.forward(x);
        let (n1, b1) = self.bn1.forward(&h1, mode);
        let y1 = relu(&n1);
        let (h2, c2) = self.conv2.forward(&y1);
        let (n2, b2) = self.bn2.forward(&h2, mode);
        let (short, down) = match &mut self.down {
            Some((dc, db)) => {
                let (s, sc) = dc.forward(x);
                let (sn, sb) = db.forward(&s, mode);
                (sn, Some((sc, sb.expect("train-mode cache"))))
            }
            None => (x.clone(), None),
        };
        let out = relu(&(&n2 + &short));
        (
            out.clone(),
            BasicBlockCache {
                c1,
                b1: b1.expect("train-mode cache"),
                y1,
                c2,
                b2: b2.expect("train-mode cache"),
                down,
                out,
            },
        )
    }

    fn forward_infer(&mut self, x: &Array4<f32>, mode: Mode) -> Array4<f32> {
        let (h1, _) = self.conv1.forward(x);
        let (n1, _) = self.bn1.forward(&h1, mode);
        let y1 = relu(&n1);
        let (h2, _) = self.conv2.forward(&y1);
        let (n2, _) = self.bn2.forward(&h2, mode);
        let short = match &mut self.down {
            Some((dc, db)) => {
                let (s, _) = dc.forward(x);
                db.forward(&s, mode).0
            }
            None => x.clone(),
        };
        relu(&(&n2 + &short))
    }

    fn backward(&mut self, dy: &Array4<f32>, cache: &BasicBlockCache) -> Array4<f32> {
        let dsum = relu_backward(dy, &cache.out);
        // main branch
        let d2 = self.bn2.backward(&dsum, &cache.b2);
        let d2 = self.conv2.backward(&d2, &cache.c2);
        let d1 = relu_backward(&d2, &cache.y1);
        let d1 = self.bn1.backward(&d1, &cache.b1);
        let mut dx = self.conv1.backward(&d1, &cache.c1);
        // shortcut branch
        match (&mut self.down, &cache.down) {
            (Some((dc, db)), Some((sc, sb))) => {
                let ds = db.backward(&dsum, sb);
                let ds = dc.backward(&ds, sc);
                dx += &ds;
            }
            (None, None) => {
                dx += &dsum;
            }
            _ => unreachable!("cache/layer downsample mismatch"),
        }
        dx
    }
}

impl HasParams for BasicBlock {
    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.conv1.collect_params(out);
        self.bn1.collect_params(out);
        self.conv2.collect_params(out);
        self.bn2.collect_params(out);
        if let Some((dc, db)) = &self.down {
            dc.collect_params(out);
            db.collect_params(out);
        }
    }
    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.conv1.collect_params_mut(out);
        self.bn1.collect_params_mut(out);
        self.conv2.collect_params_mut(out);
        self.bn2.collect_params_mut(out);
        if let Some((dc, db)) = &mut self.down {
            dc.collect_params_mut(out);
            db.collect_params_mut(out);
        }
    }
    fn collect_buffers<'a>(&'a self, out: &mut Vec<&'a Buffer>) {
        self.bn1.collect_buffers(out);
        self.bn2.collect_buffers(out);
        if let Some((_, db)) = &self.down {
            db.collect_buffers(out);
        }
    }
    fn collect_buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Buffer>) {
        self.bn1.collect_buffers_mut(out);
        self.bn2.collect_buffers_mut(out);
        if let Some((_, db)) = &mut self.down {
            db.collect_buffers_mut(out);
        }
    }
}

/// ResNet-18 with a width multiplier. Below 64px input the stem is a 3x3
/// stride-1 convolution without max-pooling (the usual 32x32 adaptation);
/// otherwise a 7x7 stride-2 stem with 2x2 max-pooling.
#[derive(Debug, Clone)]
pub struct ResNet18 {
    stem: Conv2d,
    stem_bn: BatchNorm2d,
    small_input: bool,
    blocks: Vec<BasicBlock>,
    feature_dim: usize,
}

pub struct ResNet18Cache {
    sc: Conv2dCache,
    sb: BatchNorm2dCache,
    sy: Array4<f32>,
    spool: Option<MaxPool2Cache>,
    blocks: Vec<BasicBlockCache>,
    hw: (usize, usize),
}

impl ResNet18 {
    pub fn new(name: &str, width_multiplier: f64, small_input: bool, rng: &mut ChaCha12Rng) -> Self {
        let w = |c: usize| ((c as f64 * width_multiplier).round() as usize).max(4);
        let c0 = w(64);
        let (stem, stem_bn) = if small_input {
            (
                Conv2d::new(&format!("{name}.stem"), 3, c0, 3, 1, 1, rng),
                BatchNorm2d::new(&format!("{name}.stem_bn"), c0),
            )
        } else {
            (
                Conv2d::new(&format!("{name}.stem"), 3, c0, 7, 2, 3, rng),
                BatchNorm2d::new(&format!("{name}.stem_bn"), c0),
            )
        };
        let plan = [(w(64), 1), (w(128), 2), (w(256), 2), (w(512), 2)];
        let mut blocks = Vec::new();
        let mut c_in = c0;
        for (stage, &(c_out, stride)) in plan.iter().enumerate() {
            for b in 0..2 {
                let s = if b == 0 { stride } else { 1 };
                blocks.push(BasicBlock::new(
                    &format!("{name}.layer{}.{}", stage + 1, b),
                    c_in,
                    c_out,
                    s,
                    rng,
                ));
                c_in = c_out;
            }
        }
        ResNet18 {
            stem,
            stem_bn,
            small_input,
            blocks,
            feature_dim: c_in,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> (Array2<f32>, ResNet18Cache) {
        let (h, sc) = self.stem.forward(x);
        let (n, sb) = self.stem_bn.forward(&h, mode);
        let sy = relu(&n);
        let (mut cur, spool) = if self.small_input {
            (sy.clone(), None)
        } else {
            let (p, pc) = maxpool2(&sy);
            (p, Some(pc))
        };
        let mut caches = Vec::with_capacity(self.blocks.len());
        for blk in &mut self.blocks {
            let (nxt, cache) = blk.forward(&cur, mode);
            caches.push(cache);
            cur = nxt;
        }
        let (feat, hw) = global_avg_pool(&cur);
        (
            feat,
            ResNet18Cache {
                sc,
                sb: sb.expect("train-mode cache"),
                sy,
                spool,
                blocks: caches,
                hw,
            },
        )
    }

    pub fn forward_infer(&mut self, x: &Array4<f32>, mode: Mode) -> Array2<f32> {
        let (h, _) = self.stem.forward(x);
        let (n, _) = self.stem_bn.forward(&h, mode);
        let sy = relu(&n);
        let mut cur = if self.small_input { sy } else { maxpool2(&sy).0 };
        for blk in &mut self.blocks {
            cur = blk.forward_infer(&cur, mode);
        }
        global_avg_pool(&cur).0
    }

    pub fn backward(&mut self, dfeat: &Array2<f32>, cache: &ResNet18Cache) {
        let mut d = global_avg_pool_backward(dfeat, cache.hw);
        for (blk, bc) in self.blocks.iter_mut().zip(cache.blocks.iter()).rev() {
            d = blk.backward(&d, bc);
        }
        if let Some(pc) = &cache.spool {
            d = maxpool2_backward(&d, pc);
        }
        let d = relu_backward(&d, &cache.sy);
        let d = self.stem_bn.backward(&d, &cache.sb);
        let _ = self.stem.backward(&d, &cache.sc);
    }
}

impl HasParams for ResNet18 {
    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.stem.collect_params(out);
        self.stem_bn.collect_params(out);
        for b in &self.blocks {
            b.collect_params(out);
        }
    }
    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.stem.collect_params_mut(out);
        self.stem_bn.collect_params_mut(out);
        for b in &mut self.blocks {
            b.collect_params_mut(out);
        }
    }
    fn collect_buffers<'a>(&'a self, out: &mut Vec<&'a Buffer>) {
        self.stem_bn.collect_buffers(out);
        for b in &self.blocks {
            b.collect_buffers(out);
        }
    }
    fn collect_buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Buffer>) {
        self.stem_bn.collect_buffers_mut(out);
        for b in &mut self.blocks {
            b.collect_buffers_mut(out);
        }
    }
}

// ---------------------------------------------------------------------------
// Toy linear backbone (tests)
// ---------------------------------------------------------------------------

/// Flattens the input and applies one linear map. Exists so training-step
/// arithmetic can be verified by hand.
#[derive(Debug, Clone)]
pub struct ToyLinear {
    pub lin: Linear,
    in_dim: usize,
}

pub struct ToyLinearCache {
    lc: LinearCache,
    in_shape: (usize, usize, usize, usize),
}

impl ToyLinear {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha12Rng) -> Self {
        ToyLinear {
            lin: Linear::new(&format!("{name}.lin"), in_dim, out_dim, rng),
            in_dim,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.lin.out_f
    }

    pub fn forward(&mut self, x: &Array4<f32>, _mode: Mode) -> (Array2<f32>, ToyLinearCache) {
        let flat = flatten(x);
        assert_eq!(flat.ncols(), self.in_dim);
        let (y, lc) = self.lin.forward(&flat);
        (
            y,
            ToyLinearCache {
                lc,
                in_shape: x.dim(),
            },
        )
    }

    pub fn forward_infer(&mut self, x: &Array4<f32>, _mode: Mode) -> Array2<f32> {
        self.lin.forward(&flatten(x)).0
    }

    pub fn backward(&mut self, dfeat: &Array2<f32>, cache: &ToyLinearCache) {
        let dflat = self.lin.backward(dfeat, &cache.lc);
        let _ = unflatten(&dflat, cache.in_shape);
    }
}

impl HasParams for ToyLinear {
    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.lin.collect_params(out);
    }
    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.lin.collect_params_mut(out);
    }
    fn collect_buffers<'a>(&'a self, _out: &mut Vec<&'a Buffer>) {}
    fn collect_buffers_mut<'a>(&'a mut self, _out: &mut Vec<&'a mut Buffer>) {}
}

// ---------------------------------------------------------------------------
// Unified backbone
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum Backbone {
    Small(SmallCnn),
    Resnet18(ResNet18),
    Toy(ToyLinear),
}

pub enum BackboneCache {
    Small(SmallCnnCache),
    Resnet18(ResNet18Cache),
    Toy(ToyLinearCache),
}

impl Backbone {
    /// Construct by identifier. `small` takes its base width, `resnet18` a
    /// width multiplier, `toy` explicit in/out dims encoded by the caller.
    pub fn build(
        id: &str,
        width_multiplier: f64,
        input_resolution: usize,
        toy_dims: Option<(usize, usize)>,
        rng: &mut ChaCha12Rng,
    ) -> Result<Self> {
        match id {
            "small" => {
                let base = ((16.0 * width_multiplier).round() as usize).max(2);
                Ok(Backbone::Small(SmallCnn::new("backbone", base, rng)))
            }
            "resnet18" => Ok(Backbone::Resnet18(ResNet18::new(
                "backbone",
                width_multiplier,
                input_resolution < 64,
                rng,
            ))),
            "toy" => {
                let (i, o) = toy_dims.ok_or_else(|| {
                    Error::Config("toy backbone requires explicit dimensions".into())
                })?;
                Ok(Backbone::Toy(ToyLinear::new("backbone", i, o, rng)))
            }
            other => Err(Error::Config(format!("unknown backbone '{other}'"))),
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Backbone::Small(b) => b.feature_dim(),
            Backbone::Resnet18(b) => b.feature_dim(),
            Backbone::Toy(b) => b.feature_dim(),
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> (Array2<f32>, BackboneCache) {
        match self {
            Backbone::Small(b) => {
                let (y, c) = b.forward(x, mode);
                (y, BackboneCache::Small(c))
            }
            Backbone::Resnet18(b) => {
                let (y, c) = b.forward(x, mode);
                (y, BackboneCache::Resnet18(c))
            }
            Backbone::Toy(b) => {
                let (y, c) = b.forward(x, mode);
                (y, BackboneCache::Toy(c))
            }
        }
    }

    pub fn forward_infer(&mut self, x: &Array4<f32>, mode: Mode) -> Array2<f32> {
        match self {
            Backbone::Small(b) => b.forward_infer(x, mode),
            Backbone::Resnet18(b) => b.forward_infer(x, mode),
            Backbone::Toy(b) => b.forward_infer(x, mode),
        }
    }

    pub fn backward(&mut self, dfeat: &Array2<f32>, cache: &BackboneCache) {
        match (self, cache) {
            (Backbone::Small(b), BackboneCache::Small(c)) => b.backward(dfeat, c),
            (Backbone::Resnet18(b), BackboneCache::Resnet18(c)) => b.backward(dfeat, c),
            (Backbone::Toy(b), BackboneCache::Toy(c)) => b.backward(dfeat, c),
            _ => panic!("backbone/cache mismatch"),
        }
    }
}

impl HasParams for Backbone {
    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        match self {
            Backbone::Small(b) => b.collect_params(out),
            Backbone::Resnet18(b) => b.collect_params(out),
            Backbone::Toy(b) => b.collect_params(out),
        }
    }
    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        match self {
            Backbone::Small(b) => b.collect_params_mut(out),
            Backbone::Resnet18(b) => b.collect_params_mut(out),
            Backbone::Toy(b) => b.collect_params_mut(out),
        }
    }
    fn collect_buffers<'a>(&'a self, out: &mut Vec<&'a Buffer>) {
        match self {
            Backbone::Small(b) => b.collect_buffers(out),
            Backbone::Resnet18(b) => b.collect_buffers(out),
            Backbone::Toy(b) => b.collect_buffers(out),
        }
    }
    fn collect_buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Buffer>) {
        match self {
            Backbone::Small(b) => b.collect_buffers_mut(out),
            Backbone::Resnet18(b) => b.collect_buffers_mut(out),
            Backbone::Toy(b) => b.collect_buffers_mut(out),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;

    #[test]
    fn small_cnn_shapes_and_grads_flow() {
        let mut rng = seeding::rng_for(1, &[seeding::stream::INIT]);
        let mut net = SmallCnn::new("b", 8, &mut rng);
        let x = Array4::from_shape_fn((4, 3, 32, 32), |(b, c, i, j)| {
            ((b * 31 + c * 7 + i + 2 * j) as f32 * 0.02).sin()
        });
        let (feat, cache) = net.forward(&x, Mode::Train);
        assert_eq!(feat.dim(), (4, 32));
        let dfeat = Array2::from_elem((4, 32), 0.5);
        net.backward(&dfeat, &cache);
        let nonzero = net
            .params()
            .iter()
            .filter(|p| p.grad.iter().any(|&g| g != 0.0))
            .count();
        assert_eq!(nonzero, net.params().len());
    }

    #[test]
    fn resnet18_cifar_stem_shapes() {
        let mut rng = seeding::rng_for(2, &[seeding::stream::INIT]);
        let mut net = ResNet18::new("r", 0.125, true, &mut rng);
        assert_eq!(net.feature_dim(), 64);
        let x = Array4::<f32>::zeros((2, 3, 32, 32));
        let (feat, cache) = net.forward(&x, Mode::Train);
        assert_eq!(feat.dim(), (2, 64));
        let dfeat = Array2::<f32>::ones((2, 64));
        net.backward(&dfeat, &cache);
    }

    #[test]
    fn resnet18_large_stem_shapes() {
        let mut rng = seeding::rng_for(2, &[seeding::stream::INIT]);
        let mut net = ResNet18::new("r", 0.0625, false, &mut rng);
        let x = Array4::<f32>::zeros((1, 3, 64, 64));
        let feat = net.forward_infer(&x, Mode::TrainFrozenStats);
        assert_eq!(feat.dim(), (1, 32));
    }

    #[test]
    fn unknown_backbone_rejected() {
        let mut rng = seeding::rng_for(0, &[seeding::stream::INIT]);
        assert!(Backbone::build("resnet50", 1.0, 32, None, &mut rng).is_err());
    }

    #[test]
    fn same_seed_same_init() {
        let mut r1 = seeding::rng_for(9, &[seeding::stream::INIT]);
        let mut r2 = seeding::rng_for(9, &[seeding::stream::INIT]);
        let a = SmallCnn::new("b", 8, &mut r1);
        let b = SmallCnn::new("b", 8, &mut r2);
        assert_eq!(crate::nn::state_checksum(&a), crate::nn::state_checksum(&b));
    }
}
