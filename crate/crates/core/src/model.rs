//! The model zoo: current and momentum feature extractors, the two
//! predictors, the classifier, and the frozen previous-task snapshot.
//!
//! A "feature extractor" is a backbone plus its projector MLP; SSL losses
//! operate on projected embeddings while the classifier reads the
//! backbone representation (gradient-stopped). The previous-task snapshot
//! (`prev_f`, `prev_g`) exists from task 2 onward and never changes while
//! a task trains.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::backbone::{Backbone, BackboneCache};
use crate::nn::heads::{Mlp, MlpCache};
use crate::nn::layers::Mode;
use crate::nn::serialize::NamedTensor;
use crate::nn::{self, HasParams};
use crate::seeding::{self, stream};
use crate::ssl::SslKind;

/// Network sizing. The classifier is exactly two affine layers (hidden
/// width `classifier_hidden`, defaulting to 1000) with a ReLU between.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ArchitectureSpec {
    /// `resnet18`, `small`, or `toy`.
    pub backbone: String,
    pub width_multiplier: f64,
    pub classifier_hidden: usize,
    pub num_outputs: usize,
    pub projector_hidden: usize,
    pub projector_dim: usize,
    pub predictor_hidden: usize,
    pub input_resolution: usize,
    /// Batch norm inside projector/predictor heads (never the classifier).
    pub head_batchnorm: bool,
    /// Input dimension for the `toy` backbone (flattened).
    pub toy_input_dim: usize,
    /// Feature dimension for the `toy` backbone.
    pub toy_feature_dim: usize,
}

impl Default for ArchitectureSpec {
    fn default() -> Self {
        ArchitectureSpec {
            backbone: "resnet18".into(),
            width_multiplier: 1.0,
            classifier_hidden: 1000,
            num_outputs: 100,
            projector_hidden: 2048,
            projector_dim: 256,
            predictor_hidden: 512,
            input_resolution: 32,
            head_batchnorm: true,
            toy_input_dim: 1,
            toy_feature_dim: 2,
        }
    }
}

/// Backbone plus projector; the unit that gets snapshotted, EMA-tracked,
/// and distilled.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    pub backbone: Backbone,
    pub projector: Mlp,
}

pub struct FeCache {
    pub backbone: BackboneCache,
    pub projector: MlpCache,
}

impl FeatureExtractor {
    /// Returns (representation, projected embedding, cache).
    pub fn forward(
        &mut self,
        x: &ndarray::Array4<f32>,
        mode: Mode,
    ) -> (Array2<f32>, Array2<f32>, FeCache) {
        let (repr, bb) = self.backbone.forward(x, mode);
        let (proj, pc) = self.projector.forward(&repr, mode);
        (
            repr,
            proj,
            FeCache {
                backbone: bb,
                projector: pc,
            },
        )
    }

    /// Returns (representation, projected embedding); keeps no caches.
    pub fn forward_infer(&mut self, x: &ndarray::Array4<f32>, mode: Mode) -> (Array2<f32>, Array2<f32>) {
        let repr = self.backbone.forward_infer(x, mode);
        let proj = self.projector.forward_infer(&repr, mode);
        (repr, proj)
    }

    /// Backward from a projected-embedding gradient. The classifier path
    /// is gradient-stopped, so the backbone only ever receives gradient
    /// through the projector.
    pub fn backward(&mut self, d_proj: &Array2<f32>, cache: &FeCache) {
        let d_repr = self.projector.backward(d_proj, &cache.projector);
        self.backbone.backward(&d_repr, &cache.backbone);
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.feature_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.projector.out_dim()
    }
}

impl HasParams for FeatureExtractor {
    fn collect_params<'a>(&'a self, out: &mut Vec<&'a nn::Param>) {
        self.backbone.collect_params(out);
        self.projector.collect_params(out);
    }
    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut nn::Param>) {
        self.backbone.collect_params_mut(out);
        self.projector.collect_params_mut(out);
    }
    fn collect_buffers<'a>(&'a self, out: &mut Vec<&'a nn::Buffer>) {
        self.backbone.collect_buffers(out);
        self.projector.collect_buffers(out);
    }
    fn collect_buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut nn::Buffer>) {
        self.backbone.collect_buffers_mut(out);
        self.projector.collect_buffers_mut(out);
    }
}

/// All networks of one continual run.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub arch: ArchitectureSpec,
    pub ssl_kind: SslKind,
    /// Current feature extractor (trained by gradient).
    pub f_current: FeatureExtractor,
    /// Momentum feature extractor (EMA target; momentum-based kinds only).
    pub f_momentum: Option<FeatureExtractor>,
    /// Predictor used for feature-extractor distillation.
    pub h_kd: Mlp,
    /// Predictor used for current-task SSL.
    pub h_ssl: Mlp,
    /// Classifier over backbone representations (single all-class head).
    pub classifier: Mlp,
    /// Frozen previous-task feature extractor (task 2 onward).
    pub prev_f: Option<FeatureExtractor>,
    /// Frozen previous-task classifier (task 2 onward).
    pub prev_g: Option<Mlp>,
    /// 1-based index of the task currently being learned.
    pub task_index: usize,
}

/// Build a fresh model for task 1. Momentum-based SSL kinds start with
/// the momentum extractor as an exact parameter copy of the current one.
pub fn init_model(arch: &ArchitectureSpec, ssl_kind: SslKind, seed: u64) -> Result<ModelState> {
    if arch.num_outputs == 0 {
        return Err(Error::Config("num_outputs must be positive".into()));
    }
    let toy_dims = (arch.backbone == "toy").then_some((arch.toy_input_dim, arch.toy_feature_dim));
    let mut rng_bb = seeding::rng_for(seed, &[stream::INIT, 0]);
    let backbone = Backbone::build(
        &arch.backbone,
        arch.width_multiplier,
        arch.input_resolution,
        toy_dims,
        &mut rng_bb,
    )?;
    let feat_dim = backbone.feature_dim();
    let mut rng_proj = seeding::rng_for(seed, &[stream::INIT, 1]);
    let projector = Mlp::new(
        "projector",
        feat_dim,
        arch.projector_hidden,
        arch.projector_dim,
        arch.head_batchnorm,
        &mut rng_proj,
    );
    let f_current = FeatureExtractor {
        backbone,
        projector,
    };
    let f_momentum = ssl_kind.uses_momentum_encoder().then(|| f_current.clone());
    let mut rng_hkd = seeding::rng_for(seed, &[stream::INIT, 2]);
    let h_kd = Mlp::new(
        "h_kd",
        arch.projector_dim,
        arch.predictor_hidden,
        arch.projector_dim,
        arch.head_batchnorm,
        &mut rng_hkd,
    );
    let mut rng_hssl = seeding::rng_for(seed, &[stream::INIT, 3]);
    let h_ssl = Mlp::new(
        "h_ssl",
        arch.projector_dim,
        arch.predictor_hidden,
        arch.projector_dim,
        arch.head_batchnorm,
        &mut rng_hssl,
    );
    let mut rng_cls = seeding::rng_for(seed, &[stream::INIT, 4]);
    let classifier = Mlp::new(
        "classifier",
        feat_dim,
        arch.classifier_hidden,
        arch.num_outputs,
        false,
        &mut rng_cls,
    );
    Ok(ModelState {
        arch: arch.clone(),
        ssl_kind,
        f_current,
        f_momentum,
        h_kd,
        h_ssl,
        classifier,
        prev_f: None,
        prev_g: None,
        task_index: 1,
    })
}

/// Outputs of every forward path, gradient-free. Previous-task paths are
/// present only from task 2 onward.
pub struct ForwardPaths {
    /// Backbone representation of view 1 under the current extractor.
    pub r_o: Array2<f32>,
    /// Projected embedding of view 1 under the current extractor.
    pub z_o: Array2<f32>,
    /// Target-extractor embedding of view 2 (momentum where present).
    pub z_t: Array2<f32>,
    /// Previous-extractor embedding of view 1.
    pub z_p: Option<Array2<f32>>,
    /// Distillation predictor on z_o.
    pub p_kd: Array2<f32>,
    /// SSL predictor on z_o.
    pub p_ssl: Array2<f32>,
    /// Classifier logits on the (gradient-stopped) representation.
    pub c_t: Array2<f32>,
    /// Previous classifier logits on the previous representation.
    pub c_p: Option<Array2<f32>>,
}

impl ModelState {
    pub fn ema_update(&mut self, momentum: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "EMA momentum must be in [0, 1], got {momentum}"
            )));
        }
        let current = self.f_current.clone();
        match &mut self.f_momentum {
            Some(m) => {
                nn::ema_assign(m, &current, momentum as f32);
                Ok(())
            }
            None => Err(Error::Contract(
                "ema_update called without a momentum extractor".into(),
            )),
        }
    }

    /// Freeze the just-trained extractor and classifier as the previous
    /// snapshot and advance the task counter. Predictors, classifier and
    /// momentum extractor persist (no reinitialization).
    pub fn snapshot_previous(&mut self) {
        self.prev_f = Some(self.f_current.clone());
        self.prev_g = Some(self.classifier.clone());
        self.task_index += 1;
    }

    /// Gradient-free forward through every path of the architecture.
    /// Batch-stat modes are frozen so this is a pure function of inputs.
    pub fn forward_paths(
        &mut self,
        x1: &ndarray::Array4<f32>,
        x2: &ndarray::Array4<f32>,
    ) -> Result<ForwardPaths> {
        if x1.dim() != x2.dim() {
            return Err(Error::Shape(format!(
                "view shapes differ: {:?} vs {:?}",
                x1.dim(),
                x2.dim()
            )));
        }
        let mode = Mode::TrainFrozenStats;
        let (r_o, z_o) = self.f_current.forward_infer(x1, mode);
        let z_t = match &mut self.f_momentum {
            Some(m) => m.forward_infer(x2, mode).1,
            None => self.f_current.forward_infer(x2, mode).1,
        };
        let (z_p, c_p) = match (&mut self.prev_f, &mut self.prev_g) {
            (Some(pf), Some(pg)) => {
                let (r_p, z_p) = pf.forward_infer(x1, mode);
                let c_p = pg.forward_infer(&r_p, mode);
                (Some(z_p), Some(c_p))
            }
            _ => (None, None),
        };
        let p_kd = self.h_kd.forward_infer(&z_o, mode);
        let p_ssl = self.h_ssl.forward_infer(&z_o, mode);
        let c_t = self.classifier.forward_infer(&r_o, mode);
        Ok(ForwardPaths {
            r_o,
            z_o,
            z_t,
            z_p,
            p_kd,
            p_ssl,
            c_t,
            c_p,
        })
    }

    pub fn current_checksum(&self) -> String {
        nn::state_checksum(&self.f_current)
    }

    pub fn prev_checksums(&self) -> Option<(String, String)> {
        match (&self.prev_f, &self.prev_g) {
            (Some(f), Some(g)) => Some((nn::state_checksum(f), nn::state_checksum(g))),
            _ => None,
        }
    }

    /// All tensors under stable, component-prefixed names.
    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        let mut push = |prefix: &str, comp: &dyn HasParams| {
            for p in comp.params() {
                out.push(NamedTensor {
                    name: format!("{prefix}/{}", p.name),
                    data: p.value.clone(),
                });
            }
            for b in comp.buffers() {
                out.push(NamedTensor {
                    name: format!("{prefix}/buf/{}", b.name),
                    data: b.value.clone(),
                });
            }
        };
        push("f_current", &self.f_current);
        if let Some(m) = &self.f_momentum {
            push("f_momentum", m);
        }
        push("h_kd", &self.h_kd);
        push("h_ssl", &self.h_ssl);
        push("classifier", &self.classifier);
        if let Some(p) = &self.prev_f {
            push("prev_f", p);
        }
        if let Some(g) = &self.prev_g {
            push("prev_g", g);
        }
        out
    }

    /// Restore tensors written by [`ModelState::named_tensors`]. The
    /// receiving model must have the same architecture; `prev_*` and
    /// `f_momentum` groups are instantiated if present in the data.
    pub fn restore_tensors(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        let has = |prefix: &str| tensors.iter().any(|t| t.name.starts_with(prefix));
        if has("prev_f/") && self.prev_f.is_none() {
            self.prev_f = Some(self.f_current.clone());
            self.prev_g = Some(self.classifier.clone());
        }
        if has("f_momentum/") && self.f_momentum.is_none() {
            self.f_momentum = Some(self.f_current.clone());
        }
        let restore = |prefix: &str, comp: &mut dyn HasParams| -> Result<()> {
            for p in comp.params_mut() {
                let name = format!("{prefix}/{}", p.name);
                let t = tensors
                    .iter()
                    .find(|t| t.name == name)
                    .ok_or_else(|| Error::Serialize(format!("checkpoint missing tensor {name}")))?;
                if t.data.shape() != p.value.shape() {
                    return Err(Error::Serialize(format!("tensor {name} shape mismatch")));
                }
                p.value.assign(&t.data);
            }
            for b in comp.buffers_mut() {
                let name = format!("{prefix}/buf/{}", b.name);
                let t = tensors
                    .iter()
                    .find(|t| t.name == name)
                    .ok_or_else(|| Error::Serialize(format!("checkpoint missing tensor {name}")))?;
                b.value.assign(&t.data);
            }
            Ok(())
        };
        restore("f_current", &mut self.f_current)?;
        if let Some(m) = &mut self.f_momentum {
            restore("f_momentum", m)?;
        }
        restore("h_kd", &mut self.h_kd)?;
        restore("h_ssl", &mut self.h_ssl)?;
        restore("classifier", &mut self.classifier)?;
        if let Some(p) = &mut self.prev_f {
            restore("prev_f", p)?;
        }
        if let Some(g) = &mut self.prev_g {
            restore("prev_g", g)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::Array4;

    fn small_arch() -> ArchitectureSpec {
        ArchitectureSpec {
            backbone: "small".into(),
            width_multiplier: 0.25, // base width 4
            classifier_hidden: 16,
            num_outputs: 10,
            projector_hidden: 16,
            projector_dim: 8,
            predictor_hidden: 8,
            input_resolution: 16,
            head_batchnorm: true,
            ..Default::default()
        }
    }

    #[test]
    fn byol_momentum_initialized_as_copy() {
        let m = init_model(&small_arch(), SslKind::Byol, 3).unwrap();
        let a = nn::state_checksum(&m.f_current);
        let b = nn::state_checksum(m.f_momentum.as_ref().unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn simclr_has_no_momentum_extractor() {
        let m = init_model(&small_arch(), SslKind::SimClr, 3).unwrap();
        assert!(m.f_momentum.is_none());
        let m2 = init_model(&small_arch(), SslKind::VicReg, 3).unwrap();
        assert!(m2.f_momentum.is_none());
        let m3 = init_model(&small_arch(), SslKind::MoCoV2Plus, 3).unwrap();
        assert!(m3.f_momentum.is_some());
    }

    #[test]
    fn same_seed_bitwise_identical() {
        let a = init_model(&small_arch(), SslKind::Byol, 9).unwrap();
        let b = init_model(&small_arch(), SslKind::Byol, 9).unwrap();
        assert_eq!(a.current_checksum(), b.current_checksum());
        assert_eq!(
            nn::state_checksum(&a.classifier),
            nn::state_checksum(&b.classifier)
        );
        let c = init_model(&small_arch(), SslKind::Byol, 10).unwrap();
        assert_ne!(a.current_checksum(), c.current_checksum());
    }

    #[test]
    fn unknown_backbone_rejected() {
        let mut arch = small_arch();
        arch.backbone = "vit".into();
        assert!(init_model(&arch, SslKind::SimClr, 0).is_err());
    }

    #[test]
    fn ema_fixed_point_and_full_copy() {
        let mut m = init_model(&small_arch(), SslKind::Byol, 3).unwrap();
        let before = nn::state_checksum(m.f_momentum.as_ref().unwrap());
        // drift the current net
        for p in m.f_current.params_mut() {
            p.value.mapv_inplace(|v| v + 0.25);
        }
        m.ema_update(1.0).unwrap();
        assert_eq!(
            nn::state_checksum(m.f_momentum.as_ref().unwrap()),
            before,
            "momentum 1.0 must be a fixed point"
        );
        m.ema_update(0.0).unwrap();
        assert_eq!(
            nn::state_checksum(m.f_momentum.as_ref().unwrap()),
            nn::state_checksum(&m.f_current)
        );
    }

    /// Direct evaluation of the convex combination on one weight:
    /// 0.99 * 2 + 0.01 * 4 = 2.02.
    #[test]
    fn ema_scalar_example() {
        let mut arch = small_arch();
        arch.backbone = "toy".into();
        arch.toy_input_dim = 1;
        arch.toy_feature_dim = 1;
        arch.head_batchnorm = false;
        let mut m = init_model(&arch, SslKind::Byol, 0).unwrap();
        if let Backbone::Toy(t) = &mut m.f_current.backbone {
            t.lin.w.value.fill(4.0);
        }
        if let Backbone::Toy(t) = &mut m.f_momentum.as_mut().unwrap().backbone {
            t.lin.w.value.fill(2.0);
        }
        m.ema_update(0.99).unwrap();
        if let Backbone::Toy(t) = &m.f_momentum.as_ref().unwrap().backbone {
            assert_relative_eq!(t.lin.w.value[[0, 0]], 2.02, epsilon = 1e-6);
        } else {
            panic!("toy backbone expected");
        }
    }

    /// k EMA steps with a frozen current net equal the closed form
    /// m^k * theta_m + (1 - m^k) * theta_c.
    #[test]
    fn ema_telescoping_closed_form() {
        let mut arch = small_arch();
        arch.backbone = "toy".into();
        arch.toy_input_dim = 1;
        arch.toy_feature_dim = 1;
        arch.head_batchnorm = false;
        let mut m = init_model(&arch, SslKind::Byol, 0).unwrap();
        let (theta_m, theta_c, mom, k) = (2.0f32, 4.0f32, 0.9f64, 7);
        if let Backbone::Toy(t) = &mut m.f_current.backbone {
            t.lin.w.value.fill(theta_c);
        }
        if let Backbone::Toy(t) = &mut m.f_momentum.as_mut().unwrap().backbone {
            t.lin.w.value.fill(theta_m);
        }
        for _ in 0..k {
            m.ema_update(mom).unwrap();
        }
        let mk = (mom as f32).powi(k);
        let expected = theta_m * mk + theta_c * (1.0 - mk);
        if let Backbone::Toy(t) = &m.f_momentum.as_ref().unwrap().backbone {
            assert_relative_eq!(t.lin.w.value[[0, 0]], expected, epsilon = 1e-6);
        }
    }

    #[test]
    fn ema_rejects_out_of_range() {
        let mut m = init_model(&small_arch(), SslKind::Byol, 3).unwrap();
        assert!(m.ema_update(1.5).is_err());
        assert!(m.ema_update(-0.1).is_err());
    }

    #[test]
    fn snapshot_is_deep_copy() {
        let mut m = init_model(&small_arch(), SslKind::SimClr, 3).unwrap();
        m.snapshot_previous();
        assert_eq!(m.task_index, 2);
        let (pf, pg) = m.prev_checksums().unwrap();
        assert_eq!(pf, m.current_checksum());
        assert_eq!(pg, nn::state_checksum(&m.classifier));
        // perturb the live nets; the snapshot must not move
        for p in m.f_current.params_mut() {
            p.value.mapv_inplace(|v| v * 1.5 + 0.1);
        }
        for p in m.classifier.params_mut() {
            p.value.mapv_inplace(|v| v - 0.3);
        }
        let (pf2, pg2) = m.prev_checksums().unwrap();
        assert_eq!(pf, pf2);
        assert_eq!(pg, pg2);
        assert_ne!(pf2, m.current_checksum());
    }

    #[test]
    fn forward_paths_task1_has_no_prev_outputs() {
        let mut m = init_model(&small_arch(), SslKind::SimClr, 3).unwrap();
        let x = Array4::from_elem((3, 3, 16, 16), 0.4f32);
        let paths = m.forward_paths(&x, &x).unwrap();
        assert!(paths.z_p.is_none());
        assert!(paths.c_p.is_none());
        assert_eq!(paths.c_t.dim(), (3, 10));
        assert_eq!(paths.z_o.dim(), (3, 8));
        assert_eq!(paths.p_kd.dim(), (3, 8));
        assert_eq!(paths.p_ssl.dim(), (3, 8));
    }

    #[test]
    fn prev_equal_to_current_gives_equal_embeddings() {
        let mut m = init_model(&small_arch(), SslKind::SimClr, 3).unwrap();
        m.snapshot_previous(); // prev_f == f_current bitwise
        let x1 = Array4::from_shape_fn((2, 3, 16, 16), |(b, c, i, j)| {
            ((b + c + i + j) as f32 * 0.11).sin() * 0.5 + 0.5
        });
        let x2 = x1.mapv(|v| (v + 0.05).min(1.0));
        let paths = m.forward_paths(&x1, &x2).unwrap();
        let z_p = paths.z_p.unwrap();
        for (a, b) in paths.z_o.iter().zip(z_p.iter()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-6);
        }
    }

    #[test]
    fn momentum_kind_uses_momentum_for_target() {
        let mut m = init_model(&small_arch(), SslKind::Byol, 3).unwrap();
        // push momentum away from current
        for p in m.f_momentum.as_mut().unwrap().params_mut() {
            p.value.mapv_inplace(|v| v + 1.0);
        }
        let x = Array4::from_elem((2, 3, 16, 16), 0.3f32);
        let paths = m.forward_paths(&x, &x).unwrap();
        let diff: f32 = paths
            .z_o
            .iter()
            .zip(paths.z_t.iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-3, "momentum target should differ from online");
    }

    #[test]
    fn named_tensor_roundtrip_restores_state() {
        let mut m = init_model(&small_arch(), SslKind::Byol, 3).unwrap();
        m.snapshot_previous();
        for p in m.f_current.params_mut() {
            p.value.mapv_inplace(|v| v + 0.5);
        }
        let tensors = m.named_tensors();
        let mut fresh = init_model(&small_arch(), SslKind::Byol, 99).unwrap();
        fresh.restore_tensors(&tensors).unwrap();
        assert_eq!(fresh.current_checksum(), m.current_checksum());
        assert_eq!(fresh.prev_checksums().unwrap(), m.prev_checksums().unwrap());
        assert_eq!(
            nn::state_checksum(&fresh.classifier),
            nn::state_checksum(&m.classifier)
        );
    }
}
