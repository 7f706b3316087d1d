//! Self-supervised objectives: SimCLR (NT-Xent), MoCoV2+ (InfoNCE against
//! a key queue), BYOL (cosine prediction), and VICReg
//! (invariance/variance/covariance).
//!
//! Each loss returns its value together with analytic gradients with
//! respect to both embedding batches; the caller decides which side is
//! gradient-stopped. Loss math runs in f64 so gradient checks against
//! central finite differences hold tightly.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Error, Result};

/// The four supported SSL method families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SslKind {
    SimClr,
    #[serde(rename = "mocov2+")]
    MoCoV2Plus,
    Byol,
    VicReg,
}

impl SslKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "simclr" => Ok(SslKind::SimClr),
            "mocov2+" | "mocov2" | "moco" => Ok(SslKind::MoCoV2Plus),
            "byol" => Ok(SslKind::Byol),
            "vicreg" => Ok(SslKind::VicReg),
            other => Err(Error::Config(format!("unknown SSL kind '{other}'"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SslKind::SimClr => "simclr",
            SslKind::MoCoV2Plus => "mocov2+",
            SslKind::Byol => "byol",
            SslKind::VicReg => "vicreg",
        }
    }

    /// Whether the method keeps a separate momentum (EMA) target extractor.
    pub fn uses_momentum_encoder(&self) -> bool {
        matches!(self, SslKind::MoCoV2Plus | SslKind::Byol)
    }

    /// Whether the target branch is gradient-stopped. For SimCLR and
    /// VICReg both views train the extractor.
    pub fn detaches_target(&self) -> bool {
        matches!(self, SslKind::MoCoV2Plus | SslKind::Byol)
    }

    pub fn is_contrastive(&self) -> bool {
        matches!(self, SslKind::SimClr | SslKind::MoCoV2Plus)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct VicregWeights {
    pub invariance: f64,
    pub variance: f64,
    pub covariance: f64,
}

impl Default for VicregWeights {
    fn default() -> Self {
        VicregWeights {
            invariance: 25.0,
            variance: 25.0,
            covariance: 1.0,
        }
    }
}

/// FIFO queue of past target embeddings (MoCoV2+ negatives). Entries are
/// stored unit-normalized.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingQueue {
    capacity: usize,
    entries: VecDeque<Vec<f32>>,
}

impl EmbeddingQueue {
    pub fn new(capacity: usize) -> Self {
        EmbeddingQueue {
            capacity,
            entries: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push_batch(&mut self, keys: &Array2<f32>) {
        for row in keys.rows() {
            let norm = row.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            let inv = if norm > 0.0 { 1.0 / norm } else { 0.0 };
            self.entries
                .push_back(row.iter().map(|v| (*v as f64 * inv) as f32).collect());
            while self.entries.len() > self.capacity {
                self.entries.pop_front();
            }
        }
    }

    /// Oldest-to-newest contents as an [M, D] matrix.
    pub fn as_matrix(&self) -> Option<Array2<f64>> {
        if self.entries.is_empty() {
            return None;
        }
        let d = self.entries[0].len();
        let mut m = Array2::<f64>::zeros((self.entries.len(), d));
        for (i, e) in self.entries.iter().enumerate() {
            for (j, v) in e.iter().enumerate() {
                m[[i, j]] = *v as f64;
            }
        }
        Some(m)
    }
}

/// An SSL objective: method kind plus its hyperparameters and, for
/// MoCoV2+, the key queue.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SslObjective {
    pub kind: SslKind,
    pub temperature: f64,
    pub vicreg_weights: VicregWeights,
    pub momentum_coefficient: f64,
    pub symmetrize: bool,
    pub queue: Option<EmbeddingQueue>,
}

impl SslObjective {
    /// Method defaults as originally proposed: SimCLR temperature 0.5,
    /// MoCoV2+ temperature 0.2, BYOL EMA 0.996, MoCo EMA 0.999, VICReg
    /// weights (25, 25, 1).
    pub fn new(kind: SslKind) -> Self {
        let (temperature, momentum_coefficient) = match kind {
            SslKind::SimClr => (0.5, 0.0),
            SslKind::MoCoV2Plus => (0.2, 0.999),
            SslKind::Byol => (0.5, 0.996),
            SslKind::VicReg => (0.5, 0.0),
        };
        SslObjective {
            kind,
            temperature,
            vicreg_weights: VicregWeights::default(),
            momentum_coefficient,
            symmetrize: false,
            queue: match kind {
                SslKind::MoCoV2Plus => Some(EmbeddingQueue::new(4096)),
                _ => None,
            },
        }
    }

    pub fn with_temperature(mut self, t: f64) -> Result<Self> {
        if t <= 0.0 {
            return Err(Error::Config(format!("temperature must be > 0, got {t}")));
        }
        self.temperature = t;
        Ok(self)
    }

    pub fn with_queue_capacity(mut self, cap: usize) -> Self {
        if self.kind == SslKind::MoCoV2Plus {
            self.queue = Some(EmbeddingQueue::new(cap));
        }
        self
    }

    /// Append target keys to the MoCo queue (FIFO eviction).
    pub fn queue_update(&mut self, keys: &Array2<f32>) -> Result<()> {
        match &mut self.queue {
            Some(q) => {
                q.push_batch(keys);
                Ok(())
            }
            None => Err(Error::Contract(format!(
                "queue_update is only valid for mocov2+, not {}",
                self.kind.as_str()
            ))),
        }
    }

    /// Loss and gradients for aligned embedding batches (row i of each side
    /// comes from the same source sample).
    pub fn ssl_loss(&self, online: &Array2<f64>, target: &Array2<f64>) -> Result<SslLoss> {
        if online.dim() != target.dim() {
            return Err(Error::Shape(format!(
                "ssl_loss batch mismatch: online {:?} vs target {:?}",
                online.dim(),
                target.dim()
            )));
        }
        let n = online.nrows();
        let min_batch = match self.kind {
            SslKind::Byol => 1,
            _ => 2,
        };
        if n < min_batch {
            return Err(Error::Shape(format!(
                "{} needs a batch of at least {min_batch}, got {n}",
                self.kind.as_str()
            )));
        }
        if self.symmetrize {
            let a = self.loss_one_direction(online, target)?;
            let b = self.loss_one_direction(target, online)?;
            Ok(SslLoss {
                value: 0.5 * (a.value + b.value),
                grad_online: 0.5 * (&a.grad_online + &b.grad_target),
                grad_target: 0.5 * (&a.grad_target + &b.grad_online),
            })
        } else {
            self.loss_one_direction(online, target)
        }
    }

    fn loss_one_direction(&self, online: &Array2<f64>, target: &Array2<f64>) -> Result<SslLoss> {
        match self.kind {
            SslKind::SimClr => nt_xent(online, target, self.temperature),
            SslKind::MoCoV2Plus => {
                let queue = self.queue.as_ref().and_then(|q| q.as_matrix());
                info_nce(online, target, queue.as_ref(), self.temperature)
            }
            SslKind::Byol => byol_loss(online, target),
            SslKind::VicReg => vicreg_loss(online, target, &self.vicreg_weights),
        }
    }
}

pub struct SslLoss {
    pub value: f64,
    pub grad_online: Array2<f64>,
    pub grad_target: Array2<f64>,
}

// ---------------------------------------------------------------------------
// shared pieces
// ---------------------------------------------------------------------------

struct RowNorm {
    normalized: Array2<f64>,
    norms: Array1<f64>,
}

fn row_normalize(x: &Array2<f64>) -> RowNorm {
    let (n, d) = x.dim();
    let mut out = Array2::<f64>::zeros((n, d));
    let mut norms = Array1::<f64>::zeros(n);
    for i in 0..n {
        let norm = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        norms[i] = norm;
        for j in 0..d {
            out[[i, j]] = x[[i, j]] / norm;
        }
    }
    RowNorm {
        normalized: out,
        norms,
    }
}

/// Backward through row normalization: dx_i = (dy_i - (y_i . dy_i) y_i) / ||x_i||.
fn row_normalize_backward(rn: &RowNorm, dy: &Array2<f64>) -> Array2<f64> {
    let (n, d) = dy.dim();
    let mut dx = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        let y = rn.normalized.row(i);
        let g = dy.row(i);
        let dot: f64 = y.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        for j in 0..d {
            dx[[i, j]] = (g[j] - dot * y[j]) / rn.norms[i];
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// NT-Xent (SimCLR)
// ---------------------------------------------------------------------------

fn nt_xent(a: &Array2<f64>, b: &Array2<f64>, temperature: f64) -> Result<SslLoss> {
    let n = a.nrows();
    let m = 2 * n;
    let mut u = Array2::<f64>::zeros((m, a.ncols()));
    u.slice_mut(ndarray::s![..n, ..]).assign(a);
    u.slice_mut(ndarray::s![n.., ..]).assign(b);
    let rn = row_normalize(&u);
    let uh = &rn.normalized;
    let sim = uh.dot(&uh.t());

    let mut loss = 0.0f64;
    let mut dsim = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        let pos = (i + n) % m;
        // log-sum-exp over k != i
        let mut maxv = f64::NEG_INFINITY;
        for k in 0..m {
            if k != i {
                maxv = maxv.max(sim[[i, k]] / temperature);
            }
        }
        let mut z = 0.0f64;
        for k in 0..m {
            if k != i {
                z += ((sim[[i, k]] / temperature) - maxv).exp();
            }
        }
        let lse = maxv + z.ln();
        loss += lse - sim[[i, pos]] / temperature;
        for k in 0..m {
            if k == i {
                continue;
            }
            let q = ((sim[[i, k]] / temperature) - maxv).exp() / z;
            let indicator = if k == pos { 1.0 } else { 0.0 };
            dsim[[i, k]] += (q - indicator) / (temperature * m as f64);
        }
    }
    loss /= m as f64;

    // sim = Uh Uh^T with each (i,k) entry independent: dUh = (G + G^T) Uh.
    let g_sym = &dsim + &dsim.t();
    let duh = g_sym.dot(uh);
    let du = row_normalize_backward(&rn, &duh);
    Ok(SslLoss {
        value: loss,
        grad_online: du.slice(ndarray::s![..n, ..]).to_owned(),
        grad_target: du.slice(ndarray::s![n.., ..]).to_owned(),
    })
}

// ---------------------------------------------------------------------------
// InfoNCE with queue negatives (MoCoV2+)
// ---------------------------------------------------------------------------

fn info_nce(
    query: &Array2<f64>,
    key: &Array2<f64>,
    queue: Option<&Array2<f64>>,
    temperature: f64,
) -> Result<SslLoss> {
    if let Some(q) = queue {
        if q.ncols() != query.ncols() {
            return Err(Error::Shape(format!(
                "queue dimension {} does not match embeddings {}",
                q.ncols(),
                query.ncols()
            )));
        }
    }
    let n = query.nrows();
    let rq = row_normalize(query);
    let rk = row_normalize(key);
    let qh = &rq.normalized;
    let kh = &rk.normalized;

    let mut loss = 0.0f64;
    let mut dqh = Array2::<f64>::zeros(qh.dim());
    let mut dkh = Array2::<f64>::zeros(kh.dim());
    let m = queue.map_or(0, |q| q.nrows());
    for i in 0..n {
        let pos = qh.row(i).dot(&kh.row(i)) / temperature;
        let mut logits = Vec::with_capacity(m + 1);
        logits.push(pos);
        if let Some(qm) = queue {
            for r in 0..m {
                logits.push(qh.row(i).dot(&qm.row(r)) / temperature);
            }
        }
        let maxv = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - maxv).exp()).sum();
        loss += maxv + z.ln() - pos;
        let scale = 1.0 / (n as f64 * temperature);
        let p0 = (logits[0] - maxv).exp() / z;
        // positive logit gradient
        for j in 0..qh.ncols() {
            dqh[[i, j]] += (p0 - 1.0) * kh[[i, j]] * scale;
            dkh[[i, j]] += (p0 - 1.0) * qh[[i, j]] * scale;
        }
        if let Some(qm) = queue {
            for r in 0..m {
                let pr = (logits[r + 1] - maxv).exp() / z;
                for j in 0..qh.ncols() {
                    dqh[[i, j]] += pr * qm[[r, j]] * scale;
                }
            }
        }
    }
    loss /= n as f64;
    Ok(SslLoss {
        value: loss,
        grad_online: row_normalize_backward(&rq, &dqh),
        grad_target: row_normalize_backward(&rk, &dkh),
    })
}

// ---------------------------------------------------------------------------
// BYOL
// ---------------------------------------------------------------------------

fn byol_loss(p: &Array2<f64>, z: &Array2<f64>) -> Result<SslLoss> {
    let n = p.nrows();
    let rp = row_normalize(p);
    let rz = row_normalize(z);
    let mut loss = 0.0f64;
    let mut dph = Array2::<f64>::zeros(p.dim());
    let mut dzh = Array2::<f64>::zeros(z.dim());
    for i in 0..n {
        let cos: f64 = rp
            .normalized
            .row(i)
            .iter()
            .zip(rz.normalized.row(i).iter())
            .map(|(a, b)| a * b)
            .sum();
        loss += 2.0 - 2.0 * cos;
        let scale = -2.0 / n as f64;
        for j in 0..p.ncols() {
            dph[[i, j]] += scale * rz.normalized[[i, j]];
            dzh[[i, j]] += scale * rp.normalized[[i, j]];
        }
    }
    loss /= n as f64;
    Ok(SslLoss {
        value: loss,
        grad_online: row_normalize_backward(&rp, &dph),
        grad_target: row_normalize_backward(&rz, &dzh),
    })
}

// ---------------------------------------------------------------------------
// VICReg
// ---------------------------------------------------------------------------

const VICREG_EPS: f64 = 1e-4;
const VICREG_GAMMA: f64 = 1.0;

fn vicreg_variance(z: &Array2<f64>) -> (f64, Array2<f64>) {
    let (n, d) = z.dim();
    let mean = z.mean_axis(ndarray::Axis(0)).unwrap();
    let mut value = 0.0f64;
    let mut grad = Array2::<f64>::zeros((n, d));
    for j in 0..d {
        let mut var = 0.0f64;
        for i in 0..n {
            let c = z[[i, j]] - mean[j];
            var += c * c;
        }
        var /= (n - 1) as f64;
        let std = (var + VICREG_EPS).sqrt();
        if std < VICREG_GAMMA {
            value += VICREG_GAMMA - std;
            let coef = -1.0 / (d as f64 * (n - 1) as f64 * std);
            for i in 0..n {
                grad[[i, j]] = coef * (z[[i, j]] - mean[j]);
            }
        }
    }
    (value / d as f64, grad)
}

fn vicreg_covariance(z: &Array2<f64>) -> (f64, Array2<f64>) {
    let (n, d) = z.dim();
    let mean = z.mean_axis(ndarray::Axis(0)).unwrap();
    let mut zc = z.clone();
    for mut row in zc.rows_mut() {
        row -= &mean;
    }
    let cov = zc.t().dot(&zc) / (n - 1) as f64;
    let mut value = 0.0f64;
    let mut g = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            if i != j {
                value += cov[[i, j]] * cov[[i, j]];
                g[[i, j]] = 2.0 * cov[[i, j]] / d as f64;
            }
        }
    }
    value /= d as f64;
    // dZc = Zc (G + G^T) / (n-1); centering backward subtracts column means.
    let gsym = &g + &g.t();
    let mut dzc = zc.dot(&gsym) / (n - 1) as f64;
    let col_mean = dzc.mean_axis(ndarray::Axis(0)).unwrap();
    for mut row in dzc.rows_mut() {
        row -= &col_mean;
    }
    (value, dzc)
}

fn vicreg_loss(a: &Array2<f64>, b: &Array2<f64>, w: &VicregWeights) -> Result<SslLoss> {
    let (n, d) = a.dim();
    // invariance: mean over batch of squared euclidean distance
    let mut inv = 0.0f64;
    let mut dinv_a = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        for j in 0..d {
            let diff = a[[i, j]] - b[[i, j]];
            inv += diff * diff;
            dinv_a[[i, j]] = 2.0 * diff / n as f64;
        }
    }
    inv /= n as f64;
    let dinv_b = -&dinv_a;

    let (var_a, dvar_a) = vicreg_variance(a);
    let (var_b, dvar_b) = vicreg_variance(b);
    let (cov_a, dcov_a) = vicreg_covariance(a);
    let (cov_b, dcov_b) = vicreg_covariance(b);

    let value = w.invariance * inv + w.variance * (var_a + var_b) + w.covariance * (cov_a + cov_b);
    let grad_online = w.invariance * &dinv_a + w.variance * &dvar_a + w.covariance * &dcov_a;
    let grad_target = w.invariance * &dinv_b + w.variance * &dvar_b + w.covariance * &dcov_b;
    Ok(SslLoss {
        value,
        grad_online,
        grad_target,
    })
}
