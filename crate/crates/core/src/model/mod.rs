//! The attribute-to-visual embedding network.
//!
//! Class attributes pass through the self-gating block
//! `ReLU(Φa(A)) ⊙ σ(Φs(A)) + ReLU(Φb(A))`, a scaled normalization, a square
//! projection and a second scaled normalization. The result lives in the
//! visual feature space, where samples are scored against every candidate
//! class by scaled cosine similarity.
//!
//! Parameters are flattened in a fixed order for the meta-learner and the
//! checkpoint format:
//!
//! ```text
//! phi_a.W phi_a.b  phi_s.W phi_s.b  phi_b.W phi_b.b  scn1.α scn1.β
//! proj.W proj.b  scn2.α scn2.β  [out.W out.b]
//! ```
//!
//! `out` (hidden → feature width) only exists when the hidden width differs
//! from the feature dimension. Ablated parts stay in the layout; they simply
//! receive zero gradient.

mod checkpoint;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    affine_backward, affine_forward, cosine_backward, cosine_logits, relu_backward, relu_forward,
    scn_backward, scn_forward, sigmoid_backward, sigmoid_forward, softmax_xent, AffineCache,
    AffineParams, CosineCache, ReluCache, ScnCache, ScnParams, SigmoidCache, DEFAULT_LOGIT_SCALE,
};
use crate::numerics::{Dense2D, Real, Rng};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

/// Which normalization follows the gating block and the projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// No normalization at all.
    None,
    /// Plain class/layer normalization: `α = β = 1`, not trained.
    PlainCn,
    /// Scaled normalization with learned `α`, `β`.
    Scn,
}

impl Normalization {
    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::None => "none",
            Normalization::PlainCn => "plain_cn",
            Normalization::Scn => "scn",
        }
    }
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Normalization::None),
            "plain_cn" | "cn" => Ok(Normalization::PlainCn),
            "scn" => Ok(Normalization::Scn),
            other => Err(Error::invalid(format!("unknown normalization `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden width of every layer. `None` uses the feature dimension, which
    /// is 2048 for the standard ResNet-101 features.
    pub hidden_width: Option<usize>,
    pub logit_scale: f64,
    pub self_gating: bool,
    pub normalization: Normalization,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_width: None,
            logit_scale: DEFAULT_LOGIT_SCALE,
            self_gating: true,
            normalization: Normalization::Scn,
        }
    }
}

/// Shape-level description of a network instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Architecture {
    pub attr_dim: usize,
    pub feat_dim: usize,
    pub hidden: usize,
    pub self_gating: bool,
    pub normalization: Normalization,
    pub logit_scale: f64,
}

impl Architecture {
    pub fn new(cfg: &ModelConfig, attr_dim: usize, feat_dim: usize) -> Result<Self> {
        if attr_dim == 0 || feat_dim == 0 {
            return Err(Error::invalid("attribute and feature dimensions must be positive"));
        }
        let hidden = cfg.hidden_width.unwrap_or(feat_dim);
        if hidden == 0 {
            return Err(Error::invalid("hidden width must be positive"));
        }
        if !cfg.logit_scale.is_finite() {
            return Err(Error::NonFinite("logit_scale"));
        }
        Ok(Self {
            attr_dim,
            feat_dim,
            hidden,
            self_gating: cfg.self_gating,
            normalization: cfg.normalization,
            logit_scale: cfg.logit_scale,
        })
    }

    pub fn has_output_projection(&self) -> bool {
        self.hidden != self.feat_dim
    }

    /// Shapes of every tensor in flatten order; biases and scalars are `1 × n`.
    pub fn shape_table(&self) -> Vec<(usize, usize)> {
        let (z, h, d) = (self.attr_dim, self.hidden, self.feat_dim);
        let mut shapes = vec![(z, h), (1, h), (z, h), (1, h), (z, h), (1, h), (1, 2), (h, h), (1, h), (1, 2)];
        if self.has_output_projection() {
            shapes.extend([(h, d), (1, d)]);
        }
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.shape_table().iter().map(|(r, c)| r * c).sum()
    }

    /// Parameters that actually influence the output under the ablation flags.
    pub fn active_param_count(&self) -> usize {
        let (z, h) = (self.attr_dim, self.hidden);
        let mut n = self.param_count();
        if !self.self_gating {
            n -= 2 * (z * h + h);
        }
        if self.normalization != Normalization::Scn {
            n -= 4;
        }
        n
    }
}

/// All trainable tensors of the network, each with its gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Real = f32> {
    pub arch: Architecture,
    pub phi_a: AffineParams<T>,
    pub phi_s: AffineParams<T>,
    pub phi_b: AffineParams<T>,
    pub scn1: ScnParams<T>,
    pub proj: AffineParams<T>,
    pub scn2: ScnParams<T>,
    pub out: Option<AffineParams<T>>,
    pub logit_scale: T,
}

fn xavier<T: Real>(fan_in: usize, fan_out: usize, rng: &mut Rng) -> AffineParams<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| T::lit(rng.uniform_in(-limit, limit)))
        .collect();
    let weight = Dense2D::new(fan_in, fan_out, data).expect("uniform draws are finite");
    AffineParams::new(weight, vec![T::zero(); fan_out]).expect("bias matches width")
}

/// Xavier-uniform weights, zero biases, `α = β = 1`.
pub fn init_params<T: Real>(cfg: &ModelConfig, attr_dim: usize, feat_dim: usize, rng: &mut Rng) -> Result<ModelParams<T>> {
    let arch = Architecture::new(cfg, attr_dim, feat_dim)?;
    let (z, h, d) = (attr_dim, arch.hidden, feat_dim);
    let phi_a = xavier(z, h, rng);
    let phi_s = xavier(z, h, rng);
    let phi_b = xavier(z, h, rng);
    let proj = xavier(h, h, rng);
    let out = arch.has_output_projection().then(|| xavier(h, d, rng));
    Ok(ModelParams {
        arch,
        phi_a,
        phi_s,
        phi_b,
        scn1: ScnParams::identity(),
        proj,
        scn2: ScnParams::identity(),
        out,
        logit_scale: T::lit(cfg.logit_scale),
    })
}

/// Saved activations of one [`ModelParams::self_gate`] call.
#[derive(Clone, Debug)]
pub struct GateCache<T: Real> {
    a_aff: AffineCache<T>,
    a_relu: ReluCache<T>,
    a_out: Dense2D<T>,
    gating: Option<GatingCache<T>>,
}

#[derive(Clone, Debug)]
struct GatingCache<T: Real> {
    s_aff: AffineCache<T>,
    s_sig: SigmoidCache<T>,
    s_out: Dense2D<T>,
    b_aff: AffineCache<T>,
    b_relu: ReluCache<T>,
}

#[derive(Clone, Debug)]
pub struct EmbedCache<T: Real> {
    gate: GateCache<T>,
    norm1: Option<ScnCache<T>>,
    proj: AffineCache<T>,
    norm2: Option<ScnCache<T>>,
    out: Option<AffineCache<T>>,
}

#[derive(Clone, Debug)]
pub struct ForwardCache<T: Real> {
    embed: EmbedCache<T>,
    cosine: CosineCache<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    pub fn zero_grad(&mut self) {
        self.phi_a.zero_grad();
        self.phi_s.zero_grad();
        self.phi_b.zero_grad();
        self.proj.zero_grad();
        if let Some(out) = self.out.as_mut() {
            out.zero_grad();
        }
        self.scn1.zero_grad();
        self.scn2.zero_grad();
    }

    fn visit<'a>(&'a self, mut f: impl FnMut(&'a [T])) {
        let emit_affine = |p: &'a AffineParams<T>, f: &mut dyn FnMut(&'a [T])| {
            f(p.weight.data());
            f(&p.bias);
        };
        emit_affine(&self.phi_a, &mut f);
        emit_affine(&self.phi_s, &mut f);
        emit_affine(&self.phi_b, &mut f);
        f(std::slice::from_ref(&self.scn1.alpha));
        f(std::slice::from_ref(&self.scn1.beta));
        emit_affine(&self.proj, &mut f);
        f(std::slice::from_ref(&self.scn2.alpha));
        f(std::slice::from_ref(&self.scn2.beta));
        if let Some(out) = &self.out {
            emit_affine(out, &mut f);
        }
    }

    /// All parameters in flatten order.
    pub fn flatten(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.param_count());
        self.visit(|s| v.extend_from_slice(s));
        v
    }

    /// All gradient buffers in flatten order.
    pub fn flat_grads(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.param_count());
        let affine = |p: &AffineParams<T>, v: &mut Vec<T>| {
            v.extend_from_slice(p.grad_weight.data());
            v.extend_from_slice(&p.grad_bias);
        };
        affine(&self.phi_a, &mut v);
        affine(&self.phi_s, &mut v);
        affine(&self.phi_b, &mut v);
        v.extend([self.scn1.grad_alpha, self.scn1.grad_beta]);
        affine(&self.proj, &mut v);
        v.extend([self.scn2.grad_alpha, self.scn2.grad_beta]);
        if let Some(out) = &self.out {
            affine(out, &mut v);
        }
        v
    }

    /// Overwrites every parameter from a flat vector in flatten order.
    pub fn unflatten(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Length {
                op: "ModelParams::unflatten",
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ModelParams::unflatten"));
        }
        let mut rest = flat;
        let mut take = |dst: &mut [T]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        let affine = |p: &mut AffineParams<T>, take: &mut dyn FnMut(&mut [T])| {
            take(p.weight.data_mut());
            take(&mut p.bias);
        };
        affine(&mut self.phi_a, &mut take);
        affine(&mut self.phi_s, &mut take);
        affine(&mut self.phi_b, &mut take);
        take(std::slice::from_mut(&mut self.scn1.alpha));
        take(std::slice::from_mut(&mut self.scn1.beta));
        affine(&mut self.proj, &mut take);
        take(std::slice::from_mut(&mut self.scn2.alpha));
        take(std::slice::from_mut(&mut self.scn2.beta));
        if let Some(out) = self.out.as_mut() {
            affine(out, &mut take);
        }
        if self.scn1.beta == T::zero() || self.scn2.beta == T::zero() {
            return Err(Error::invalid("normalization beta collapsed to zero"));
        }
        Ok(())
    }

    /// A copy with every tensor converted to another element type.
    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let affine = |p: &AffineParams<T>| {
            AffineParams::new(p.weight.cast(), p.bias.iter().map(|&b| U::lit(b.to_f64().unwrap())).collect())
                .expect("shapes preserved")
        };
        let scn = |p: &ScnParams<T>| {
            let mut q = ScnParams::identity();
            q.alpha = U::lit(p.alpha.to_f64().unwrap());
            q.beta = U::lit(p.beta.to_f64().unwrap());
            q
        };
        ModelParams {
            arch: self.arch,
            phi_a: affine(&self.phi_a),
            phi_s: affine(&self.phi_s),
            phi_b: affine(&self.phi_b),
            scn1: scn(&self.scn1),
            proj: affine(&self.proj),
            scn2: scn(&self.scn2),
            out: self.out.as_ref().map(affine),
            logit_scale: U::lit(self.logit_scale.to_f64().unwrap()),
        }
    }

    fn check_attributes(&self, attrs: &Dense2D<T>) -> Result<()> {
        if attrs.cols() != self.arch.attr_dim {
            return Err(Error::Shape {
                op: "attributes",
                left: attrs.shape(),
                right: (attrs.rows(), self.arch.attr_dim),
            });
        }
        if attrs.rows() == 0 {
            return Err(Error::invalid("candidate attribute set is empty"));
        }
        Ok(())
    }

    /// `ReLU(Φa(A)) ⊙ σ(Φs(A)) + ReLU(Φb(A))`, or `ReLU(Φa(A))` with gating disabled.
    pub fn self_gate(&self, attrs: &Dense2D<T>) -> Result<(Dense2D<T>, GateCache<T>)> {
        self.check_attributes(attrs)?;
        let (a_pre, a_aff) = affine_forward(&self.phi_a, attrs)?;
        let (a_out, a_relu) = relu_forward(&a_pre);
        if !self.arch.self_gating {
            let cache = GateCache {
                a_aff,
                a_relu,
                a_out: a_out.clone(),
                gating: None,
            };
            return Ok((a_out, cache));
        }
        let (s_pre, s_aff) = affine_forward(&self.phi_s, attrs)?;
        let (s_out, s_sig) = sigmoid_forward(&s_pre);
        let (b_pre, b_aff) = affine_forward(&self.phi_b, attrs)?;
        let (b_out, b_relu) = relu_forward(&b_pre);
        let gated = a_out.hadamard(&s_out)?.add(&b_out)?;
        let cache = GateCache {
            a_aff,
            a_relu,
            a_out,
            gating: Some(GatingCache {
                s_aff,
                s_sig,
                s_out,
                b_aff,
                b_relu,
            }),
        };
        Ok((gated, cache))
    }

    fn self_gate_backward(&mut self, cache: &GateCache<T>, d_gate: &Dense2D<T>) -> Result<()> {
        let d_a_out = match &cache.gating {
            None => d_gate.clone(),
            Some(g) => {
                let d_s_out = d_gate.hadamard(&cache.a_out)?;
                let d_s_pre = sigmoid_backward(&g.s_sig, &d_s_out)?;
                affine_backward(&mut self.phi_s, &g.s_aff, &d_s_pre)?;
                let d_b_pre = relu_backward(&g.b_relu, d_gate)?;
                affine_backward(&mut self.phi_b, &g.b_aff, &d_b_pre)?;
                d_gate.hadamard(&g.s_out)?
            }
        };
        let d_a_pre = relu_backward(&cache.a_relu, &d_a_out)?;
        affine_backward(&mut self.phi_a, &cache.a_aff, &d_a_pre)?;
        Ok(())
    }

    fn normalize(&self, which: &ScnParams<T>, h: Dense2D<T>) -> Result<(Dense2D<T>, Option<ScnCache<T>>)> {
        match self.arch.normalization {
            Normalization::None => Ok((h, None)),
            Normalization::PlainCn => {
                let (y, c) = scn_forward(&ScnParams::identity(), &h)?;
                Ok((y, Some(c)))
            }
            Normalization::Scn => {
                let (y, c) = scn_forward(which, &h)?;
                Ok((y, Some(c)))
            }
        }
    }

    fn normalize_backward(norm: Normalization, which: &mut ScnParams<T>, cache: Option<&ScnCache<T>>, dy: Dense2D<T>) -> Result<Dense2D<T>> {
        match (norm, cache) {
            (Normalization::None, _) | (_, None) => Ok(dy),
            (Normalization::PlainCn, Some(c)) => {
                // fixed unit scalars: their gradients are discarded
                scn_backward(&mut ScnParams::identity(), c, &dy)
            }
            (Normalization::Scn, Some(c)) => scn_backward(which, c, &dy),
        }
    }

    /// Projects class attributes into the visual feature space.
    pub fn embed_attributes(&self, attrs: &Dense2D<T>) -> Result<(Dense2D<T>, EmbedCache<T>)> {
        let (g, gate) = self.self_gate(attrs)?;
        let (n1, norm1) = self.normalize(&self.scn1, g)?;
        let (p, proj) = affine_forward(&self.proj, &n1)?;
        let (n2, norm2) = self.normalize(&self.scn2, p)?;
        let (e, out) = match &self.out {
            Some(layer) => {
                let (e, c) = affine_forward(layer, &n2)?;
                (e, Some(c))
            }
            None => (n2, None),
        };
        Ok((
            e,
            EmbedCache {
                gate,
                norm1,
                proj,
                norm2,
                out,
            },
        ))
    }

    fn embed_backward(&mut self, cache: &EmbedCache<T>, d_embed: Dense2D<T>) -> Result<()> {
        let norm = self.arch.normalization;
        let d_n2 = match (self.out.as_mut(), &cache.out) {
            (Some(layer), Some(c)) => affine_backward(layer, c, &d_embed)?,
            _ => d_embed,
        };
        let d_p = Self::normalize_backward(norm, &mut self.scn2, cache.norm2.as_ref(), d_n2)?;
        let d_n1 = affine_backward(&mut self.proj, &cache.proj, &d_p)?;
        let d_g = Self::normalize_backward(norm, &mut self.scn1, cache.norm1.as_ref(), d_n1)?;
        self.self_gate_backward(&cache.gate, &d_g)
    }

    /// Scaled cosine similarity of every feature row against every embedded candidate.
    pub fn forward_logits(&self, features: &Dense2D<T>, candidates: &Dense2D<T>) -> Result<(Dense2D<T>, ForwardCache<T>)> {
        if features.cols() != self.arch.feat_dim {
            return Err(Error::Shape {
                op: "forward_logits",
                left: features.shape(),
                right: (features.rows(), self.arch.feat_dim),
            });
        }
        let (e, embed) = self.embed_attributes(candidates)?;
        let (logits, cosine) = cosine_logits(features, &e, self.logit_scale)?;
        Ok((logits, ForwardCache { embed, cosine }))
    }

    /// Mean cross-entropy of `labels` (indices into the candidate rows).
    pub fn loss(&self, features: &Dense2D<T>, labels: &[usize], candidates: &Dense2D<T>) -> Result<T> {
        let (logits, _) = self.forward_logits(features, candidates)?;
        Ok(softmax_xent(&logits, labels)?.0)
    }

    /// Loss and its gradient with respect to every parameter, in flatten order.
    /// Gradient buffers are reset first and hold the same values afterwards.
    pub fn loss_and_grads(&mut self, features: &Dense2D<T>, labels: &[usize], candidates: &Dense2D<T>) -> Result<(T, Vec<T>)> {
        self.zero_grad();
        let (logits, cache) = self.forward_logits(features, candidates)?;
        let (loss, d_logits) = softmax_xent(&logits, labels)?;
        let (_, d_embed) = cosine_backward(&cache.cosine, &d_logits)?;
        self.embed_backward(&cache.embed, d_embed)?;
        let grads = self.flat_grads();
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("loss_and_grads"));
        }
        Ok((loss, grads))
    }

    /// Index of the best-scoring candidate per row; ties go to the lowest index.
    pub fn predict(&self, features: &Dense2D<T>, candidates: &Dense2D<T>) -> Result<Vec<usize>> {
        let (logits, _) = self.forward_logits(features, candidates)?;
        Ok(argmax_rows(&logits))
    }
}

/// Row-wise argmax with lowest-index tie-breaking.
pub fn argmax_rows<T: Real>(m: &Dense2D<T>) -> Vec<usize> {
    m.iter_rows()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests;
