//! Differentiable building blocks with explicit forward and backward passes.
//!
//! Each `*_forward` returns its output together with a cache that is only
//! valid for the matching `*_backward` call. Backward passes on parameterized
//! layers accumulate into the parameter's gradient buffers and return the
//! gradient with respect to the layer input.

use crate::error::{Error, Result};
use crate::numerics::{dot, rowwise_mean_std, Dense2D, Real};

/// Variance stabilizer inside the normalization standard deviation.
pub const EPS_VAR: f64 = 1e-5;
/// Smallest row norm accepted by [`cosine_logits`].
pub const EPS_NORM: f64 = 1e-12;
/// Fixed softmax temperature applied to cosine similarities.
pub const DEFAULT_LOGIT_SCALE: f64 = 10.0;

/// Fully connected layer `y = x·W + b` with `W` of shape `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineParams<T: Real = f32> {
    pub weight: Dense2D<T>,
    pub bias: Vec<T>,
    pub grad_weight: Dense2D<T>,
    pub grad_bias: Vec<T>,
}

impl<T: Real> AffineParams<T> {
    pub fn new(weight: Dense2D<T>, bias: Vec<T>) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(Error::Length {
                op: "AffineParams::new",
                expected: weight.cols(),
                got: bias.len(),
            });
        }
        let (i, o) = weight.shape();
        Ok(Self {
            grad_weight: Dense2D::zeros(i, o),
            grad_bias: vec![T::zero(); o],
            weight,
            bias,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Dense2D::zeros(in_dim, out_dim),
            bias: vec![T::zero(); out_dim],
            grad_weight: Dense2D::zeros(in_dim, out_dim),
            grad_bias: vec![T::zero(); out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn param_count(&self) -> usize {
        self.weight.data().len() + self.bias.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.data_mut().fill(T::zero());
        self.grad_bias.fill(T::zero());
    }
}

#[derive(Clone, Debug)]
pub struct AffineCache<T: Real> {
    input: Dense2D<T>,
}

pub fn affine_forward<T: Real>(p: &AffineParams<T>, x: &Dense2D<T>) -> Result<(Dense2D<T>, AffineCache<T>)> {
    let mut y = x.matmul(&p.weight)?;
    for i in 0..y.rows() {
        for (v, &b) in y.row_mut(i).iter_mut().zip(&p.bias) {
            *v = *v + b;
        }
    }
    y.check_finite("affine_forward")?;
    Ok((y, AffineCache { input: x.clone() }))
}

pub fn affine_backward<T: Real>(
    p: &mut AffineParams<T>,
    cache: &AffineCache<T>,
    dy: &Dense2D<T>,
) -> Result<Dense2D<T>> {
    if dy.shape() != (cache.input.rows(), p.out_dim()) {
        return Err(Error::Shape {
            op: "affine_backward",
            left: dy.shape(),
            right: (cache.input.rows(), p.out_dim()),
        });
    }
    let gw = cache.input.t_matmul(dy)?;
    for (acc, g) in p.grad_weight.data_mut().iter_mut().zip(gw.data()) {
        *acc = *acc + *g;
    }
    for row in dy.iter_rows() {
        for (acc, &g) in p.grad_bias.iter_mut().zip(row) {
            *acc = *acc + g;
        }
    }
    dy.matmul_t(&p.weight)
}

#[derive(Clone, Debug)]
pub struct ReluCache<T: Real> {
    input: Dense2D<T>,
}

pub fn relu_forward<T: Real>(x: &Dense2D<T>) -> (Dense2D<T>, ReluCache<T>) {
    let y = x.map(|v| if v > T::zero() { v } else { T::zero() });
    (y, ReluCache { input: x.clone() })
}

/// Subgradient convention: the derivative at exactly 0 is 0.
pub fn relu_backward<T: Real>(cache: &ReluCache<T>, dy: &Dense2D<T>) -> Result<Dense2D<T>> {
    cache
        .input
        .zip_map(dy, "relu_backward", |x, g| if x > T::zero() { g } else { T::zero() })
}

#[derive(Clone, Debug)]
pub struct SigmoidCache<T: Real> {
    output: Dense2D<T>,
}

pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid_forward<T: Real>(x: &Dense2D<T>) -> (Dense2D<T>, SigmoidCache<T>) {
    let y = x.map(sigmoid);
    (y.clone(), SigmoidCache { output: y })
}

pub fn sigmoid_backward<T: Real>(cache: &SigmoidCache<T>, dy: &Dense2D<T>) -> Result<Dense2D<T>> {
    cache
        .output
        .zip_map(dy, "sigmoid_backward", |s, g| g * s * (T::one() - s))
}

/// Scalars of the scaled normalization `y = (h − α·μ) / (β·σ)`, where μ and σ
/// are the per-row mean and standard deviation of `h`.
///
/// `α = β = 1` is plain layer normalization without a learned gain.
#[derive(Clone, Debug, PartialEq)]
pub struct ScnParams<T: Real = f32> {
    pub alpha: T,
    pub beta: T,
    pub grad_alpha: T,
    pub grad_beta: T,
    pub eps_var: T,
}

impl<T: Real> ScnParams<T> {
    pub fn new(alpha: T, beta: T) -> Result<Self> {
        if !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::NonFinite("ScnParams::new"));
        }
        if beta == T::zero() {
            return Err(Error::invalid("scaled normalization needs beta != 0"));
        }
        Ok(Self {
            alpha,
            beta,
            grad_alpha: T::zero(),
            grad_beta: T::zero(),
            eps_var: T::lit(EPS_VAR),
        })
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::one()).expect("unit scalars are valid")
    }

    pub fn zero_grad(&mut self) {
        self.grad_alpha = T::zero();
        self.grad_beta = T::zero();
    }
}

#[derive(Clone, Debug)]
pub struct ScnCache<T: Real> {
    centered: Dense2D<T>,
    output: Dense2D<T>,
    means: Vec<T>,
    stds: Vec<T>,
}

pub fn scn_forward<T: Real>(p: &ScnParams<T>, h: &Dense2D<T>) -> Result<(Dense2D<T>, ScnCache<T>)> {
    if p.beta == T::zero() {
        return Err(Error::invalid("scaled normalization needs beta != 0"));
    }
    let (means, stds) = rowwise_mean_std(h, p.eps_var)?;
    let mut centered = h.clone();
    let mut y = h.clone();
    for i in 0..h.rows() {
        let (mu, sd) = (means[i], stds[i]);
        let denom = p.beta * sd;
        for (c, v) in centered.row_mut(i).iter_mut().zip(y.row_mut(i).iter_mut()) {
            *c = *c - mu;
            *v = (*v - p.alpha * mu) / denom;
        }
    }
    y.check_finite("scn_forward")?;
    let cache = ScnCache {
        centered,
        output: y.clone(),
        means,
        stds,
    };
    Ok((y, cache))
}

/// Backward through the scaled normalization, including the dependence of
/// μ and σ on every entry of the row. Accumulates `∂L/∂α` and `∂L/∂β`.
pub fn scn_backward<T: Real>(p: &mut ScnParams<T>, cache: &ScnCache<T>, dy: &Dense2D<T>) -> Result<Dense2D<T>> {
    if dy.shape() != cache.output.shape() {
        return Err(Error::Shape {
            op: "scn_backward",
            left: dy.shape(),
            right: cache.output.shape(),
        });
    }
    let d = T::lit(dy.cols() as f64);
    let mut dh = Dense2D::zeros(dy.rows(), dy.cols());
    let (mut ga, mut gb) = (T::zero(), T::zero());
    for i in 0..dy.rows() {
        let g = dy.row(i);
        let y = cache.output.row(i);
        let c = cache.centered.row(i);
        let (mu, sd) = (cache.means[i], cache.stds[i]);
        let bs = p.beta * sd;
        let sum_g: T = g.iter().copied().sum();
        let sum_gy = dot(g, y);
        let mean_coeff = p.alpha * sum_g / (d * bs);
        let var_coeff = sum_gy / (d * sd * sd);
        for ((out, &gk), &ck) in dh.row_mut(i).iter_mut().zip(g).zip(c) {
            *out = gk / bs - mean_coeff - ck * var_coeff;
        }
        ga = ga - sum_g * mu / bs;
        gb = gb - sum_gy / p.beta;
    }
    p.grad_alpha = p.grad_alpha + ga;
    p.grad_beta = p.grad_beta + gb;
    dh.check_finite("scn_backward")?;
    Ok(dh)
}

#[derive(Clone, Debug)]
pub struct CosineCache<T: Real> {
    x_unit: Dense2D<T>,
    e_unit: Dense2D<T>,
    x_norm: Vec<T>,
    e_norm: Vec<T>,
    scale: T,
}

fn unit_rows<T: Real>(m: &Dense2D<T>, op: &'static str) -> Result<(Dense2D<T>, Vec<T>)> {
    let eps = T::lit(EPS_NORM);
    let mut unit = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let n = dot(m.row(i), m.row(i)).sqrt();
        if !(n > eps) {
            return Err(Error::ZeroNorm(op));
        }
        for v in unit.row_mut(i) {
            *v = *v / n;
        }
        norms.push(n);
    }
    Ok((unit, norms))
}

/// `logits[i, c] = scale · cos(x_i, e_c)`.
pub fn cosine_logits<T: Real>(
    x: &Dense2D<T>,
    e: &Dense2D<T>,
    scale: T,
) -> Result<(Dense2D<T>, CosineCache<T>)> {
    if x.cols() != e.cols() {
        return Err(Error::Shape {
            op: "cosine_logits",
            left: x.shape(),
            right: e.shape(),
        });
    }
    let (x_unit, x_norm) = unit_rows(x, "cosine_logits(x)")?;
    let (e_unit, e_norm) = unit_rows(e, "cosine_logits(e)")?;
    let logits = x_unit.matmul_t(&e_unit)?.map(|v| v * scale);
    Ok((
        logits,
        CosineCache {
            x_unit,
            e_unit,
            x_norm,
            e_norm,
            scale,
        },
    ))
}

/// Gradients of [`cosine_logits`] with respect to both inputs.
pub fn cosine_backward<T: Real>(cache: &CosineCache<T>, dlogits: &Dense2D<T>) -> Result<(Dense2D<T>, Dense2D<T>)> {
    let expect = (cache.x_unit.rows(), cache.e_unit.rows());
    if dlogits.shape() != expect {
        return Err(Error::Shape {
            op: "cosine_backward",
            left: dlogits.shape(),
            right: expect,
        });
    }
    let g = dlogits.map(|v| v * cache.scale);
    // gradients w.r.t. the unit vectors, then project out the radial part
    let du = g.matmul(&cache.e_unit)?;
    let dv = g.t_matmul(&cache.x_unit)?;
    let project = |d_unit: Dense2D<T>, unit: &Dense2D<T>, norms: &[T]| {
        let mut out = d_unit;
        for i in 0..out.rows() {
            let u = unit.row(i);
            let radial = dot(out.row(i), u);
            for (o, &uk) in out.row_mut(i).iter_mut().zip(u) {
                *o = (*o - radial * uk) / norms[i];
            }
        }
        out
    };
    let dx = project(du, &cache.x_unit, &cache.x_norm);
    let de = project(dv, &cache.e_unit, &cache.e_norm);
    Ok((dx, de))
}

/// Mean cross-entropy over rows and its gradient `(softmax − onehot) / n`.
pub fn softmax_xent<T: Real>(logits: &Dense2D<T>, labels: &[usize]) -> Result<(T, Dense2D<T>)> {
    let (n, c) = logits.shape();
    if labels.len() != n {
        return Err(Error::Length {
            op: "softmax_xent",
            expected: n,
            got: labels.len(),
        });
    }
    if n == 0 {
        return Err(Error::invalid("softmax_xent on an empty batch"));
    }
    let inv_n = T::one() / T::lit(n as f64);
    let mut loss = T::zero();
    let mut grad = Dense2D::zeros(n, c);
    for (i, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(Error::invalid(format!("label {label} out of range for {c} classes")));
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum_exp: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        loss = loss + (log_z - row[label]);
        for (j, (g, &v)) in grad.row_mut(i).iter_mut().zip(row).enumerate() {
            let p = (v - log_z).exp();
            let target = if j == label { T::one() } else { T::zero() };
            *g = (p - target) * inv_n;
        }
    }
    let loss = loss * inv_n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("softmax_xent"));
    }
    Ok((loss, grad))
}
