use crate::backward::{grad, GradMode, Gradients};
use crate::error::{GradError, Result};
use crate::tensor::Tensor;
use crate::var::Var;

/// Named, ordered trainable tensors of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), values: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) {
        self.names.push(name.into());
        self.values.push(value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Replaces every tensor, keeping names. Shapes must match.
    pub fn with_values(&self, values: Vec<Tensor>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(GradError::Shape(format!(
                "{} tensors for a set of {}",
                values.len(),
                self.values.len()
            )));
        }
        for (i, (new, old)) in values.iter().zip(&self.values).enumerate() {
            if new.shape() != old.shape() {
                return Err(GradError::Shape(format!(
                    "parameter {}: {:?} vs {:?}",
                    self.names[i],
                    new.shape(),
                    old.shape()
                )));
            }
        }
        Ok(ParamSet { names: self.names.clone(), values })
    }

    /// Fresh trainable leaves for one graph.
    pub fn leaves(&self) -> Vec<Var> {
        self.values.iter().cloned().map(Var::param).collect()
    }

    /// Constant leaves: the network is evaluated but not differentiated.
    pub fn constants(&self) -> Vec<Var> {
        self.values.iter().cloned().map(Var::constant).collect()
    }

    /// Order-sensitive FNV-1a digest of names, shapes and value bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (name, t) in self.iter() {
            eat(name.as_bytes());
            for &d in t.dims() {
                eat(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

/// `theta - alpha * grad(loss, theta)` as new graph nodes; `theta` itself is
/// untouched. With [`GradMode::CreateGraph`] the result stays connected to
/// `theta` through the gradient, so an outer loss evaluated at the shifted
/// parameters can be differentiated with respect to the original ones.
pub fn sgd_shift(loss: &Var, theta: &[Var], alpha: f64, mode: GradMode) -> Result<Vec<Var>> {
    if alpha == 0.0 {
        return Ok(theta.to_vec());
    }
    let Gradients { grads, .. } = grad(loss, theta, mode)?;
    theta
        .iter()
        .zip(grads)
        .map(|(p, g)| p.sub(&g.scale(alpha)?))
        .collect()
}

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        AdamConfig { lr, beta1, beta2, eps: 1e-8 }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = |t: &Tensor| Tensor::zeros(t.shape().clone());
        AdamState {
            step: 0,
            m: params.values().iter().map(zeros).collect(),
            v: params.values().iter().map(zeros).collect(),
        }
    }
}

/// One bias-corrected Adam update. Returns the new parameters; `state` is
/// advanced in place.
pub fn adam_step(
    params: &ParamSet,
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<ParamSet> {
    if !(cfg.lr > 0.0) {
        return Err(GradError::Invalid(format!("learning rate must be > 0, got {}", cfg.lr)));
    }
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len()
    {
        return Err(GradError::Shape("adam: params, grads and state lengths differ".into()));
    }
    let t = state.step + 1;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let mut new_values = Vec::with_capacity(params.len());
    let mut new_m = Vec::with_capacity(params.len());
    let mut new_v = Vec::with_capacity(params.len());
    for (i, p) in params.values().iter().enumerate() {
        let g = &grads[i];
        if g.shape() != p.shape() || state.m[i].shape() != p.shape() {
            return Err(GradError::Shape(format!("adam: parameter {i} shape mismatch")));
        }
        let m = state.m[i].zip_map(g, |m, g| cfg.beta1 * m + (1.0 - cfg.beta1) * g)?;
        let v = state.v[i].zip_map(g, |v, g| cfg.beta2 * v + (1.0 - cfg.beta2) * g * g)?;
        let step = m.zip_map(&v, |m, v| cfg.lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps))?;
        let updated = p.zip_map(&step, |p, s| p - s)?;
        if !updated.is_finite() {
            return Err(GradError::NonFinite(format!("adam update of parameter {i}")));
        }
        new_values.push(updated);
        new_m.push(m);
        new_v.push(v);
    }
    state.m = new_m;
    state.v = new_v;
    state.step = t;
    params.with_values(new_values)
}
