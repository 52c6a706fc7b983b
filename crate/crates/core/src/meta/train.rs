use facesr_grad::{adam_step, grad, sgd_shift, AdamConfig, AdamState, GradMode, ParamSet, Tensor, Var};

use super::losses::{discriminator_loss, outer_loss, pooled_inner_loss, LossParts};
use super::{InnerSupervision, Lambdas, TrainConfig};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nets::{
    Checkpoint, DiscConfig, Discriminator, MaskNet, MaskNetConfig, Perceptual, SrNet, SrNetConfig,
};
use crate::oracle::Support;
use crate::par::Exec;

/// The three trainable networks plus the frozen perceptual extractor.
#[derive(Clone, Debug)]
pub struct Models {
    pub sr: SrNet,
    pub mask: MaskNet,
    pub disc: Discriminator,
    pub perceptual: Perceptual,
}

impl Models {
    pub fn new(sr: SrNetConfig, mask: MaskNetConfig, disc: DiscConfig) -> Result<Self> {
        if sr.scale != mask.scale {
            return Err(Error::Config(format!(
                "srnet scale {} and masknet scale {} differ",
                sr.scale, mask.scale
            )));
        }
        Ok(Models {
            sr: SrNet::new(sr)?,
            mask: MaskNet::new(mask)?,
            disc: Discriminator::new(disc)?,
            perceptual: Perceptual::new(),
        })
    }
}

/// Parameters and optimiser moments of all three networks.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub theta: ParamSet,
    pub theta_m: ParamSet,
    pub theta_d: ParamSet,
    pub adam_sr: AdamState,
    pub adam_mask: AdamState,
    pub adam_disc: AdamState,
    pub step: u64,
}

impl TrainState {
    /// Networks seeded with `seed`, `seed + 1` and `seed + 2`.
    pub fn init(models: &Models, seed: u64) -> Self {
        let theta = models.sr.init(seed);
        let theta_m = models.mask.init(seed.wrapping_add(1));
        let theta_d = models.disc.init(seed.wrapping_add(2));
        TrainState {
            adam_sr: AdamState::new(&theta),
            adam_mask: AdamState::new(&theta_m),
            adam_disc: AdamState::new(&theta_d),
            theta,
            theta_m,
            theta_d,
            step: 0,
        }
    }

    pub fn to_checkpoint(&self, config_echo: &str) -> Checkpoint {
        let mut c = Checkpoint::new(config_echo);
        c.push("meta/step", Tensor::scalar(self.step as f64));
        c.push_params("sr", &self.theta);
        c.push_params("mask", &self.theta_m);
        c.push_params("disc", &self.theta_d);
        c.push_adam("adam/sr", &self.theta, &self.adam_sr);
        c.push_adam("adam/mask", &self.theta_m, &self.adam_mask);
        c.push_adam("adam/disc", &self.theta_d, &self.adam_disc);
        c
    }

    pub fn from_checkpoint(models: &Models, c: &Checkpoint) -> Result<Self> {
        let like = TrainState::init(models, 0);
        let theta = c.params("sr", &like.theta)?;
        let theta_m = c.params("mask", &like.theta_m)?;
        let theta_d = c.params("disc", &like.theta_d)?;
        let step = c
            .get("meta/step")
            .ok_or_else(|| Error::Format("checkpoint lacks meta/step".into()))?
            .item() as u64;
        Ok(TrainState {
            adam_sr: c.adam("adam/sr", &theta)?,
            adam_mask: c.adam("adam/mask", &theta_m)?,
            adam_disc: c.adam("adam/disc", &theta_d)?,
            theta,
            theta_m,
            theta_d,
            step,
        })
    }
}

/// One face (or face patch) of a task: degraded crop, ground truth,
/// pseudo-restored target and the oracle's corruption support.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceSample {
    pub lr: Image,
    pub gt: Image,
    pub bfr: Image,
    pub support: Support,
}

/// One degradation task: faces for the inner step and a natural-image pair
/// for the outer objective, all degraded by the same spec.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSample {
    pub lr: Image,
    pub hr: Image,
    pub faces: Vec<FaceSample>,
}

#[derive(Clone, Debug)]
pub struct TaskGrads {
    pub sr: Vec<Tensor>,
    pub mask: Vec<Tensor>,
    pub disc: Vec<Tensor>,
    pub parts: LossParts,
    pub inner: f64,
    pub loss_d: f64,
    pub mask_mean: f64,
}

/// Per-step averages over the task batch, plus L2 norms of the summed
/// gradients.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub parts: LossParts,
    pub inner: f64,
    pub loss_d: f64,
    pub mask_mean: f64,
    pub grad_norm_sr: f64,
    pub grad_norm_mask: f64,
    pub grad_norm_disc: f64,
}

fn ones_mask(like: &Image) -> Var {
    Var::constant(Tensor::ones([1, 1, like.height(), like.width()]))
}

/// Meta-gradients of one task for the SR net and MaskNet, and the
/// discriminator gradient.
pub fn task_gradients(
    models: &Models,
    state: &TrainState,
    task: &TaskSample,
    cfg: &TrainConfig,
) -> Result<TaskGrads> {
    let theta = state.theta.leaves();
    let theta_m = if cfg.use_masknet { state.theta_m.leaves() } else { Vec::new() };
    let mut items = Vec::with_capacity(task.faces.len());
    let mut masks = Vec::with_capacity(task.faces.len());
    for face in &task.faces {
        let lr = Var::constant(face.lr.to_tensor());
        let bfr = Var::constant(face.bfr.to_tensor());
        let target = match cfg.inner_supervision {
            InnerSupervision::OracleBfr => bfr.clone(),
            InnerSupervision::Gt => Var::constant(face.gt.to_tensor()),
        };
        let m = if cfg.use_masknet {
            models.mask.forward(&theta_m, Some(&lr), &bfr)?
        } else {
            ones_mask(&face.bfr)
        };
        let m_inner = if cfg.mask_inner_path { m.clone() } else { m.detach() };
        items.push((lr, target, m_inner));
        masks.push(m);
    }
    let l_in = pooled_inner_loss(&models.sr, &theta, &items)?;
    let mode = if cfg.first_order { GradMode::FirstOrder } else { GradMode::CreateGraph };
    let theta_n = sgd_shift(&l_in, &theta, cfg.alpha, mode)?;

    let lr = Var::constant(task.lr.to_tensor());
    let hr = Var::constant(task.hr.to_tensor());
    let theta_d_const = state.theta_d.constants();
    let (loss, parts, out) = outer_loss(
        &models.sr,
        &models.perceptual,
        &models.disc,
        &theta_n,
        &theta_d_const,
        &lr,
        &hr,
        &masks,
        &cfg.lambda,
    )?;
    let mut wrt = theta.clone();
    wrt.extend(theta_m.iter().cloned());
    let g = grad(&loss, &wrt, GradMode::FirstOrder)?.values();
    let (g_sr, g_mask) = g.split_at(theta.len());
    let g_mask = if cfg.use_masknet {
        g_mask.to_vec()
    } else {
        state.theta_m.values().iter().map(|t| Tensor::zeros(t.shape().clone())).collect()
    };

    let theta_d = state.theta_d.leaves();
    let loss_d = discriminator_loss(&models.disc, &theta_d, &hr, &out)?;
    let g_disc = grad(&loss_d, &theta_d, GradMode::FirstOrder)?.values();

    let (sum_m, n_m) = masks
        .iter()
        .fold((0.0, 0usize), |(s, n), m| (s + m.value().sum(), n + m.value().len()));
    Ok(TaskGrads {
        sr: g_sr.to_vec(),
        mask: g_mask,
        disc: g_disc,
        parts,
        inner: l_in.item(),
        loss_d: loss_d.item(),
        mask_mean: sum_m / n_m.max(1) as f64,
    })
}

fn accumulate(acc: &mut Option<Vec<Tensor>>, g: &[Tensor]) -> Result<()> {
    match acc {
        None => *acc = Some(g.to_vec()),
        Some(a) => {
            for (x, y) in a.iter_mut().zip(g) {
                *x = x.zip_map(y, |p, q| p + q)?;
            }
        }
    }
    Ok(())
}

fn l2(gs: &[Tensor]) -> f64 {
    gs.iter().flat_map(|t| t.data().iter()).map(|v| v * v).sum::<f64>().sqrt()
}

/// One meta-training step over a task batch: per-task meta-gradients (in
/// parallel when `exec` allows), summed in task order, then one Adam update
/// for each network.
pub fn train_step(
    models: &Models,
    state: &mut TrainState,
    tasks: &[TaskSample],
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<StepMetrics> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::Invalid("empty task batch".into()));
    }
    let snapshot: &TrainState = state;
    let outs = exec
        .map(tasks, |_, t| task_gradients(models, snapshot, t, cfg))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let (mut g_sr, mut g_mask, mut g_disc) = (None, None, None);
    let mut metrics = StepMetrics { step: state.step, ..StepMetrics::default() };
    for o in &outs {
        accumulate(&mut g_sr, &o.sr)?;
        accumulate(&mut g_mask, &o.mask)?;
        accumulate(&mut g_disc, &o.disc)?;
        metrics.parts.l1 += o.parts.l1;
        metrics.parts.perceptual += o.parts.perceptual;
        metrics.parts.adv += o.parts.adv;
        metrics.parts.reg += o.parts.reg;
        metrics.parts.total += o.parts.total;
        metrics.inner += o.inner;
        metrics.loss_d += o.loss_d;
        metrics.mask_mean += o.mask_mean;
    }
    let k = outs.len() as f64;
    for v in [
        &mut metrics.parts.l1,
        &mut metrics.parts.perceptual,
        &mut metrics.parts.adv,
        &mut metrics.parts.reg,
        &mut metrics.parts.total,
        &mut metrics.inner,
        &mut metrics.loss_d,
        &mut metrics.mask_mean,
    ] {
        *v /= k;
    }
    let (g_sr, g_mask, g_disc) = (g_sr.expect("tasks"), g_mask.expect("tasks"), g_disc.expect("tasks"));
    metrics.grad_norm_sr = l2(&g_sr);
    metrics.grad_norm_mask = l2(&g_mask);
    metrics.grad_norm_disc = l2(&g_disc);
    for (name, v) in [
        ("sr gradient", metrics.grad_norm_sr),
        ("mask gradient", metrics.grad_norm_mask),
        ("discriminator gradient", metrics.grad_norm_disc),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} at step {}", state.step)));
        }
    }

    state.theta = adam_step(&state.theta, &g_sr, &mut state.adam_sr, &AdamConfig::new(cfg.beta, cfg.beta1, cfg.beta2))?;
    if cfg.use_masknet {
        state.theta_m =
            adam_step(&state.theta_m, &g_mask, &mut state.adam_mask, &AdamConfig::new(cfg.gamma, cfg.beta1, cfg.beta2))?;
    }
    state.theta_d =
        adam_step(&state.theta_d, &g_disc, &mut state.adam_disc, &AdamConfig::new(cfg.eta, cfg.beta1, cfg.beta2))?;
    state.step += 1;
    Ok(metrics)
}

/// Gradient of the plain supervised objective `l1 * L1 + perceptual * LPIPS`
/// on one `(lr, hr)` pair at `theta`, with the loss value.
pub fn supervised_gradient(
    models: &Models,
    theta: &ParamSet,
    lr: &Image,
    hr: &Image,
    lambda: &Lambdas,
) -> Result<(Vec<Tensor>, f64)> {
    let leaves = theta.leaves();
    let out = models.sr.forward(&leaves, &Var::constant(lr.to_tensor()))?;
    let hr = Var::constant(hr.to_tensor());
    let mut loss = out.sub(&hr)?.abs()?.mean()?.scale(lambda.l1)?;
    if lambda.perceptual != 0.0 {
        loss = loss.add(&models.perceptual.distance(&out, &hr)?.scale(lambda.perceptual)?)?;
    }
    let g = grad(&loss, &leaves, GradMode::FirstOrder)?.values();
    Ok((g, loss.item()))
}

/// Meta-gradient of `outer(theta - alpha * grad inner(theta))` with respect
/// to `theta`, and the outer loss value. [`GradMode::FirstOrder`] treats the
/// inner gradient as a constant.
pub fn maml_gradient<I, O>(
    theta: &[Tensor],
    alpha: f64,
    mode: GradMode,
    inner: I,
    outer: O,
) -> Result<(Vec<Tensor>, f64)>
where
    I: Fn(&[Var]) -> Result<Var>,
    O: Fn(&[Var]) -> Result<Var>,
{
    let leaves: Vec<Var> = theta.iter().cloned().map(Var::param).collect();
    let l_in = inner(&leaves)?;
    let shifted = sgd_shift(&l_in, &leaves, alpha, mode)?;
    let l_out = outer(&shifted)?;
    let g = grad(&l_out, &leaves, GradMode::FirstOrder)?.values();
    Ok((g, l_out.item()))
}
