use facesr_grad::{grad, GradMode, ParamSet, Rect, Tensor, Var};

use super::losses::pooled_inner_loss;
use super::Models;
use crate::error::{Error, Result};
use crate::image::Image;

/// A face region of the degraded image (in degraded-image pixels) and the
/// restored face used as its inner-loop target (`scale` times larger).
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptFace {
    pub rect: Rect,
    pub target: Image,
}

#[derive(Clone, Debug)]
pub struct AdaptOutcome {
    pub sr: Image,
    pub theta: ParamSet,
    /// Inner loss at the parameters before each step and after the last one.
    pub inner_losses: Vec<f64>,
    /// One mask per face.
    pub masks: Vec<Image>,
}

/// `n` masked inner SGD steps on the faces of `lr`, then super-resolves the
/// whole image with the adapted parameters. `theta_m = None` uses `m = 1`.
pub fn adapt_and_superresolve(
    models: &Models,
    theta: &ParamSet,
    theta_m: Option<&ParamSet>,
    lr: &Image,
    faces: &[AdaptFace],
    n: usize,
    alpha: f64,
) -> Result<AdaptOutcome> {
    let (mut srs, thetas, inner_losses, masks) = adapt_trajectory(models, theta, theta_m, lr, faces, &[n], alpha)?;
    Ok(AdaptOutcome {
        sr: srs.pop().expect("one output"),
        theta: thetas.into_iter().next().expect("one output"),
        inner_losses,
        masks,
    })
}

type Trajectory = (Vec<Image>, Vec<ParamSet>, Vec<f64>, Vec<Image>);

/// Runs one adaptation trajectory of `max(steps)` inner steps and
/// super-resolves `lr` after each requested step count, in the order given.
pub fn adapt_trajectory(
    models: &Models,
    theta: &ParamSet,
    theta_m: Option<&ParamSet>,
    lr: &Image,
    faces: &[AdaptFace],
    steps: &[usize],
    alpha: f64,
) -> Result<Trajectory> {
    let n = steps.iter().copied().max().unwrap_or(0);
    if n > 0 && faces.is_empty() {
        return Err(Error::NoAdaptationSignal(
            "adaptation needs at least one face region".into(),
        ));
    }
    let s = models.sr.scale();
    let mut items = Vec::with_capacity(faces.len());
    let mut masks = Vec::with_capacity(faces.len());
    for f in faces {
        if !f.rect.fits_in(lr.width(), lr.height()) || f.rect.area() == 0 {
            return Err(Error::Invalid(format!(
                "face {:?} outside the {}x{} image",
                f.rect,
                lr.width(),
                lr.height()
            )));
        }
        if f.target.dims() != (3, f.rect.h * s, f.rect.w * s) {
            return Err(Error::Shape(format!(
                "face target {:?} is not {s}x the {}x{} face",
                f.target.dims(),
                f.rect.w,
                f.rect.h
            )));
        }
        let face_lr = Var::constant(lr.crop(f.rect)?.to_tensor());
        let target = Var::constant(f.target.to_tensor());
        let m = match theta_m {
            Some(p) => models.mask.forward(&p.constants(), Some(&face_lr), &target)?.detach(),
            None => Var::constant(Tensor::ones([1, 1, f.target.height(), f.target.width()])),
        };
        masks.push(Image::from_tensor(m.value())?);
        items.push((face_lr, target, m));
    }

    let mut at_step: Vec<Option<ParamSet>> = vec![None; steps.len()];
    let mut current = theta.clone();
    let mut inner_losses = Vec::with_capacity(n + 1);
    for step in 0..=n {
        for (k, &want) in steps.iter().enumerate() {
            if want == step {
                at_step[k] = Some(current.clone());
            }
        }
        if faces.is_empty() {
            break;
        }
        let leaves = current.leaves();
        let loss = pooled_inner_loss(&models.sr, &leaves, &items)?;
        inner_losses.push(loss.item());
        if step == n {
            break;
        }
        let g = grad(&loss, &leaves, GradMode::FirstOrder)?.values();
        let updated = current
            .values()
            .iter()
            .zip(&g)
            .map(|(p, g)| p.zip_map(g, |p, g| p - alpha * g))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if updated.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite(format!("parameters after inner step {step}")));
        }
        current = current.with_values(updated)?;
    }
    let thetas: Vec<ParamSet> = at_step.into_iter().map(|p| p.expect("every step visited")).collect();
    let srs = thetas.iter().map(|p| models.sr.super_resolve(p, lr)).collect::<Result<Vec<_>>>()?;
    Ok((srs, thetas, inner_losses, masks))
}
