use facesr_grad::Var;

use super::Lambdas;
use crate::error::{Error, Result};
use crate::nets::{Discriminator, Perceptual, SrNet};

/// Scalar values of the outer-loss terms, unweighted, plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub l1: f64,
    pub perceptual: f64,
    pub adv: f64,
    pub reg: f64,
    pub total: f64,
}

pub fn weighted_total(l1: f64, perceptual: f64, adv: f64, reg: f64, lambda: &Lambdas) -> f64 {
    lambda.l1 * l1 + lambda.perceptual * perceptual + lambda.adv * adv + lambda.reg * reg
}

fn weighted_mask(m: &Var, residual: &Var) -> Result<Var> {
    let (n, c, h, w) = residual.shape().nchw()?;
    let (mn, mc, mh, mw) = m.shape().nchw()?;
    if (mn, mc, mh, mw) != (n, 1, h, w) {
        return Err(Error::Shape(format!(
            "mask {:?} does not match prediction {:?}",
            m.dims(),
            residual.dims()
        )));
    }
    Ok(residual.mul(&m.broadcast_channels(c)?)?)
}

/// Mean of `m * |f(face_lr; theta) - target|`, with `m` shared across channels.
pub fn inner_loss(sr: &SrNet, theta: &[Var], face_lr: &Var, target: &Var, m: &Var) -> Result<Var> {
    let pred = sr.forward(theta, face_lr)?;
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", pred.dims(), target.dims())));
    }
    let r = pred.sub(target)?.abs()?;
    Ok(weighted_mask(m, &r)?.mean()?)
}

/// Inner loss over several faces (or patches) pooled as one batch: the sum of
/// weighted residuals over all of them divided by their total element count.
/// One item reduces to [`inner_loss`].
pub fn pooled_inner_loss(sr: &SrNet, theta: &[Var], items: &[(Var, Var, Var)]) -> Result<Var> {
    match items {
        [] => Err(Error::NoAdaptationSignal("no faces for the inner loss".into())),
        [(lr, target, m)] => inner_loss(sr, theta, lr, target, m),
        _ => {
            let mut total: Option<Var> = None;
            let mut count = 0usize;
            for (lr, target, m) in items {
                let pred = sr.forward(theta, lr)?;
                if pred.dims() != target.dims() {
                    return Err(Error::Shape("prediction and target differ".into()));
                }
                count += pred.value().len();
                let s = weighted_mask(m, &pred.sub(target)?.abs()?)?.sum()?;
                total = Some(match total {
                    None => s,
                    Some(t) => t.add(&s)?,
                });
            }
            Ok(total.expect("non-empty").scale(1.0 / count as f64)?)
        }
    }
}

/// `-E log sigmoid(D(I_SR))`, i.e. the mean of `softplus(-logit)`.
pub fn adversarial_loss(logits: &Var) -> Result<Var> {
    Ok(logits.neg()?.softplus()?.mean()?)
}

/// `-E[log D(I)] - E[log(1 - D(I_SR))]` in logit form. `fake` is detached, so
/// only the discriminator parameters receive gradient.
pub fn discriminator_loss(disc: &Discriminator, theta_d: &[Var], real: &Var, fake: &Var) -> Result<Var> {
    let lr = disc.forward(theta_d, &real.detach())?;
    let lf = disc.forward(theta_d, &fake.detach())?;
    Ok(lr.neg()?.softplus()?.mean()?.add(&lf.softplus()?.mean()?)?)
}

/// Mean squared deviation of the masks from 1, pooled over all of them.
pub fn mask_regularizer(masks: &[Var]) -> Result<Var> {
    let mut total: Option<Var> = None;
    let mut count = 0usize;
    for m in masks {
        count += m.value().len();
        let s = m.add_scalar(-1.0)?.square()?.sum()?;
        total = Some(match total {
            None => s,
            Some(t) => t.add(&s)?,
        });
    }
    match total {
        None => Ok(Var::scalar(0.0)),
        Some(t) => Ok(t.scale(1.0 / count as f64)?),
    }
}

/// Weighted outer objective at the adapted parameters. Terms with a zero
/// weight are evaluated on detached values for logging only and do not enter
/// the graph.
#[allow(clippy::too_many_arguments)]
pub fn outer_loss(
    sr: &SrNet,
    perceptual: &Perceptual,
    disc: &Discriminator,
    theta_n: &[Var],
    theta_d: &[Var],
    lr: &Var,
    hr: &Var,
    masks: &[Var],
    lambda: &Lambdas,
) -> Result<(Var, LossParts, Var)> {
    let out = sr.forward(theta_n, lr)?;
    if out.dims() != hr.dims() {
        return Err(Error::Shape(format!("SR output {:?} vs HR {:?}", out.dims(), hr.dims())));
    }
    let mut terms: Vec<Var> = Vec::new();
    let mut term = |weight: f64, make: &dyn Fn(&Var) -> Result<Var>| -> Result<f64> {
        if weight == 0.0 {
            return Ok(make(&out.detach())?.item());
        }
        let v = make(&out)?;
        let value = v.item();
        terms.push(v.scale(weight)?);
        Ok(value)
    };
    let l1 = term(lambda.l1, &|o| Ok(o.sub(hr)?.abs()?.mean()?))?;
    let per = term(lambda.perceptual, &|o| perceptual.distance(o, hr))?;
    let adv = term(lambda.adv, &|o| adversarial_loss(&disc.forward(theta_d, o)?))?;
    let reg_var = if lambda.reg == 0.0 {
        mask_regularizer(&masks.iter().map(Var::detach).collect::<Vec<_>>())?
    } else {
        mask_regularizer(masks)?
    };
    let reg = reg_var.item();
    if lambda.reg != 0.0 {
        terms.push(reg_var.scale(lambda.reg)?);
    }
    let mut total = match terms.first() {
        Some(t) => t.clone(),
        None => Var::scalar(0.0),
    };
    for t in terms.iter().skip(1) {
        total = total.add(t)?;
    }
    let parts = LossParts { l1, perceptual: per, adv, reg, total: total.item() };
    for (name, v) in [("l1", l1), ("perceptual", per), ("adv", adv), ("reg", reg)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("outer loss component {name}")));
        }
    }
    Ok((total, parts, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meta::fixture::{models, noise};
    use facesr_grad::Tensor;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn face(seed: u64, m: Option<f64>) -> (Var, Var, Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lr = Var::constant(noise(3, 4, 4, &mut rng).to_tensor());
        let target = Var::constant(noise(3, 8, 8, &mut rng).to_tensor());
        let mask = match m {
            Some(v) => Tensor::full([1, 1, 8, 8], v),
            None => noise(1, 8, 8, &mut rng).to_tensor().reshape([1, 1, 8, 8]).unwrap(),
        };
        (lr, target, Var::constant(mask))
    }

    #[test]
    fn unit_mask_inner_loss_is_mean_abs_error() {
        let models = models();
        let theta = models.sr.init(1).constants();
        let (lr, target, m) = face(2, Some(1.0));
        let l = inner_loss(&models.sr, &theta, &lr, &target, &m).unwrap().item();
        let pred = models.sr.forward(&theta, &lr).unwrap();
        let want = pred.value().zip_map(target.value(), |a, b| (a - b).abs()).unwrap().mean();
        assert_eq!(l, want);
    }

    #[test]
    fn mask_of_wrong_size_is_rejected() {
        let models = models();
        let theta = models.sr.init(1).constants();
        let (lr, target, _) = face(2, None);
        let bad = Var::constant(Tensor::ones([1, 1, 4, 4]));
        assert!(inner_loss(&models.sr, &theta, &lr, &target, &bad).is_err());
    }

    #[test]
    fn pooling_one_face_is_the_plain_inner_loss() {
        let models = models();
        let theta = models.sr.init(3).constants();
        let f = face(4, None);
        let one = pooled_inner_loss(&models.sr, &theta, std::slice::from_ref(&f)).unwrap().item();
        assert_eq!(one, inner_loss(&models.sr, &theta, &f.0, &f.1, &f.2).unwrap().item());
        assert!(pooled_inner_loss(&models.sr, &theta, &[]).is_err());
    }

    #[test]
    fn regularizer_values() {
        let ones = Var::constant(Tensor::ones([1, 1, 3, 3]));
        assert_eq!(mask_regularizer(&[ones.clone()]).unwrap().item(), 0.0);
        let half = Var::constant(Tensor::full([1, 1, 2, 2], 0.5));
        // 9 zeros and 4 quarter-squares pooled over 13 pixels
        let r = mask_regularizer(&[ones, half]).unwrap().item();
        assert!((r - 4.0 * 0.25 / 13.0).abs() < 1e-15);
        assert_eq!(mask_regularizer(&[]).unwrap().item(), 0.0);
    }

    #[test]
    fn gan_losses_at_zero_logits() {
        let ln2 = std::f64::consts::LN_2;
        let z = Var::constant(Tensor::zeros([1, 1, 2, 2]));
        assert!((adversarial_loss(&z).unwrap().item() - ln2).abs() < 1e-15);
        let models = models();
        let theta_d = models.disc.init(0).constants();
        let img = Var::constant(Tensor::full([1, 3, 8, 8], 0.3));
        let d = discriminator_loss(&models.disc, &theta_d, &img, &img).unwrap().item();
        assert!((d - 2.0 * ln2).abs() < 1e-15);
    }

    #[test]
    fn outer_total_matches_weighted_parts() {
        let models = models();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let lr = Var::constant(noise(3, 8, 8, &mut rng).to_tensor());
        let hr = Var::constant(noise(3, 16, 16, &mut rng).to_tensor());
        let theta = models.sr.init(1).constants();
        let theta_d = models.disc.init(2).constants();
        let masks = [face(5, None).2];
        for lambda in [Lambdas::default(), Lambdas { perceptual: 0.0, adv: 0.0, ..Lambdas::default() }] {
            let (total, parts, _) =
                outer_loss(&models.sr, &models.perceptual, &models.disc, &theta, &theta_d, &lr, &hr, &masks, &lambda)
                    .unwrap();
            let want = weighted_total(parts.l1, parts.perceptual, parts.adv, parts.reg, &lambda);
            assert!((total.item() - want).abs() < 1e-12);
            assert!(parts.perceptual > 0.0 && parts.reg > 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn inner_loss_is_linear_in_the_mask(seed in 0u64..1000, k in 0.0f64..4.0) {
            let models = models();
            let theta = models.sr.init(seed).constants();
            let (lr, target, m) = face(seed, None);
            let base = inner_loss(&models.sr, &theta, &lr, &target, &m).unwrap().item();
            let scaled = inner_loss(&models.sr, &theta, &lr, &target, &m.scale(k).unwrap()).unwrap().item();
            prop_assert!((scaled - k * base).abs() <= 1e-12 * (1.0 + scaled.abs()));
            prop_assert!(base >= 0.0);
        }

        #[test]
        fn pooled_loss_is_the_size_weighted_mean(seed in 0u64..1000) {
            let models = models();
            let theta = models.sr.init(seed).constants();
            let (a, b) = (face(seed, None), face(seed + 1, None));
            let la = inner_loss(&models.sr, &theta, &a.0, &a.1, &a.2).unwrap().item();
            let lb = inner_loss(&models.sr, &theta, &b.0, &b.1, &b.2).unwrap().item();
            let pooled = pooled_inner_loss(&models.sr, &theta, &[a, b]).unwrap().item();
            prop_assert!((pooled - 0.5 * (la + lb)).abs() < 1e-12);
        }
    }
}
