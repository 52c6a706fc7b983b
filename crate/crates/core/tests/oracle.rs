use facesr_core::degrade::{resize, ResampleFilter};
use facesr_core::image::test_card;
use facesr_core::oracle::{error_map, restore, CorruptionKind, RestorerSpec};
use facesr_core::Image;
use proptest::prelude::*;

/// Per-pixel channel mean of `|a - b|`.
fn abs_diff_means(a: &Image, b: &Image) -> Vec<f64> {
    let n = a.height() * a.width();
    (0..n).map(|i| (0..3).map(|c| (a.plane(c)[i] - b.plane(c)[i]).abs()).sum::<f64>() / 3.0).collect()
}

#[test]
fn identical_inputs_give_a_zero_map() {
    let img = test_card();
    let em = error_map(&img, &img).unwrap();
    assert_eq!(em.dims(), (1, 64, 64));
    assert!(em.data().iter().all(|&v| v == 0.0));
}

#[test]
fn two_pixel_differences_normalize_to_half_and_one() {
    let gt = Image::filled(3, 4, 4, 0.0);
    let mut bfr = gt.clone();
    for c in 0..3 {
        bfr.set(c, 1, 2, 0.2);
        bfr.set(c, 3, 0, 0.4);
    }
    let em = error_map(&gt, &bfr).unwrap();
    for y in 0..4 {
        for x in 0..4 {
            let want = match (y, x) {
                (1, 2) => 0.5,
                (3, 0) => 1.0,
                _ => 0.0,
            };
            assert_eq!(em.get(0, y, x), want, "({x}, {y})");
        }
    }
}

#[test]
fn channel_differences_are_averaged_first() {
    let gt = Image::filled(3, 1, 2, 0.0);
    let mut bfr = gt.clone();
    bfr.set(0, 0, 0, 0.3);
    bfr.set(1, 0, 1, 0.6);
    let em = error_map(&gt, &bfr).unwrap();
    assert_eq!(em.data(), &[0.5, 1.0]);
    assert!(error_map(&gt, &Image::filled(3, 2, 1, 0.0)).is_err());
}

#[test]
fn error_inside_support_grows_with_strength() {
    let gt = test_card();
    let lr = resize(&gt, 16, 16, ResampleFilter::Bicubic).unwrap();
    for kind in [CorruptionKind::LocalBlur, CorruptionKind::TextureSubstitution, CorruptionKind::LocalWarp] {
        let mut last = 0.0;
        for strength in [0.2, 0.5, 0.8] {
            let r = restore(&RestorerSpec { strength, kind, seed: 5, ..RestorerSpec::default() }, &lr, &gt).unwrap();
            // EM itself is scale free, so compare the differences it normalises
            let raw = abs_diff_means(&gt, &r.bfr);
            let inside: f64 = raw.iter().zip(&r.support.mask).filter(|(_, &m)| m).map(|(v, _)| v).sum();
            let mean = inside / r.support.count() as f64;
            assert!(mean >= last, "{kind:?} at {strength}: {mean} < {last}");
            last = mean;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn maps_peak_at_one_and_stay_in_the_support(seed in any::<u64>(), strength in 0.05f64..1.0, k in 0usize..3) {
        let kind = [CorruptionKind::LocalBlur, CorruptionKind::TextureSubstitution, CorruptionKind::LocalWarp][k];
        let gt = test_card();
        let lr = resize(&gt, 16, 16, ResampleFilter::Bicubic).unwrap();
        let spec = RestorerSpec { strength, kind, seed, regions: 2, region_size: [6, 14] };
        let r = restore(&spec, &lr, &gt).unwrap();
        prop_assert_eq!(&r, &restore(&spec, &lr, &gt).unwrap());
        let em = error_map(&gt, &r.bfr).unwrap();
        let max = em.data().iter().cloned().fold(0.0, f64::max);
        if r.bfr != gt {
            prop_assert_eq!(max, 1.0);
        }
        for (i, &v) in em.data().iter().enumerate() {
            prop_assert!((0.0..=1.0).contains(&v));
            if v > 0.0 {
                prop_assert!(r.support.mask[i]);
            }
        }
    }
}
