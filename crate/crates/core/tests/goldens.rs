//! Frozen outputs of the degradation pipeline and the pseudo restorer.
//! Regenerate with `FACESR_BLESS=1 cargo test -p facesr-core --test goldens`.

use std::path::PathBuf;

use facesr_core::degrade::{resize, sample_spec, DistributionProfile, ResampleFilter};
use facesr_core::image::test_card;
use facesr_core::oracle::{restore, RestorerSpec, Support};
use facesr_core::Image;
use serde_json::{json, Value};

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/golden").join(name)
}

fn blessing() -> bool {
    std::env::var_os("FACESR_BLESS").is_some()
}

fn png_bytes(img: &Image) -> Vec<u8> {
    let mut out = Vec::new();
    img.encode_png(&mut out).unwrap();
    out
}

fn check(name: &str, png: &[u8], sidecar: &Value) {
    let (png_path, json_path) = (golden(&format!("{name}.png")), golden(&format!("{name}.json")));
    if blessing() {
        std::fs::create_dir_all(png_path.parent().unwrap()).unwrap();
        std::fs::write(&png_path, png).unwrap();
        std::fs::write(&json_path, serde_json::to_string_pretty(sidecar).unwrap() + "\n").unwrap();
        return;
    }
    let want = std::fs::read(&png_path).unwrap_or_else(|e| panic!("{}: {e}", png_path.display()));
    assert!(want == png, "{name}.png differs from the golden file");
    let text = std::fs::read_to_string(&json_path).unwrap();
    let want: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(&want, sidecar, "{name}.json");
}

#[test]
fn degrade_seed_42_on_the_test_card() {
    let profile = DistributionProfile::preset("iid", 4).unwrap();
    let spec = sample_spec(&profile, 42).unwrap();
    let lr = spec.apply(&test_card()).unwrap();
    assert_eq!(lr.dims(), (3, 16, 16));
    let png = png_bytes(&lr);
    // a second run must not differ by a single byte
    let again = png_bytes(&sample_spec(&profile, 42).unwrap().apply(&test_card()).unwrap());
    assert_eq!(png, again);
    check("degrade_iid_seed42", &png, &json!({ "preset": "iid", "seed": 42, "spec": spec }));
}

#[test]
fn restore_seed_7_strength_half_on_the_test_card() {
    let gt = test_card();
    let lr = resize(&gt, 16, 16, ResampleFilter::Bicubic).unwrap();
    let spec = RestorerSpec { strength: 0.5, seed: 7, ..RestorerSpec::default() };
    let r = restore(&spec, &lr, &gt).unwrap();
    let png = png_bytes(&r.bfr);
    let runs = r.support.runs();
    check(
        "oracle_seed7_strength05",
        &png,
        &json!({ "spec": spec, "height": 64, "width": 64, "support_runs": runs }),
    );
    if !blessing() {
        let sidecar: Value = serde_json::from_str(&std::fs::read_to_string(golden("oracle_seed7_strength05.json")).unwrap()).unwrap();
        let runs: Vec<(usize, usize)> = serde_json::from_value(sidecar["support_runs"].clone()).unwrap();
        assert_eq!(Support::from_runs(64, 64, &runs).unwrap(), r.support);
        let back = Image::read_png(&golden("oracle_seed7_strength05.png")).unwrap();
        assert_eq!(back, r.bfr.quantized());
    }
}
