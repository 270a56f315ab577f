use crcseg::calibrate::{calibrate, crc_condition, CalibrationArtifact, CalibrationConfig};
use crcseg::error::Error;
use crcseg::heatmap::{heatmap, HeatmapOptions};
use crcseg::io::{npy, split, Manifest, SplitSpec};
use crcseg::losses::LossSpec;
use crcseg::metrics::evaluate;
use crcseg::raster::RgbImage;
use crcseg::sets::lac_set;
use crcseg::synth::{generate, write_dataset, SynthConfig};
use crcseg::types::{Dims, GroundTruthMask, ScoreTensor, IGNORE};

fn small(n_images: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        dims: Dims::new(4, 16, 20).unwrap(),
        n_images,
        blob_count: 6,
        seed,
        ..Default::default()
    }
}

#[test]
fn files_to_heatmap() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(&small(40, 5)).unwrap();
    let manifest_path = write_dataset(dir.path().join("data"), &data).unwrap();
    let manifest = Manifest::read(&manifest_path).unwrap();
    let (cal, test) = split(&manifest, &SplitSpec { seed: 1, cal_fraction: 0.5 }).unwrap();
    assert_eq!((cal.len(), test.len()), (20, 20));

    let config = CalibrationConfig::new(0.2, LossSpec::Miscoverage);
    let artifact = calibrate(&cal.load(true).unwrap(), &config).unwrap();
    let path = dir.path().join("art.json");
    artifact.save(&path).unwrap();
    let reloaded = CalibrationArtifact::load(&path).unwrap();
    assert_eq!(reloaded, artifact);
    assert!(reloaded.lambda_hat > 0.0 && reloaded.lambda_hat < 1.0);

    let report = evaluate(&test.load(true).unwrap(), &reloaded).unwrap();
    assert_eq!(report.n_test, 20);
    assert!(report.activation_ratio >= 1.0 && report.activation_ratio <= 4.0);

    let scores = npy::read_scores(&test.entries[0].scores_path, true).unwrap();
    let z = lac_set(&scores, reloaded.lambda().unwrap(), reloaded.top1_fallback);
    let zpath = dir.path().join("z.npy");
    npy::write_multimask(&zpath, &z).unwrap();
    let z2 = npy::read_multimask(&zpath).unwrap();
    assert_eq!(z2, z);
    let img = heatmap(&z2, &HeatmapOptions::default(), None, None).unwrap();
    let hpath = dir.path().join("h.png");
    img.save(&hpath).unwrap();
    assert_eq!(RgbImage::load(&hpath).unwrap(), img);
    assert_eq!((img.width(), img.height()), (20, 16));
}

#[test]
fn calibrated_lambda_is_the_smallest_feasible() {
    let data = generate(&small(30, 8)).unwrap();
    for loss in [
        LossSpec::Miscoverage,
        LossSpec::Binary,
        LossSpec::BinaryThreshold { tau: 0.7 },
        LossSpec::WeightedMiscoverage { weights: vec![1.0, 2.0, 0.5, 1.0] },
    ] {
        let config = CalibrationConfig::new(0.25, loss.clone()).with_epsilon(1e-4);
        let art = calibrate(&data, &config).unwrap();
        art.check_invariants().unwrap();
        let at = |l: f64| art.risk_curve.iter().find(|s| s.lambda == l).map(|s| s.risk);
        assert!(crc_condition(at(art.lambda_hat).unwrap(), 30, 1.0, 0.25));
        if art.lambda_hat > 0.0 {
            // the largest probe below λ̂ fails, and it is within ε
            let below = art.risk_curve.iter().rev().find(|s| s.lambda < art.lambda_hat).unwrap();
            assert!(!crc_condition(below.risk, 30, 1.0, 0.25), "{loss}");
            assert!(art.lambda_hat - below.lambda <= 1e-4, "{loss}");
        }
    }
}

#[test]
fn ignored_pixels_do_not_count() {
    let d = Dims::new(3, 1, 4).unwrap();
    // pixel 3 is void and would be missed by any set
    let scores = ScoreTensor::new(
        d,
        vec![
            0.9, 0.9, 0.9, 0.0, //
            0.05, 0.05, 0.05, 0.0, //
            0.05, 0.05, 0.05, 1.0,
        ],
    )
    .unwrap();
    let mask = GroundTruthMask::new(d, vec![0, 0, 0, IGNORE]).unwrap();
    let set: Vec<_> = (0..20).map(|_| (scores.clone(), mask.clone())).collect();
    let art = calibrate(&set, &CalibrationConfig::new(0.05, LossSpec::Binary)).unwrap();
    assert_eq!(art.lambda_hat, 0.0);
    let report = evaluate(&set, &art).unwrap();
    assert_eq!(report.empirical_risk, 0.0);
    assert_eq!(report.activation_ratio, 1.0);
}

#[test]
fn infeasible_alpha_is_reported_before_work() {
    let data = generate(&small(10, 0)).unwrap();
    match calibrate(&data, &CalibrationConfig::new(0.05, LossSpec::Miscoverage)) {
        Err(Error::InfeasibleAlpha { n: 10, min_n: 19, min_alpha, .. }) => {
            assert!((min_alpha - 1.0 / 11.0).abs() < 1e-15)
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn mixed_class_counts_are_rejected() {
    let mut data = generate(&small(3, 0)).unwrap();
    let other = generate(&SynthConfig { dims: Dims::new(5, 16, 20).unwrap(), ..small(2, 0) }).unwrap();
    data.extend(other);
    assert!(matches!(
        calibrate(&data, &CalibrationConfig::new(0.5, LossSpec::Miscoverage)),
        Err(Error::DimensionMismatch { .. })
    ));
}
