use octpipe::backends::{OracleBackend, ThresholdBackend, Variant};
use octpipe::eval::{
    confusion, dice, dice_volume, run_experiment, score_case, segment_case, synth_phantom, Blob, ExperimentConfig,
    FluidSpec, Pooling,
};
use octpipe::patch_engine::{close_all, DepthMode};
use octpipe::preprocess::PreprocessConfig;
use octpipe::{Dims3, FluidClass, LabelVolume, Vendor, Volume};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_labels(rng: &mut ChaCha8Rng, d: Dims3, id: &str) -> LabelVolume {
    let data = (0..d.voxel_count()).map(|_| rng.random_range(0..4u8)).collect();
    LabelVolume::new(id, Volume::new(d, data).unwrap()).unwrap()
}

#[test]
fn confusion_matches_voxel_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = Dims3::new(16, 16, 4);
    let a = random_labels(&mut rng, d, "a");
    let b = random_labels(&mut rng, d, "b");
    for cls in FluidClass::FLUIDS {
        let c = confusion(&a, &b, cls).unwrap();
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for z in 0..4 {
            for y in 0..16 {
                for x in 0..16 {
                    let (p, t) = (a.get(x, y, z) == cls, b.get(x, y, z) == cls);
                    tp += (p && t) as u64;
                    fp += (p && !t) as u64;
                    fn_ += (!p && t) as u64;
                }
            }
        }
        assert_eq!((c.tp, c.fp, c.fn_), (tp, fp, fn_));
        assert_eq!(c.total(), 1024);
    }
}

#[test]
fn single_ellipsoid_voxel_count() {
    let d = Dims3::new(64, 64, 8);
    let blob = Blob { class: FluidClass::Irf, center: [30.0, 33.0, 4.0], radii: [8.0, 8.0, 2.0] };
    let (_, labels) = synth_phantom(0, d, &FluidSpec { blobs: vec![blob] }, "e").unwrap();
    let mut expected = 0;
    for dz in -2i32..=2 {
        for dy in -8i32..=8 {
            for dx in -8i32..=8 {
                let r = (dx * dx) as f64 / 64.0 + (dy * dy) as f64 / 64.0 + (dz * dz) as f64 / 4.0;
                expected += (r <= 1.0) as usize;
            }
        }
    }
    assert_eq!(labels.class_counts()[1] as usize, expected);
    assert_eq!(labels.fluid_voxel_count(), expected);
}

#[test]
fn random_phantoms_survive_closing() {
    for seed in 0..6 {
        let d = Dims3::new(96, 80, 6);
        let spec = FluidSpec::random(seed, d, 2).unwrap();
        let (_, labels) = synth_phantom(seed, d, &spec, "c").unwrap();
        assert_eq!(close_all(&labels, 1).unwrap(), labels, "seed {seed}");
        for cls in FluidClass::FLUIDS {
            assert!(labels.class_counts()[cls.index()] > 0);
        }
    }
}

fn small_cfg(mode: DepthMode, variant: Variant, target: usize) -> ExperimentConfig {
    ExperimentConfig {
        preprocess: PreprocessConfig {
            target_2d: (target, target),
            target_vol: (target, target),
            ..PreprocessConfig::default()
        },
        patch: (32, 32),
        overlap: 0.5,
        depth_mode: mode,
        variant,
        ..ExperimentConfig::default()
    }
}

#[test]
fn oracle_pipeline_is_exact_in_every_mode() {
    let d = Dims3::new(64, 64, 6);
    let spec = FluidSpec::random(5, d, 1).unwrap();
    let (image, truth) = synth_phantom(5, d, &spec, "v").unwrap();
    let oracle = OracleBackend::new(truth.clone());
    for mode in [DepthMode::D2, DepthMode::D25_DEFAULT, DepthMode::D3] {
        for variant in [Variant::F, Variant::P] {
            // 96 upsamples, 64 keeps the native size
            for target in [64, 96] {
                let cfg = small_cfg(mode, variant, target);
                let (pred, t) = segment_case(&cfg, &oracle, &image, &truth).unwrap();
                assert_eq!(pred, t, "{mode} {variant} {target}");
                assert_eq!(dice_volume(&pred, &t).unwrap(), [1.0; 3]);
            }
        }
    }
}

#[test]
fn threshold_on_raw_phantom_matches_tally() {
    let d = Dims3::new(64, 64, 4);
    let spec = FluidSpec::random(8, d, 2).unwrap();
    let (image, truth) = synth_phantom(8, d, &spec, "t").unwrap();
    let backend = ThresholdBackend::<f32>::with_default_bands();
    let cfg = ExperimentConfig { closing_radius: 0, ..small_cfg(DepthMode::D2, Variant::P, 64) };
    let (pred, t) = segment_case(&cfg, &backend, &image, &truth).unwrap();
    // brute-force: classify the normalised intensity of every voxel
    let data = image.voxels.data();
    let (lo, hi) = data.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let expect: Vec<u8> = data.iter().map(|&v| backend.classify((v - lo) / (hi - lo))).collect();
    assert_eq!(pred.data(), expect.as_slice());
    let score = score_case(&cfg, &backend, Vendor::Cirrus, &image, &truth).unwrap();
    for (k, cls) in FluidClass::FLUIDS.into_iter().enumerate() {
        let c = confusion(&pred, &t, cls).unwrap();
        assert_eq!(score.counts[k], c);
        assert_eq!(score.dice()[k], dice(c));
    }
}

#[test]
fn experiment_rows_and_pooling() {
    let d = Dims3::new(64, 64, 4);
    let mut cases = std::collections::BTreeMap::new();
    let mut test = Vec::new();
    for (i, vendor) in [Vendor::Cirrus, Vendor::Cirrus, Vendor::Topcon].into_iter().enumerate() {
        let id = format!("vol{i}");
        let spec = FluidSpec::random(i as u64, d, 1).unwrap();
        cases.insert(id.clone(), synth_phantom(i as u64, d, &spec, &id).unwrap());
        test.push((vendor, id));
    }
    let load = |id: &str| Ok(cases[id].clone());
    let backend = ThresholdBackend::<f32>::with_default_bands();
    for variant in [Variant::F, Variant::P] {
        let cfg = small_cfg(DepthMode::D2, variant, 64);
        let res = run_experiment(&cfg, &backend, &test, load, 2).unwrap();
        assert_eq!(res.records.len(), 6);
        assert!(res.records.iter().all(|r| r.fold == 2 && r.model == "threshold" && r.variant == variant));
        let cirrus_irf = res.records.iter().find(|r| r.vendor == Vendor::Cirrus && r.fluid == FluidClass::Irf).unwrap();
        assert_eq!(cirrus_irf.n_volumes, 2);
        let mean = (res.scores[0].dice()[0] + res.scores[1].dice()[0]) / 2.0;
        assert_eq!(cirrus_irf.dice, mean);

        let micro = ExperimentConfig { pooling: Pooling::Micro, ..cfg };
        let res = run_experiment(&micro, &backend, &test, load, 2).unwrap();
        let c = res.scores[0].counts[0] + res.scores[1].counts[0];
        let r = res.records.iter().find(|r| r.vendor == Vendor::Cirrus && r.fluid == FluidClass::Irf).unwrap();
        assert_eq!(r.dice, dice(c));
    }
    let oracle = OracleBackend::from_volumes(cases.values().map(|(_, l)| l.clone()));
    let res = run_experiment(&small_cfg(DepthMode::D3, Variant::P, 64), &oracle, &test, load, 0).unwrap();
    assert!(res.records.iter().all(|r| r.dice == 1.0));
}

#[test]
fn failures_name_volume_and_stage() {
    let d = Dims3::new(64, 64, 4);
    let (image, _) = synth_phantom(0, d, &FluidSpec::empty(), "known").unwrap();
    let oracle = OracleBackend::from_volumes([]);
    let test = vec![(Vendor::Cirrus, "known".to_string())];
    let load = |_: &str| Ok((image.clone(), LabelVolume::zeros("known", d)));
    let err = run_experiment(&small_cfg(DepthMode::D2, Variant::P, 64), &oracle, &test, load, 0).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("known") && msg.contains("predict"), "{msg}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dice_symmetric_and_bounded(seed in any::<u64>(), w in 1usize..12, h in 1usize..12, z in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Dims3::new(w, h, z);
        let a = random_labels(&mut rng, d, "a");
        let b = random_labels(&mut rng, d, "b");
        let ab = dice_volume(&a, &b).unwrap();
        let ba = dice_volume(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        for (k, cls) in FluidClass::FLUIDS.into_iter().enumerate() {
            prop_assert!((0.0..=1.0).contains(&ab[k]));
            let c = confusion(&a, &b, cls).unwrap();
            prop_assert_eq!(c.total(), d.voxel_count() as u64);
            prop_assert_eq!(ab[k] == 1.0, c.fp == 0 && c.fn_ == 0);
        }
    }
}
