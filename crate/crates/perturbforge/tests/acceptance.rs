//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! (run with `--nocapture` to see them stream).
//!
//! Criteria that need trained models share one lazily-built fixture: a
//! synthetic desk corpus plus the three checkpoints (base CNN, surrogate
//! CNN, inverted CNN), a fitted universal perturbation, two timed C&W runs,
//! and a full pipeline pass.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use once_cell::sync::Lazy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use perturbforge::attacks::{
    apply_perturbation, cw_l2, fgsm, run_transfer_evaluation, universal_perturbation, CwConfig,
    FgsmConfig, PerturbationArtifact, TransferExample, UniversalConfig, UniversalStats,
};
use perturbforge::corpus::{
    generate_synthetic_corpus, split_corpus, CorpusManifest, Label, Split, SyntheticSpec,
};
use perturbforge::evaluation::{
    accuracy, average_cam_heatmap, mann_whitney_u, roc_auc, spam_score,
};
use perturbforge::imaging::{canny_zero_param, load_image, ImageBuffer};
use perturbforge::inceptionism::{cam_to_mask, grad_cam};
use perturbforge::nn::{
    build_classifier, build_surrogate, gradient_wrt_input, prepare_input, split_params, train,
    Activation, Arch, InputMode, LayerSpec, Model, ModelSpec, TrainConfig,
};
use perturbforge::pipeline::{
    build_adversarial_corpus, stage_timings, PipelineConfig, PipelineOutput,
};

const XI: f32 = 64.0 / 255.0;

fn verdict(n: u32, name: &str, ok: bool, detail: String) {
    println!(
        "[criterion {n:02}] {} — {name}: {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {n:02} ({name}): {detail}");
}

struct Fixture {
    root: PathBuf,
    manifest: CorpusManifest,
    base: Model,
    surrogate: Model,
    artifact: PerturbationArtifact,
    stats: UniversalStats,
    universal_apply_secs: Vec<f64>,
    cw_secs: Vec<f64>,
    pipeline: PipelineOutput,
    pipe_dir: PathBuf,
    build_seconds: f64,
}

static FIXTURE: Lazy<Fixture> = Lazy::new(build_fixture);

fn train_model(spec: &ModelSpec, manifest: &CorpusManifest, epochs: usize, seed: u64) -> Model {
    let cfg = TrainConfig {
        epochs,
        batch_size: 16,
        learning_rate: 0.003.into(),
        momentum: 0.9.into(),
        seed,
    };
    Model::from_checkpoint(&train(spec, manifest, &cfg).unwrap()).unwrap()
}

fn build_fixture() -> Fixture {
    let started = Instant::now();
    let root = tempfile::tempdir().unwrap().keep();

    let spec = SyntheticSpec {
        spam_count: 48,
        ham_count: 48,
        image_size: 400,
        seed: 9,
        ..SyntheticSpec::default()
    };
    let manifest = generate_synthetic_corpus(&spec, root.join("corpus")).unwrap();
    let manifest = split_corpus(&manifest, 0.25, 9).unwrap();

    let surrogate = train_model(&build_surrogate(Arch::Cnn), &manifest, 10, 5);
    let base = train_model(&build_classifier(Arch::Cnn, [64, 32, 3]), &manifest, 12, 6);
    let mut inverted_spec = build_surrogate(Arch::Cnn);
    inverted_spec.labels_inverted = true;
    let inverted = train_model(&inverted_spec, &manifest, 10, 7);

    // Universal perturbation fit on the spam train split.
    let fit_set: Vec<(ImageBuffer, Label)> = manifest
        .select(Some(Split::Train), Some(Label::Spam))
        .iter()
        .map(|e| (load_image(manifest.resolve(e)).unwrap(), e.label))
        .collect();
    let ucfg = UniversalConfig {
        max_iterations: 40,
        xi: XI,
        seed: 9,
        ..UniversalConfig::default()
    };
    let (artifact, stats) = universal_perturbation(&surrogate, &fit_set, &ucfg).unwrap();

    // Timed universal application over the spam test split.
    let test_spam: Vec<ImageBuffer> = manifest
        .select(Some(Split::Test), Some(Label::Spam))
        .iter()
        .map(|e| load_image(manifest.resolve(e)).unwrap())
        .collect();
    let universal_apply_secs: Vec<f64> = test_spam
        .iter()
        .map(|img| {
            let t = Instant::now();
            let _ = apply_perturbation(img, &artifact.tensor).unwrap();
            t.elapsed().as_secs_f64()
        })
        .collect();

    // Two timed C&W runs at the Table-2 configuration.
    use rayon::prelude::*;
    let cw_secs: Vec<f64> = test_spam
        .iter()
        .take(2)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|img| {
            let t = Instant::now();
            let _ = cw_l2(&surrogate, img, Label::Spam, &CwConfig::default()).unwrap();
            t.elapsed().as_secs_f64()
        })
        .collect();

    // Full pipeline over every spam image.
    let pipe_dir = root.join("pipe");
    let mut pcfg = PipelineConfig::new(&pipe_dir);
    pcfg.universal = UniversalConfig {
        max_iterations: 40,
        xi: XI,
        seed: 9,
        ..UniversalConfig::default()
    };
    pcfg.seed = 9;
    let pipeline = build_adversarial_corpus(&base, &inverted, &surrogate, &manifest, &pcfg).unwrap();

    Fixture {
        root,
        manifest,
        base,
        surrogate,
        artifact,
        stats,
        universal_apply_secs,
        cw_secs,
        pipeline,
        pipe_dir,
        build_seconds: started.elapsed().as_secs_f64(),
    }
}

// ---------------------------------------------------------------------
// criterion 1: gradient correctness
// ---------------------------------------------------------------------

#[test]
fn acceptance_01_gradient_correctness() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (spec, params, x, class) = random_conditioned_net(&mut rng);
        worst = worst.max(network_max_rel_err(&spec, &params, &x, class));
    }
    let elapsed = started.elapsed().as_secs_f64();
    verdict(
        1,
        "gradient correctness",
        worst < 1e-4 && elapsed < 120.0,
        format!("max relative error {worst:.2e} over 100 networks in {elapsed:.1}s"),
    );
}

// ---------------------------------------------------------------------
// criterion 2: FGSM contract
// ---------------------------------------------------------------------

#[test]
fn acceptance_02_fgsm_contract() {
    let fx = &*FIXTURE;
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    let eps = 0.1f32;
    let cfg = FgsmConfig { epsilon: eps };
    let mut checked_equal = 0usize;
    let mut ok = true;
    let mut detail = String::new();
    for trial in 0..50 {
        let pixels: Vec<f32> = (0..400 * 400 * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let img = ImageBuffer::new(400, 400, 3, pixels).unwrap();
        let label = if trial % 2 == 0 { Label::Spam } else { Label::Ham };
        let grad = gradient_wrt_input(&fx.surrogate, &img.to_tensor(), label).unwrap();
        let adv = fgsm(&fx.surrogate, &img, label, &cfg).unwrap();
        for i in 0..img.pixels().len() {
            let d = adv.pixels()[i] - img.pixels()[i];
            if d.abs() > eps {
                ok = false;
                detail = format!("trial {trial}: |d| = {} > eps at {i}", d.abs());
                break;
            }
            let g = grad.data()[i];
            let unclipped = adv.pixels()[i] > 0.0 && adv.pixels()[i] < 1.0;
            if g != 0.0 && unclipped {
                // equality at f32 resolution: the sum x + eps rounds within
                // half an ulp of a value that can be close to 1
                if (d.abs() - eps).abs() > f32::EPSILON {
                    ok = false;
                    detail = format!("trial {trial}: unclipped step {} != eps at {i}", d.abs());
                    break;
                }
                checked_equal += 1;
            }
        }
        if !ok {
            break;
        }
    }

    // epsilon = 0 is the identity
    let img = ImageBuffer::filled(400, 400, 3, 0.5);
    let adv0 = fgsm(&fx.surrogate, &img, Label::Spam, &FgsmConfig { epsilon: 0.0 }).unwrap();
    if adv0 != img {
        ok = false;
        detail = "epsilon 0 must be the identity".into();
    }

    // bitwise-exact subcase on a power-of-two grid
    let spec = ModelSpec {
        arch: Arch::Mlp,
        input_shape: [4, 4, 1],
        input_mode: InputMode::Resize,
        class_count: 2,
        labels_inverted: false,
        layers: vec![
            LayerSpec::Flatten,
            LayerSpec::Dense {
                units: 2,
                activation: Activation::Linear,
            },
        ],
    };
    let weights: Vec<f32> = (0..34).map(|i| if i % 2 == 0 { 0.4 } else { -0.3 }).collect();
    let tiny = Model {
        spec: spec.clone(),
        params: split_params(&spec, &weights).unwrap(),
    };
    let x: Vec<f32> = (0..16).map(|i| (64 + (i * 7) % 128) as f32 / 256.0).collect();
    let tiny_img = ImageBuffer::new(4, 4, 1, x.clone()).unwrap();
    let adv = fgsm(&tiny, &tiny_img, Label::Spam, &FgsmConfig { epsilon: 0.125 }).unwrap();
    for i in 0..16 {
        if (adv.pixels()[i] - x[i]).abs() != 0.125 {
            ok = false;
            detail = format!("grid-aligned step not bitwise 0.125 at {i}");
        }
    }

    if ok {
        detail = format!("50 random inputs bounded; {checked_equal} unclipped coordinates at exactly eps");
    }
    verdict(2, "FGSM contract", ok, detail);
}

// ---------------------------------------------------------------------
// criterion 3: DeepFool affine oracle
// ---------------------------------------------------------------------

fn linear_model(h: usize, w: usize, weights: Vec<f32>) -> Model {
    let spec = ModelSpec {
        arch: Arch::Mlp,
        input_shape: [h, w, 1],
        input_mode: InputMode::Resize,
        class_count: 2,
        labels_inverted: false,
        layers: vec![
            LayerSpec::Flatten,
            LayerSpec::Dense {
                units: 2,
                activation: Activation::Linear,
            },
        ],
    };
    let params = split_params(&spec, &weights).unwrap();
    Model { spec, params }
}

#[test]
fn acceptance_03_deepfool_affine_oracle() {
    use perturbforge::attacks::{deepfool, DeepFoolConfig};
    let mut rng = ChaCha8Rng::seed_from_u64(3003);
    let mut worst = 0.0f64;
    for trial in 0..25 {
        let n = 6;
        let mut weights = vec![0.0f32; n * 2 + 2];
        let mut w_diff = vec![0.0f32; n];
        for i in 0..n {
            let wh: f32 = rng.gen_range(-1.0..1.0);
            let ws: f32 = rng.gen_range(-1.0..1.0);
            weights[i * 2] = wh;
            weights[i * 2 + 1] = ws;
            w_diff[i] = ws - wh;
        }
        let x: Vec<f32> = (0..n).map(|_| rng.gen_range(0.35..0.65)).collect();
        let f_target: f32 = rng.gen_range(0.05..0.25) * if trial % 2 == 0 { 1.0 } else { -1.0 };
        let dot: f32 = x.iter().zip(&w_diff).map(|(a, b)| a * b).sum();
        weights[n * 2 + 1] = f_target - dot;
        let model = linear_model(2, 3, weights);
        let img = ImageBuffer::new(2, 3, 1, x).unwrap();
        let label = if f_target > 0.0 { Label::Spam } else { Label::Ham };
        let outcome = deepfool(&model, &img, label, &DeepFoolConfig::default()).unwrap();
        let got: f64 = img
            .pixels()
            .iter()
            .zip(outcome.image.pixels())
            .map(|(&a, &b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm_w: f64 = w_diff.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        let expected = f_target.abs() as f64 / norm_w;
        worst = worst.max((got - expected).abs() / expected);
    }
    verdict(
        3,
        "DeepFool affine oracle",
        worst < 1e-4,
        format!("max relative deviation {worst:.2e} over 25 affine classifiers"),
    );
}

// ---------------------------------------------------------------------
// criterion 4: C&W toy oracle
// ---------------------------------------------------------------------

#[test]
fn acceptance_04_cw_toy_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4004);
    let trials = 20;
    let mut hits = 0;
    for _ in 0..trials {
        let mut weights = vec![0.0f32; 6];
        let w_diff = [rng.gen_range(0.5..1.5f32), rng.gen_range(-1.5..-0.5f32)];
        weights[1] = w_diff[0];
        weights[3] = w_diff[1];
        let x = [rng.gen_range(0.35..0.65f32), rng.gen_range(0.35..0.65f32)];
        let f_target: f32 = rng.gen_range(0.03..0.1);
        weights[5] = f_target - (x[0] * w_diff[0] + x[1] * w_diff[1]);
        let model = linear_model(1, 2, weights);
        let img = ImageBuffer::new(1, 2, 1, x.to_vec()).unwrap();
        let true_class = model.spec.class_index(Label::Spam);
        let outcome = cw_l2(&model, &img, Label::Spam, &CwConfig::default()).unwrap();
        if !outcome.success {
            continue;
        }
        let (pred, scores) = model.predict(&outcome.image.to_tensor()).unwrap();
        if pred == true_class || scores[1 - true_class] < scores[true_class] {
            continue;
        }
        // brute-force grid oracle
        let mut oracle = f64::INFINITY;
        let steps = 320;
        for dy in 0..=steps {
            for dx in 0..=steps {
                let d = [
                    -0.4 + 0.8 * dy as f32 / steps as f32,
                    -0.4 + 0.8 * dx as f32 / steps as f32,
                ];
                let cand = [x[0] + d[0], x[1] + d[1]];
                if cand.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    continue;
                }
                let c_img = ImageBuffer::new(1, 2, 1, cand.to_vec()).unwrap();
                let (p, _) = model.predict(&c_img.to_tensor()).unwrap();
                if p != true_class {
                    oracle =
                        oracle.min(((d[0] as f64).powi(2) + (d[1] as f64).powi(2)).sqrt());
                }
            }
        }
        let got: f64 = img
            .pixels()
            .iter()
            .zip(outcome.image.pixels())
            .map(|(&a, &b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        if got <= 1.2 * oracle {
            hits += 1;
        }
    }
    verdict(
        4,
        "C&W toy oracle",
        hits >= (trials * 9) / 10,
        format!("{hits}/{trials} seeds within 1.2x of the brute-force minimum"),
    );
}

// ---------------------------------------------------------------------
// criterion 5: universal contract
// ---------------------------------------------------------------------

#[test]
fn acceptance_05_universal_contract() {
    let fx = &*FIXTURE;
    let budget_ok = fx
        .stats
        .pass_linf
        .iter()
        .all(|&m| m <= XI + f32::EPSILON)
        && fx
            .artifact
            .tensor
            .data()
            .iter()
            .all(|v| v.abs() <= XI + f32::EPSILON);

    // One artifact shared by every application: save, reload, hash, and
    // verify applications reproduce bitwise from the single stored tensor.
    let path = fx.root.join("perturbations_check.uprt");
    fx.artifact.save(&path).unwrap();
    let reloaded = PerturbationArtifact::load(&path).unwrap();
    let mut shared_ok = reloaded.content_hash() == fx.artifact.content_hash();
    for entry in fx.manifest.select(Some(Split::Test), Some(Label::Spam)).iter().take(4) {
        let img = load_image(fx.manifest.resolve(entry)).unwrap();
        let a = apply_perturbation(&img, &fx.artifact.tensor).unwrap();
        let b = apply_perturbation(&img, &reloaded.tensor).unwrap();
        shared_ok &= a == b;
    }

    let fooling_ok = fx.stats.fooling_rate >= 0.8;
    verdict(
        5,
        "universal contract",
        budget_ok && shared_ok && fooling_ok,
        format!(
            "||v||inf <= {XI:.4} over {} passes, artifact hash {}, train fooling rate {:.3}",
            fx.stats.passes,
            fx.artifact.content_hash(),
            fx.stats.fooling_rate
        ),
    );
}

// ---------------------------------------------------------------------
// criterion 6: end-to-end directional reproduction
// ---------------------------------------------------------------------

fn manifest_accuracy(model: &Model, manifest: &CorpusManifest, label: Label) -> f64 {
    let entries = manifest.select(None, Some(label));
    let correct = entries
        .iter()
        .filter(|e| {
            let img = load_image(manifest.resolve(e)).unwrap();
            let (class, _) = model.predict_image(&img).unwrap();
            model.spec.label_of(class) == e.label
        })
        .count();
    correct as f64 / entries.len() as f64
}

#[test]
fn acceptance_06_pipeline_accuracy_drop() {
    let fx = &*FIXTURE;
    let clean = manifest_accuracy(&fx.surrogate, &fx.manifest, Label::Spam);
    let attacked = manifest_accuracy(&fx.surrogate, &fx.pipeline.manifest, Label::Spam);
    let ok = attacked <= 0.5 && clean >= 0.9 && fx.build_seconds < 1800.0;
    verdict(
        6,
        "pipeline accuracy drop",
        ok,
        format!(
            "surrogate spam accuracy {clean:.3} clean -> {attacked:.3} attacked; fixture built in {:.0}s",
            fx.build_seconds
        ),
    );
}

// ---------------------------------------------------------------------
// criterion 7: timing ratio
// ---------------------------------------------------------------------

#[test]
fn acceptance_07_timing_ratio() {
    let fx = &*FIXTURE;
    let mean_apply =
        fx.universal_apply_secs.iter().sum::<f64>() / fx.universal_apply_secs.len() as f64;
    let mean_cw = fx.cw_secs.iter().sum::<f64>() / fx.cw_secs.len() as f64;
    let ok = mean_apply <= 0.1 * mean_cw;
    verdict(
        7,
        "timing ratio",
        ok,
        format!(
            "universal application {mean_apply:.4}s vs C&W {mean_cw:.1}s per example (ratio {:.5})",
            mean_apply / mean_cw
        ),
    );
}

// ---------------------------------------------------------------------
// criterion 8: ROC/AUC
// ---------------------------------------------------------------------

#[test]
fn acceptance_08_roc_auc() {
    let fx = &*FIXTURE;
    // pair-counting equivalence
    let mut rng = ChaCha8Rng::seed_from_u64(8008);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(4..=200);
        let scores: Vec<f32> = (0..n).map(|_| rng.gen_range(0..50) as f32 / 50.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let curve = roc_auc(&scores, &labels).unwrap();
        worst = worst.max((curve.auc - auc_pair_oracle(&scores, &labels)).abs());
    }

    // attacked vs clean AUC on the surrogate
    let mut clean_scores = Vec::new();
    let mut clean_labels = Vec::new();
    for entry in fx.manifest.select(None, None) {
        let img = load_image(fx.manifest.resolve(entry)).unwrap();
        clean_scores.push(spam_score(&fx.surrogate, &img).unwrap());
        clean_labels.push(entry.label == Label::Spam);
    }
    let mut attacked_scores = Vec::new();
    let mut attacked_labels = Vec::new();
    for entry in fx.pipeline.manifest.select(None, Some(Label::Spam)) {
        let img = load_image(fx.pipeline.manifest.resolve(entry)).unwrap();
        attacked_scores.push(spam_score(&fx.surrogate, &img).unwrap());
        attacked_labels.push(true);
    }
    for entry in fx.manifest.select(None, Some(Label::Ham)) {
        let img = load_image(fx.manifest.resolve(entry)).unwrap();
        attacked_scores.push(spam_score(&fx.surrogate, &img).unwrap());
        attacked_labels.push(false);
    }
    let clean_auc = roc_auc(&clean_scores, &clean_labels).unwrap().auc;
    let attacked_auc = roc_auc(&attacked_scores, &attacked_labels).unwrap().auc;

    let ok = worst < 1e-9 && attacked_auc < clean_auc && attacked_auc <= 0.65;
    verdict(
        8,
        "ROC/AUC",
        ok,
        format!(
            "pair-count deviation {worst:.2e}; AUC clean {clean_auc:.3} -> attacked {attacked_auc:.3}"
        ),
    );
}

// ---------------------------------------------------------------------
// criterion 9: Mann-Whitney
// ---------------------------------------------------------------------

#[test]
fn acceptance_09_mann_whitney() {
    let mut rng = ChaCha8Rng::seed_from_u64(9009);
    let mut worst = 0.0f64;
    for total in 2..=8usize {
        for n1 in 1..total {
            for _ in 0..16 {
                let values: Vec<f32> =
                    (0..total).map(|_| rng.gen_range(0..6) as f32 / 2.0).collect();
                let (a, b) = values.split_at(n1);
                let r = mann_whitney_u(a, b).unwrap();
                let (u, p) = mw_enumeration_oracle(a, b);
                worst = worst
                    .max((r.u_statistic - u).abs())
                    .max((r.p_value - p).abs());
            }
        }
    }
    let pinned = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
    let pinned_ok =
        pinned.u_statistic == 0.0 && (pinned.p_value - 1.0 / 3.0).abs() < 1e-12;
    verdict(
        9,
        "Mann-Whitney exactness",
        worst < 1e-12 && pinned_ok,
        format!(
            "enumeration deviation {worst:.2e}; pinned case U = {}, p = {:.6}",
            pinned.u_statistic, pinned.p_value
        ),
    );
}

// ---------------------------------------------------------------------
// criterion 10: Canny
// ---------------------------------------------------------------------

#[test]
fn acceptance_10_canny() {
    let mut uniform_ok = true;
    for v in [0.0f32, 0.37, 1.0] {
        let img = ImageBuffer::filled(32, 32, 1, v);
        let edges = canny_zero_param(&img).unwrap();
        uniform_ok &= edges.pixels().iter().all(|&e| e == 0.0);
    }
    let iou_a = square_edge_iou(32, 8, 24, 0.0, 1.0);
    let iou_b = square_edge_iou(64, 16, 48, 0.0, 0.8);
    let ok = uniform_ok && iou_a >= 0.8 && iou_b >= 0.8;
    verdict(
        10,
        "Canny",
        ok,
        format!("uniform images edge-free; square IoU {iou_a:.3} (32px) and {iou_b:.3} (64px)"),
    );
}

// ---------------------------------------------------------------------
// criterion 11: heatmap shift
// ---------------------------------------------------------------------

#[test]
fn acceptance_11_heatmap_shift() {
    let fx = &*FIXTURE;
    let original = average_cam_heatmap(&fx.base, &fx.manifest, None).unwrap();
    let modified = average_cam_heatmap(&fx.base, &fx.pipeline.manifest, None).unwrap();
    let (vo, vm) = (original.spatial_variance(), modified.spatial_variance());
    verdict(
        11,
        "heatmap shift",
        vm < vo,
        format!("averaged CAM variance {vo:.5} original -> {vm:.5} modified"),
    );
}

// ---------------------------------------------------------------------
// criterion 12: CLI determinism
// ---------------------------------------------------------------------

fn run_cli(args: &[&str]) {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_perturbforge"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "cli {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Drive a small but complete run into `dir`.
fn deterministic_run(dir: &Path) {
    let out = dir.to_str().unwrap();
    run_cli(&["synth", "--spam", "8", "--ham", "8", "--seed", "3", "--test-fraction", "0.25", "--out", out]);
    let manifest = dir.join("corpus/manifest.jsonl");
    let m = manifest.to_str().unwrap();
    run_cli(&["train", "--manifest", m, "--arch", "cnn", "--surrogate", "--epochs", "2",
        "--batch-size", "8", "--learning-rate", "0.003", "--seed", "5", "--name", "surr", "--out", out]);
    run_cli(&["train", "--manifest", m, "--arch", "cnn", "--epochs", "2",
        "--batch-size", "8", "--learning-rate", "0.003", "--seed", "6", "--name", "base", "--out", out]);
    let surr = dir.join("checkpoints/surr.pfck");
    let base = dir.join("checkpoints/base.pfck");
    run_cli(&["attack", "--method", "fgsm", "--epsilon", "0.1",
        "--surrogate", surr.to_str().unwrap(), "--base", base.to_str().unwrap(),
        "--manifest", m, "--split", "test", "--seed", "4", "--out", out]);
    run_cli(&["eval", "--checkpoint", base.to_str().unwrap(), "--manifest", m,
        "--split", "test", "--name", "clean", "--out", out]);
}

/// Compare two files after masking the wall-clock column of report CSVs.
fn csv_without_seconds(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .map(|line| {
            let cols: Vec<&str> = line.split(',').collect();
            cols[..cols.len() - 1].join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn acceptance_12_cli_determinism() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    deterministic_run(dir_a.path());
    deterministic_run(dir_b.path());

    let mut compared = 0usize;
    let mut ok = true;
    let mut detail = String::new();
    // Every image, manifest, checkpoint, scores CSV, and ROC CSV byte-equal.
    let mut stack = vec![PathBuf::from("")];
    while let Some(rel) = stack.pop() {
        for entry in std::fs::read_dir(dir_a.path().join(&rel)).unwrap() {
            let entry = entry.unwrap();
            let rel_path = rel.join(entry.file_name());
            if entry.file_type().unwrap().is_dir() {
                stack.push(rel_path);
                continue;
            }
            let name = entry.file_name().to_string_lossy().to_string();
            let a = dir_a.path().join(&rel_path);
            let b = dir_b.path().join(&rel_path);
            if !b.is_file() {
                ok = false;
                detail = format!("{} missing from the second run", rel_path.display());
                break;
            }
            let equal = if name.ends_with("_report.csv") {
                // per-example wall times are the one timing-bearing column
                csv_without_seconds(&a) == csv_without_seconds(&b)
            } else if name.ends_with(".json") {
                // metadata carries timings and absolute paths by design
                continue;
            } else {
                std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap()
            };
            if !equal {
                ok = false;
                detail = format!("{} differs between runs", rel_path.display());
                break;
            }
            compared += 1;
        }
        if !ok {
            break;
        }
    }
    if ok {
        detail = format!("{compared} artifacts byte-identical across two seeded runs");
    }
    verdict(12, "CLI determinism", ok, detail);
}

// ---------------------------------------------------------------------
// fixture-backed invariants beyond the numbered criteria
// ---------------------------------------------------------------------

/// Base and surrogate agree label-for-label on at least 95% of a random
/// test set fed as 32x32 images (block-replicated up for the surrogate).
#[test]
fn surrogate_and_base_agree_on_downscaled_inputs() {
    let fx = &*FIXTURE;
    let entries = fx.manifest.select(Some(Split::Test), None);
    let mut agree = 0usize;
    for entry in &entries {
        let img = load_image(fx.manifest.resolve(entry)).unwrap();
        let small = perturbforge::imaging::resize_bilinear(&img, 32, 32).unwrap();
        let mut big = ImageBuffer::filled(400, 400, 3, 0.0);
        for y in 0..400 {
            for x in 0..400 {
                let sy = ((y as f64) / 12.5).floor() as usize;
                let sx = ((x as f64) / 12.5).floor() as usize;
                for c in 0..3 {
                    big.set(y, x, c, small.get(sy.min(31), sx.min(31), c));
                }
            }
        }
        let (b_class, _) = fx.base.predict_image(&small).unwrap();
        let (s_class, _) = fx.surrogate.predict_image(&big).unwrap();
        if fx.base.spec.label_of(b_class) == fx.surrogate.spec.label_of(s_class) {
            agree += 1;
        }
    }
    let rate = agree as f64 / entries.len() as f64;
    assert!(rate >= 0.95, "agreement {rate:.3} below 0.95");
}

/// Clean images pushed through the transfer path reproduce the base model's
/// clean accuracy.
#[test]
fn transfer_identity_reproduces_clean_accuracy() {
    let fx = &*FIXTURE;
    let entries = fx.manifest.select(Some(Split::Test), None);
    let examples: Vec<TransferExample> = entries
        .iter()
        .map(|entry| {
            let img = load_image(fx.manifest.resolve(entry)).unwrap();
            TransferExample {
                original_rel: entry.path.clone(),
                adversarial_rel: entry.path.clone(),
                original: img.clone(),
                adversarial: img,
                true_label: entry.label,
                surrogate_success: false,
                seconds: 0.0,
            }
        })
        .collect();
    let report = run_transfer_evaluation(&examples, &fx.base).unwrap();
    let direct = accuracy(&fx.base, &fx.manifest, Some(Split::Test)).unwrap();
    assert!(
        (report.aggregates.mean_accuracy - direct).abs() < 1e-9,
        "{} vs {direct}",
        report.aggregates.mean_accuracy
    );
    // identity attack: zero perturbation distance
    assert!(report.records.iter().all(|r| r.l2 == 0.0));
}

/// The finished corpus hurts the surrogate more than the natural-only stage.
#[test]
fn universal_stage_deepens_the_damage() {
    let fx = &*FIXTURE;
    let mut natural_correct = 0usize;
    let mut final_correct = 0usize;
    let mut n = 0usize;
    for record in fx.pipeline.records.iter().filter(|r| r.error.is_none()) {
        let natural = load_image(fx.pipe_dir.join(record.natural_only.as_ref().unwrap())).unwrap();
        let final_img = load_image(fx.pipe_dir.join(record.output.as_ref().unwrap())).unwrap();
        let (nc, _) = fx.surrogate.predict_image(&natural).unwrap();
        let (fc, _) = fx.surrogate.predict_image(&final_img).unwrap();
        natural_correct += (fx.surrogate.spec.label_of(nc) == Label::Spam) as usize;
        final_correct += (fx.surrogate.spec.label_of(fc) == Label::Spam) as usize;
        n += 1;
    }
    assert!(n > 0);
    assert!(
        final_correct < natural_correct,
        "natural-only {natural_correct}/{n} vs final {final_correct}/{n}"
    );
}

/// Per-stage mean timings decompose into (at most) the mean total.
#[test]
fn stage_timings_decompose() {
    let fx = &*FIXTURE;
    let means = stage_timings(&fx.pipeline.records).unwrap();
    let sum = means.cam + means.mask + means.natural + means.universal_apply;
    assert!(
        sum <= means.total + 1e-3,
        "stage sum {sum} exceeds mean total {}",
        means.total
    );
    // desk-scale per-example budget
    assert!(means.total < 60.0, "mean per-example total {}s", means.total);
}

/// Every pipeline output is a valid 400x400x3 image and reproduces from the
/// stored natural intermediate plus the single universal artifact.
#[test]
fn pipeline_outputs_reconstruct_from_the_artifact() {
    let fx = &*FIXTURE;
    let artifact = fx.pipeline.artifact.as_ref().unwrap();
    assert_eq!(fx.pipeline.manifest.entries.len() + fx.pipeline.failures,
        fx.manifest.select(None, Some(Label::Spam)).len());
    for record in fx.pipeline.records.iter().filter(|r| r.error.is_none()).take(6) {
        let natural = load_image(fx.pipe_dir.join(record.natural_only.as_ref().unwrap())).unwrap();
        let stored = load_image(fx.pipe_dir.join(record.output.as_ref().unwrap())).unwrap();
        assert_eq!((stored.height(), stored.width(), stored.channels()), (400, 400, 3));
        let recomputed = apply_perturbation(&natural, &artifact.tensor).unwrap();
        // Both the natural intermediate and the stored output passed through
        // u8 quantization, costing up to half a level each.
        assert!(recomputed.linf_distance(&stored) <= 1.0 / 255.0 + 1e-6);
    }
}

/// Regions where the CAM is at or above the threshold stay pixel-identical
/// between the spam image and its natural-perturbed version.
#[test]
fn high_activation_regions_are_left_intact() {
    let fx = &*FIXTURE;
    let mut checked_pixels = 0usize;
    for record in fx.pipeline.records.iter().filter(|r| r.error.is_none()).take(4) {
        let entry = fx
            .manifest
            .entries
            .iter()
            .find(|e| e.path == record.original)
            .unwrap();
        let original = load_image(fx.manifest.resolve(entry)).unwrap();
        let natural = load_image(fx.pipe_dir.join(record.natural_only.as_ref().unwrap())).unwrap();
        let prepared = prepare_input(&fx.base.spec, &original).unwrap();
        let cam = grad_cam(&fx.base, &prepared).unwrap();
        let mask = cam_to_mask(&cam, 400, 400).unwrap();
        for y in 0..400 {
            for x in 0..400 {
                if mask.get(y, x, 0) == 0.0 {
                    for c in 0..3 {
                        assert_eq!(
                            original.get(y, x, c).to_bits(),
                            natural.get(y, x, c).to_bits(),
                            "high-CAM pixel ({y},{x},{c}) was modified"
                        );
                    }
                    checked_pixels += 1;
                }
            }
        }
    }
    assert!(checked_pixels > 0, "some high-activation pixels must exist");
}

/// The universal budget also holds for the pipeline's refit perturbation.
#[test]
fn pipeline_artifact_respects_the_budget() {
    let fx = &*FIXTURE;
    let artifact = fx.pipeline.artifact.as_ref().unwrap();
    let vmax = artifact
        .tensor
        .data()
        .iter()
        .map(|v| v.abs())
        .fold(0.0f32, f32::max);
    assert!(vmax <= XI + f32::EPSILON);
    assert_eq!(
        fx.pipeline.artifact_hash.as_deref(),
        Some(artifact.content_hash().as_str())
    );
}

/// Predict's scores are a probability vector and inference is pure.
#[test]
fn predict_is_pure_and_normalized() {
    let fx = &*FIXTURE;
    let entry = &fx.manifest.entries[0];
    let img = load_image(fx.manifest.resolve(entry)).unwrap();
    let x = prepare_input(&fx.base.spec, &img).unwrap();
    let (c1, s1) = fx.base.predict(&x).unwrap();
    let (c2, s2) = fx.base.predict(&x).unwrap();
    assert_eq!(c1, c2);
    assert_eq!(s1, s2);
    assert!((s1.iter().sum::<f32>() - 1.0).abs() <= 1e-6);
    assert!(s1.iter().all(|&p| (0.0..=1.0).contains(&p)));
}

/// The tensor engine invariant: a recorded pass replays bitwise, through a
/// production-size surrogate graph.
#[test]
fn surrogate_forward_replays_bitwise() {
    let fx = &*FIXTURE;
    let entry = &fx.manifest.entries[0];
    let img = load_image(fx.manifest.resolve(entry)).unwrap();
    let x = prepare_input(&fx.surrogate.spec, &img).unwrap();
    let mut tape = perturbforge::tensor::Tape::new();
    let input = tape.leaf(x);
    let nodes =
        perturbforge::nn::forward_graph(&fx.surrogate.spec, &fx.surrogate.params, &mut tape, input)
            .unwrap();
    let before: Vec<u32> = tape.value(nodes.logits).data().iter().map(|v| v.to_bits()).collect();
    tape.replay().unwrap();
    let after: Vec<u32> = tape.value(nodes.logits).data().iter().map(|v| v.to_bits()).collect();
    assert_eq!(before, after);
}
