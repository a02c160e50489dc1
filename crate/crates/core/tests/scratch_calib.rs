//! TEMPORARY calibration harness; deleted once acceptance scales are frozen.

use std::time::Instant;

use fas_core::backbone::{write_random_backbone, FeatureExtractor};
use fas_core::fixture::{recapture, render_face, style_params};
use fas_core::ingest::AttackType;
use fas_core::style::{
    optimize_direct, perceptual_total, stylize, train_style_model, LossWeights, StyleConfig,
    StyleReference,
};
use fas_core::ImageBuffer;

fn extractor(dir: &std::path::Path) -> FeatureExtractor {
    let manifest = write_random_backbone(dir, 0).unwrap();
    FeatureExtractor::load_backbone(&manifest).unwrap()
}

fn faces(size: usize, subject: usize, video: &str, n: usize) -> Vec<ImageBuffer> {
    (0..n).map(|f| render_face(0, subject, video, f, size)).collect()
}

#[test]
#[ignore]
fn calib_5a_content_only() {
    let dir = tempfile::tempdir().unwrap();
    let ext = extractor(dir.path());
    let size = 128;
    // Corpus: 16 frames across 4 subjects/videos; held-out: 20 frames from
    // unseen videos.
    let mut corpus = Vec::new();
    for s in 0..4 {
        corpus.extend(faces(size, s, "train", 4));
    }
    let mut held_out = Vec::new();
    for s in 0..4 {
        held_out.extend(faces(size, s, "held", 5));
    }
    let weights = LossWeights { content: 1.0, style: 0.0, tv: 0.0 };
    let reference = StyleReference {
        style_id: "print-a".into(),
        image: corpus[0].clone(),
        attack_type: AttackType::Print,
    };
    for iterations in [150usize] {
        let config = StyleConfig {
            iterations,
            batch_size: 2,
            learning_rate: 1e-3,
            seed: 0,
            base_channels: 16,
        };
        let t0 = Instant::now();
        let model = train_style_model(&reference, &corpus, &ext, weights, &config).unwrap();
        let train_s = t0.elapsed().as_secs_f64();
        let mut mae_sum = 0.0;
        for img in &held_out {
            let out = stylize(&model, img).unwrap();
            let diff = (out.data() - img.data()).mapv(f64::abs);
            mae_sum += diff.mean().unwrap();
        }
        let mae = mae_sum / held_out.len() as f64;
        println!(
            "5a: iters {iterations} -> {train_s:.1}s ({:.2} s/iter), held-out MAE {mae:.4}, final loss {:.4}",
            train_s / iterations as f64,
            model.fingerprint.loss_trace.last().unwrap()
        );
    }
}

#[test]
#[ignore]
fn calib_5b_direct_vs_transform() {
    let dir = tempfile::tempdir().unwrap();
    let ext = extractor(dir.path());
    let size = 64;
    let mut corpus = Vec::new();
    for s in 0..4 {
        corpus.extend(faces(size, s, "train", 4));
    }
    let spoof_ref = recapture(&render_face(0, 0, "ref", 0, size), &style_params(0));
    let reference = StyleReference {
        style_id: "print-a".into(),
        image: spoof_ref,
        attack_type: AttackType::Print,
    };
    let weights = LossWeights::default();
    let config = StyleConfig {
        iterations: 200,
        batch_size: 2,
        learning_rate: 1e-3,
        seed: 0,
        base_channels: 16,
    };
    let t0 = Instant::now();
    let model = train_style_model(&reference, &corpus, &ext, weights, &config).unwrap();
    println!("5b: transform train {:.1}s", t0.elapsed().as_secs_f64());

    let images: Vec<ImageBuffer> = (0..3).map(|i| render_face(0, i, "eval", i, size)).collect();
    let direct_config = StyleConfig { iterations: 500, learning_rate: 1e-2, ..config };
    for (i, img) in images.iter().enumerate() {
        let t1 = Instant::now();
        let styled = stylize(&model, img).unwrap();
        let s_loss = perceptual_total(&styled, img, &reference, &ext, weights).unwrap().total;
        let (direct, trace) =
            optimize_direct(img, &reference, &ext, weights, &direct_config).unwrap();
        let d_loss = perceptual_total(&direct, img, &reference, &ext, weights).unwrap().total;
        println!(
            "5b img {i}: stylize loss {s_loss:.4}, direct loss {d_loss:.4} (ratio {:.2}), direct first/last {:.4}/{:.4}, {:.1}s",
            s_loss / d_loss,
            trace.first().unwrap(),
            trace.last().unwrap(),
            t1.elapsed().as_secs_f64()
        );
    }
}
