//! Geometric oracles for the imaging stack.

mod common;

use common::square_edge_iou;
use perturbforge::imaging::{load_image, preprocess_concat, resize_bilinear, save_image, ImageBuffer};

#[test]
fn white_square_on_black_matches_analytic_boundary() {
    let iou = square_edge_iou(32, 8, 24, 0.0, 1.0);
    assert!(iou >= 0.8, "IoU {iou}");
}

#[test]
fn square_iou_holds_across_sizes_and_contrasts() {
    for (size, lo, hi, bg, fill) in [
        (32usize, 8usize, 24usize, 0.0f32, 1.0f32),
        (48, 12, 36, 0.1, 0.9),
        (64, 16, 48, 0.0, 0.8),
    ] {
        let iou = square_edge_iou(size, lo, hi, bg, fill);
        assert!(iou >= 0.8, "IoU {iou} for size {size}");
    }
}

#[test]
fn png_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rt.png");
    let pixels: Vec<f32> = (0..8 * 8 * 3).map(|i| ((i * 37) % 256) as f32 / 255.0).collect();
    let img = ImageBuffer::new(8, 8, 3, pixels).unwrap();
    save_image(&img, &path).unwrap();
    let loaded = load_image(&path).unwrap();
    assert_eq!(img, loaded);
}

#[test]
fn truncated_png_is_a_decode_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.png");
    let img = ImageBuffer::filled(16, 16, 3, 0.5);
    save_image(&img, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    match load_image(&path) {
        Err(perturbforge::imaging::ImagingError::Decode { .. }) => {}
        other => panic!("expected decode error, got {other:?}"),
    }
}

#[test]
fn ppm_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rt.ppm");
    let pixels: Vec<f32> = (0..6 * 5 * 3).map(|i| ((i * 11) % 256) as f32 / 255.0).collect();
    let img = ImageBuffer::new(6, 5, 3, pixels).unwrap();
    save_image(&img, &path).unwrap();
    let loaded = load_image(&path).unwrap();
    assert_eq!(img, loaded);
}

#[test]
fn preprocess_edge_channel_is_binary_and_replicated() {
    let dir = tempfile::tempdir().unwrap();
    // Build a structured image so some edges fire after downscaling.
    let mut img = ImageBuffer::filled(400, 400, 3, 0.95);
    for strip in 0..6 {
        let y0 = 40 + strip * 56;
        for y in y0..y0 + 20 {
            for x in 40..360 {
                for c in 0..3 {
                    img.set(y, x, c, 0.05);
                }
            }
        }
    }
    let path = dir.path().join("structured.png");
    save_image(&img, &path).unwrap();
    let pre = preprocess_concat(&load_image(&path).unwrap()).unwrap();
    let bottom = &pre.pixels()[32 * 32 * 3..];
    assert!(bottom.iter().any(|&v| v == 1.0), "structured image must have edges");
    for px in bottom.chunks_exact(3) {
        assert!(px[0] == px[1] && px[1] == px[2], "edge channel replicated");
        assert!(px[0] == 0.0 || px[0] == 1.0, "edge channel binary");
    }
}

#[test]
fn downscale_of_block_replicated_image_is_exact() {
    // Each 32x32 cell of the 400x400 image is constant, and bilinear
    // sampling never crosses cell boundaries, so downscaling recovers the
    // small image bit for bit.
    let mut small = ImageBuffer::filled(32, 32, 3, 0.0);
    for y in 0..32 {
        for x in 0..32 {
            for c in 0..3 {
                small.set(y, x, c, ((y * 131 + x * 17 + c * 7) % 256) as f32 / 255.0);
            }
        }
    }
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
    let down = resize_bilinear(&big, 32, 32).unwrap();
    assert_eq!(down, small);
}
