//! Geometric integration tests for ROI extraction: similarity
//! equivariance on smooth images and the batch CSV workflow.

use ddh::gray::encode_png;
use ddh::roi::{extract_roi, load_keypoint_csv, roi_frame, AxisMode, KeypointSet, RoiOptions, Vec2};
use ddh::tensor::Tensor;

/// A smooth synthetic scene, evaluated analytically so the transformed
/// image needs no resampling.
fn scene(x: f64, y: f64) -> f64 {
    0.5 + 0.2 * (0.11 * x).sin() * (0.07 * y).cos() + 0.15 * (0.031 * (x + 0.6 * y)).sin()
}

fn render<F: Fn(f64, f64) -> f64>(h: usize, w: usize, f: F) -> Tensor {
    let mut data = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            data[r * w + c] = f(c as f64 + 0.5, r as f64 + 0.5).clamp(0.0, 1.0);
        }
    }
    Tensor::from_vec(vec![h, w], data).unwrap()
}

fn palm_keypoints() -> KeypointSet {
    let pts = vec![
        Vec2::new(20.0, 40.0),
        Vec2::new(28.0, 34.0),
        Vec2::new(34.0, 31.0),
        Vec2::new(40.0, 30.0),
        Vec2::new(50.0, 28.0),
        Vec2::new(60.0, 28.0),
        Vec2::new(70.0, 30.0),
        Vec2::new(80.0, 28.0),
        Vec2::new(90.0, 28.0),
        Vec2::new(100.0, 30.0),
        Vec2::new(108.0, 31.0),
        Vec2::new(114.0, 34.0),
        Vec2::new(120.0, 40.0),
        Vec2::new(70.0, 120.0),
    ];
    KeypointSet::new(pts).unwrap()
}

#[test]
fn similarity_equivariance_within_resampling_error() {
    let pts = palm_keypoints();
    let image = render(160, 160, scene);
    let opts = RoiOptions { out_size: 64, ..Default::default() };
    let roi_a = extract_roi(&image, &pts, &opts).unwrap();

    let (theta, k) = (0.3f64, 1.15f64);
    let t = Vec2::new(26.0, 14.0);
    let (sin, cos) = theta.sin_cos();
    // image2 is the same scene under the forward similarity transform,
    // generated analytically via the inverse map
    let image_b = render(260, 260, |x, y| {
        let (ux, uy) = (x - t.x, y - t.y);
        let qx = (ux * cos + uy * sin) / k;
        let qy = (-ux * sin + uy * cos) / k;
        scene(qx, qy)
    });
    let pts_b = pts.transformed(theta, k, t);
    let roi_b = extract_roi(&image_b, &pts_b, &opts).unwrap();

    let mean_abs: f64 = roi_a
        .data()
        .iter()
        .zip(roi_b.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / roi_a.len() as f64;
    assert!(
        mean_abs < 0.02,
        "mean absolute difference {mean_abs} exceeds 0.02"
    );
}

#[test]
fn roi_values_in_unit_range_and_shape() {
    let pts = palm_keypoints();
    let image = render(160, 160, scene);
    for out_size in [32, 128] {
        let roi = extract_roi(&image, &pts, &RoiOptions { out_size, ..Default::default() }).unwrap();
        assert_eq!(roi.shape(), &[out_size, out_size]);
        assert!(roi.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn axis_mode_changes_orientation() {
    let pts = palm_keypoints();
    let primary = roi_frame(&pts, AxisMode::Primary).unwrap();
    let perp = roi_frame(&pts, AxisMode::Perpendicular).unwrap();
    assert!((primary.axis.dot(perp.axis)).abs() < 1e-9);
    assert!((primary.side - perp.side).abs() < 1e-12);
}

#[test]
fn csv_batch_extraction_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let image = render(160, 160, scene);
    let image_path = dir.path().join("palm.png");
    encode_png(&image, &image_path).unwrap();

    let pts = palm_keypoints();
    let coords: Vec<String> = pts
        .points()
        .iter()
        .flat_map(|p| [p.x.to_string(), p.y.to_string()])
        .collect();
    let csv_path = dir.path().join("labels.csv");
    std::fs::write(&csv_path, format!("palm.png,{}\n", coords.join(","))).unwrap();

    let records = load_keypoint_csv(&csv_path).unwrap();
    assert_eq!(records.len(), 1);
    let loaded = ddh::gray::decode_gray(dir.path().join(&records[0].image_path)).unwrap();
    let roi = extract_roi(
        &loaded,
        &records[0].keypoints,
        &RoiOptions { out_size: 32, ..Default::default() },
    )
    .unwrap();
    assert_eq!(roi.shape(), &[32, 32]);
}
