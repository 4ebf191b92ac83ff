use std::f64::consts::PI;

use voxfuse_web::{bev_view, heading_probe, overlap_probe};

#[test]
fn bev_view_has_points_and_boxes() {
    let v = bev_view(3, "rain", 0).unwrap();
    assert!(v.frames > 1);
    assert!(!v.lidar.is_empty());
    assert!(!v.boxes.is_empty());
    assert!(bev_view(3, "fog", 0).is_err());
    // frame index past the end clamps to the last frame
    assert!(bev_view(3, "clear", 999).is_ok());
}

#[test]
fn overlap_probe_values() {
    let a = [0.0, 0.0, 1.0, 1.0, 0.0];
    assert!((overlap_probe(a, a).unwrap().iou - 1.0).abs() < 1e-12);
    assert!((overlap_probe(a, [0.5, 0.0, 1.0, 1.0, 0.0]).unwrap().iou - 1.0 / 3.0).abs() < 1e-12);
    assert!(overlap_probe(a, [0.0, 0.0, -1.0, 1.0, 0.0]).is_err());
}

#[test]
fn heading_probe_recovers_every_heading() {
    let p = heading_probe(PI / 2.0, 90);
    assert_eq!(p.yaw.len(), 90);
    for (y, d) in p.yaw.iter().zip(&p.decoded) {
        let e = (y - d + PI).rem_euclid(2.0 * PI) - PI;
        assert!(e.abs() < 1e-9);
    }
    assert!(p.sine.iter().all(|s| s.abs() <= 1.0));
}
