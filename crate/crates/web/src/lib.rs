//! Browser bindings. Each export is a thin wrapper over a plain function so
//! the logic is testable natively.

use serde::Serialize;
use voxfuse::geom::{bev_iou, BBox3D};
use voxfuse::scenegen::{generate_scene, sample_scene, WeatherMode};
use voxfuse::storage::DatasetConfig;
use voxfuse::targets::{decode_yaw, encode_yaw};
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct BevView {
    pub frames: usize,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    /// `[x, y, intensity]` per lidar return.
    pub lidar: Vec<[f64; 3]>,
    /// `[x, y, vx, vy]` per radar return.
    pub radar: Vec<[f64; 4]>,
    /// Four BEV corners per ground-truth box.
    pub boxes: Vec<[[f64; 2]; 4]>,
}

/// Top-down view of one frame of a sampled scene under the default sensors.
pub fn bev_view(seed: u64, weather: &str, frame: usize) -> Result<BevView, String> {
    let mode: WeatherMode = weather.parse().map_err(|e: voxfuse::Error| e.to_string())?;
    let dc = DatasetConfig::default();
    let spec = sample_scene(&dc.sampler, &dc.region, mode, seed).map_err(|e| e.to_string())?;
    let frames = generate_scene(&spec, &dc.sensors, &dc.region, &dc.weather).map_err(|e| e.to_string())?;
    let f = frames.get(frame.min(frames.len() - 1)).ok_or("scene has no frames")?;
    Ok(BevView {
        frames: frames.len(),
        x_range: dc.region.x_range,
        y_range: dc.region.y_range,
        lidar: f.lidar.iter().map(|p| [p.x, p.y, p.i]).collect(),
        radar: f.radar.iter().map(|p| [p.x, p.y, p.vx, p.vy]).collect(),
        boxes: f.gts.iter().map(BBox3D::bev_corners).collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct OverlapProbe {
    pub iou: f64,
    pub a: [[f64; 2]; 4],
    pub b: [[f64; 2]; 4],
}

/// Boxes as `[x, y, w, l, yaw]`.
pub fn overlap_probe(a: [f64; 5], b: [f64; 5]) -> Result<OverlapProbe, String> {
    let mk = |v: [f64; 5]| BBox3D { x: v[0], y: v[1], z: 0.0, w: v[2], l: v[3], h: 1.0, yaw: v[4] };
    let (ba, bb) = (mk(a), mk(b));
    let iou = bev_iou(&ba, &bb).map_err(|e| e.to_string())?;
    Ok(OverlapProbe { iou, a: ba.bev_corners(), b: bb.bev_corners() })
}

#[derive(Debug, Serialize)]
pub struct HeadingProbe {
    /// Sweep of gt headings over `[-pi, pi)`.
    pub yaw: Vec<f64>,
    /// Sine residual target per heading.
    pub sine: Vec<f64>,
    /// Direction bin per heading.
    pub bin: Vec<u8>,
    /// Raw residual target per heading, for contrast.
    pub raw: Vec<f64>,
    /// Heading recovered from the sine target and bin.
    pub decoded: Vec<f64>,
}

pub fn heading_probe(anchor_yaw: f64, samples: usize) -> HeadingProbe {
    let n = samples.max(2);
    let yaw: Vec<f64> = (0..n).map(|k| -std::f64::consts::PI + 2.0 * std::f64::consts::PI * k as f64 / n as f64).collect();
    let enc: Vec<(f64, u8)> = yaw.iter().map(|&t| encode_yaw(t, anchor_yaw)).collect();
    HeadingProbe {
        raw: yaw.iter().map(|t| t - anchor_yaw).collect(),
        decoded: enc.iter().map(|&(e, c)| decode_yaw(anchor_yaw, e, c as f64)).collect(),
        sine: enc.iter().map(|e| e.0).collect(),
        bin: enc.iter().map(|e| e.1).collect(),
        yaw,
    }
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = bevView)]
pub fn bev_view_js(seed: u32, weather: &str, frame: u32) -> Result<String, JsError> {
    to_js(bev_view(seed as u64, weather, frame as usize))
}

#[wasm_bindgen(js_name = overlapProbe)]
pub fn overlap_probe_js(a: &[f64], b: &[f64]) -> Result<String, JsError> {
    let arr = |v: &[f64]| -> Result<[f64; 5], String> { v.try_into().map_err(|_| format!("expected 5 numbers, got {}", v.len())) };
    to_js(arr(a).and_then(|a| arr(b).and_then(|b| overlap_probe(a, b))))
}

#[wasm_bindgen(js_name = headingProbe)]
pub fn heading_probe_js(anchor_yaw: f64, samples: u32) -> Result<String, JsError> {
    to_js(Ok(heading_probe(anchor_yaw, samples as usize)))
}
