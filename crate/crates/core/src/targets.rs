//! Anchors, label assignment and the box/yaw target codec.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{bev_iou_unchecked, wrap, BBox3D};
use crate::net::{ANCHORS_PER_CELL, REG_DIMS};
use crate::voxel::GridConfig;

pub const ANCHOR_YAWS: [f64; ANCHORS_PER_CELL] = [0.0, FRAC_PI_2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    pub yaw: f64,
}

impl Anchor {
    pub fn as_box(&self) -> BBox3D {
        BBox3D { x: self.x, y: self.y, z: self.z, w: self.w, l: self.l, h: self.h, yaw: self.yaw }
    }

    /// BEV diagonal, the normaliser for the planar offsets.
    pub fn diagonal(&self) -> f64 {
        (self.w * self.w + self.l * self.l).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorConfig {
    /// Prior `(w, l, h)` in meters.
    pub dims: [f64; 3],
    pub z: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig { dims: [1.9, 4.6, 1.7], z: -1.0 }
    }
}

/// How the seventh regression value encodes heading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YawMode {
    /// Sine of the residual plus a direction bin.
    #[default]
    SinBin,
    /// Plain wrapped residual, no direction bin.
    Direct,
}

/// Which gt a positive anchor regresses to when several qualify.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GtChoice {
    /// Highest IoU, then nearer center, then lower index.
    #[default]
    IouThenDistance,
    /// Nearer center, then higher IoU, then lower index.
    DistanceThenIou,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchConfig {
    pub iou_pos: f64,
    pub iou_neg: f64,
    /// Center-distance threshold in meters; `None` matches on IoU alone.
    pub dist_pos: Option<f64>,
    pub force_best: bool,
    pub gt_choice: GtChoice,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig { iou_pos: 0.35, iou_neg: 0.30, dist_pos: Some(0.5), force_best: true, gt_choice: GtChoice::default() }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.iou_neg) || !(0.0..=1.0).contains(&self.iou_pos) || self.iou_neg > self.iou_pos {
            return Err(Error::Config(format!("need 0 <= iou_neg <= iou_pos <= 1, got {} / {}", self.iou_neg, self.iou_pos)));
        }
        if let Some(d) = self.dist_pos {
            if !(d >= 0.0) {
                return Err(Error::Config(format!("dist_pos must be nonnegative, got {d}")));
            }
        }
        Ok(())
    }
}

/// Anchors in `(iy, ix, yaw)` order, matching the head layout.
pub fn generate_anchors(grid: &GridConfig, cfg: &AnchorConfig) -> Vec<Anchor> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut out = Vec::with_capacity(nx * ny * ANCHORS_PER_CELL);
    for iy in 0..ny {
        for ix in 0..nx {
            let x = grid.x_range[0] + (ix as f64 + 0.5) * grid.voxel_xy;
            let y = grid.y_range[0] + (iy as f64 + 0.5) * grid.voxel_xy;
            for yaw in ANCHOR_YAWS {
                out.push(Anchor { x, y, z: cfg.z, w: cfg.dims[0], l: cfg.dims[1], h: cfg.dims[2], yaw });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Positive,
    Negative,
    Ignore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetAssignment {
    pub labels: Vec<Label>,
    pub matched: Vec<Option<usize>>,
    /// Zero for anything but positives.
    pub reg: Vec<[f64; REG_DIMS]>,
    pub dir: Vec<u8>,
}

impl TargetAssignment {
    pub fn num_positive(&self) -> usize {
        self.labels.iter().filter(|l| **l == Label::Positive).count()
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().enumerate().filter(|(_, l)| **l == Label::Positive).map(|(i, _)| i)
    }
}

/// `(e, c_dir)` for a gt heading relative to an anchor heading.
pub fn encode_yaw(theta_gt: f64, theta_a: f64) -> (f64, u8) {
    let d = theta_gt - theta_a;
    let w = wrap(d);
    let bin = u8::from((-FRAC_PI_2..FRAC_PI_2).contains(&w));
    (d.sin(), bin)
}

pub fn encode_regression(gt: &BBox3D, a: &Anchor, mode: YawMode) -> Result<[f64; REG_DIMS]> {
    gt.validate()?;
    a.as_box().validate()?;
    let d = a.diagonal();
    let e = match mode {
        YawMode::SinBin => encode_yaw(gt.yaw, a.yaw).0,
        YawMode::Direct => wrap(gt.yaw - a.yaw),
    };
    Ok([
        (gt.x - a.x) / d,
        (gt.y - a.y) / d,
        (gt.z - a.z) / a.h,
        (gt.w / a.w).ln(),
        (gt.l / a.l).ln(),
        (gt.h / a.h).ln(),
        e,
    ])
}

/// Direction target under the given mode; always 0 in direct mode.
pub fn encode_dir(gt: &BBox3D, a: &Anchor, mode: YawMode) -> u8 {
    match mode {
        YawMode::SinBin => encode_yaw(gt.yaw, a.yaw).1,
        YawMode::Direct => 0,
    }
}

pub fn decode_yaw(theta_a: f64, e: f64, dir_prob: f64) -> f64 {
    let s = e.clamp(-1.0, 1.0).asin();
    if dir_prob >= 0.5 {
        wrap(theta_a + s)
    } else {
        wrap(theta_a + PI - s)
    }
}

pub fn decode_box(a: &Anchor, reg: &[f64], dir_prob: f64, mode: YawMode) -> BBox3D {
    let d = a.diagonal();
    let yaw = match mode {
        YawMode::SinBin => decode_yaw(a.yaw, reg[6], dir_prob),
        YawMode::Direct => wrap(a.yaw + reg[6]),
    };
    BBox3D {
        x: a.x + reg[0] * d,
        y: a.y + reg[1] * d,
        z: a.z + reg[2] * a.h,
        w: a.w * reg[3].exp(),
        l: a.l * reg[4].exp(),
        h: a.h * reg[5].exp(),
        yaw,
    }
}

fn half_diagonal(w: f64, l: f64) -> f64 {
    0.5 * (w * w + l * l).sqrt()
}

/// Label every anchor against the gt boxes.
///
/// Anchors must come from [`generate_anchors`] on `grid`; only cells near a
/// gt are visited, everything else is a negative.
pub fn match_anchors(
    anchors: &[Anchor],
    grid: &GridConfig,
    gts: &[BBox3D],
    cfg: &MatchConfig,
    mode: YawMode,
) -> Result<TargetAssignment> {
    cfg.validate()?;
    let (nx, ny) = (grid.nx(), grid.ny());
    if anchors.len() != nx * ny * ANCHORS_PER_CELL {
        return Err(Error::Shape(format!("{} anchors for a {nx}x{ny} grid", anchors.len())));
    }
    for g in gts {
        g.validate()?;
    }
    let n = anchors.len();
    let mut labels = vec![Label::Negative; n];
    let mut matched: Vec<Option<usize>> = vec![None; n];
    // (iou, dist) of the current preferred gt per anchor
    let mut best: Vec<Option<(f64, f64)>> = vec![None; n];
    let mut qualifies = vec![false; n];
    let mut forced: Vec<Option<(f64, usize)>> = vec![None; gts.len()];
    let dist_pos = cfg.dist_pos.unwrap_or(f64::NEG_INFINITY);

    for (j, g) in gts.iter().enumerate() {
        let reach = half_diagonal(g.w, g.l)
            + anchors.first().map(|a| half_diagonal(a.w, a.l)).unwrap_or(0.0)
            + dist_pos.max(0.0)
            + grid.voxel_xy;
        let cell = |v: f64, lo: f64, n: usize| -> (usize, usize) {
            let a = ((v - reach - lo) / grid.voxel_xy).floor().max(0.0) as usize;
            let b = (((v + reach - lo) / grid.voxel_xy).ceil().max(0.0) as usize).min(n);
            (a.min(n), b)
        };
        let (x0, x1) = cell(g.x, grid.x_range[0], nx);
        let (y0, y1) = cell(g.y, grid.y_range[0], ny);
        for iy in y0..y1 {
            for ix in x0..x1 {
                for k in 0..ANCHORS_PER_CELL {
                    let i = (iy * nx + ix) * ANCHORS_PER_CELL + k;
                    let ab = anchors[i].as_box();
                    let iou = bev_iou_unchecked(&ab, g);
                    let dist = (ab.x - g.x).hypot(ab.y - g.y);
                    let pos = iou >= cfg.iou_pos || dist <= dist_pos;
                    let not_neg = iou >= cfg.iou_neg || dist <= dist_pos;
                    if pos {
                        qualifies[i] = true;
                    } else if not_neg && labels[i] == Label::Negative {
                        labels[i] = Label::Ignore;
                    }
                    let better = match best[i] {
                        None => true,
                        Some((bi, bd)) => match cfg.gt_choice {
                            GtChoice::IouThenDistance => iou > bi || (iou == bi && dist < bd),
                            GtChoice::DistanceThenIou => dist < bd || (dist == bd && iou > bi),
                        },
                    };
                    if better {
                        best[i] = Some((iou, dist));
                        matched[i] = Some(j);
                    }
                    if iou > 0.0 && forced[j].is_none_or(|(fi, _)| iou > fi) {
                        forced[j] = Some((iou, i));
                    }
                }
            }
        }
    }
    for i in 0..n {
        if qualifies[i] {
            labels[i] = Label::Positive;
        }
    }
    if cfg.force_best {
        for (j, f) in forced.iter().enumerate() {
            if let Some((_, i)) = *f {
                if labels[i] != Label::Positive {
                    labels[i] = Label::Positive;
                    matched[i] = Some(j);
                }
            }
        }
    }
    let mut reg = vec![[0.0; REG_DIMS]; n];
    let mut dir = vec![0u8; n];
    for i in 0..n {
        if labels[i] == Label::Positive {
            let j = matched[i].expect("positive anchors carry a gt");
            reg[i] = encode_regression(&gts[j], &anchors[i], mode)?;
            dir[i] = encode_dir(&gts[j], &anchors[i], mode);
        } else {
            matched[i] = None;
        }
    }
    Ok(TargetAssignment { labels, matched, reg, dir })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_grid() -> GridConfig {
        GridConfig { x_range: [0.0, 0.4], y_range: [-0.2, 0.2], ..GridConfig::default() }
    }

    #[test]
    fn anchor_layout() {
        let grid = small_grid();
        let a = generate_anchors(&grid, &AnchorConfig::default());
        assert_eq!(a.len(), 8);
        assert_abs_diff_eq!(a[0].x, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(a[0].y, -0.1, epsilon = 1e-12);
        assert_eq!((a[0].yaw, a[1].yaw), (0.0, FRAC_PI_2));
        assert!(a.iter().all(|x| (x.w, x.l, x.h, x.z) == (1.9, 4.6, 1.7, -1.0)));
        // second cell along x
        assert_abs_diff_eq!(a[2].x, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(a[2].y, -0.1, epsilon = 1e-12);
        let full = generate_anchors(&GridConfig::default(), &AnchorConfig::default());
        assert_eq!(full.len(), 250 * 200 * 2);
    }

    #[test]
    fn yaw_codec_examples() {
        assert_eq!(encode_yaw(0.0, 0.0), (0.0, 1));
        let (e, c) = encode_yaw(PI, 0.0);
        assert_abs_diff_eq!(e, 0.0, epsilon = 1e-15);
        assert_eq!(c, 0);
        let (e, c) = encode_yaw(PI / 6.0, 0.0);
        assert_abs_diff_eq!(e, 0.5, epsilon = 1e-15);
        assert_eq!(c, 1);
        let (e, c) = encode_yaw(5.0 * PI / 6.0, 0.0);
        assert_abs_diff_eq!(e, 0.5, epsilon = 1e-15);
        assert_eq!(c, 0);
        assert_abs_diff_eq!(decode_yaw(0.0, 0.5, 1.0), PI / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(decode_yaw(0.0, 0.5, 0.0), 5.0 * PI / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn regression_examples() {
        let a = Anchor { x: 10.0, y: 0.0, z: -1.0, w: 3.0, l: 4.0, h: 1.5, yaw: 0.0 };
        let same = a.as_box();
        assert_eq!(encode_regression(&same, &a, YawMode::SinBin).unwrap(), [0.0; 7]);
        let wide = BBox3D { w: 6.0, ..same };
        assert_abs_diff_eq!(encode_regression(&wide, &a, YawMode::SinBin).unwrap()[3], 2f64.ln(), epsilon = 1e-15);
        let shifted = BBox3D { x: 11.0, ..same };
        assert_abs_diff_eq!(encode_regression(&shifted, &a, YawMode::SinBin).unwrap()[0], 0.2, epsilon = 1e-15);
        let flat = BBox3D { h: 0.0, ..same };
        assert!(encode_regression(&flat, &a, YawMode::SinBin).is_err());
        assert_eq!(decode_box(&a, &[0.0; 7], 1.0, YawMode::SinBin), same);
    }

    fn yaw_err(a: f64, b: f64) -> f64 {
        wrap(a - b).abs()
    }

    #[test]
    fn round_trip_yaw_grid() {
        for mode in [YawMode::SinBin, YawMode::Direct] {
            for yaw_a in ANCHOR_YAWS {
                let a = Anchor { x: 3.0, y: -1.0, z: -1.0, w: 1.9, l: 4.6, h: 1.7, yaw: yaw_a };
                for k in 0..360 {
                    let yaw = -PI + k as f64 * (2.0 * PI / 360.0);
                    let gt = BBox3D { x: 3.7, y: -0.4, z: -0.8, w: 2.1, l: 4.2, h: 1.5, yaw };
                    let r = encode_regression(&gt, &a, mode).unwrap();
                    let c = encode_dir(&gt, &a, mode);
                    let back = decode_box(&a, &r, c as f64, mode);
                    for (u, v) in back.as_array()[..6].iter().zip(&gt.as_array()[..6]) {
                        assert!((u - v).abs() < 1e-9);
                    }
                    assert!(yaw_err(back.yaw, yaw) < 1e-9, "mode {mode:?} yaw {yaw} anchor {yaw_a}");
                }
            }
        }
    }

    #[test]
    fn yaw_target_continuous_across_wrap() {
        for eps in [1e-3, 1e-6, 1e-9] {
            let (a, _) = encode_yaw(PI - eps, 0.0);
            let (b, _) = encode_yaw(-PI + eps, 0.0);
            assert!((a - b).abs() <= 2.0 * eps + 1e-15);
        }
        for k in 0..50 {
            let t = -3.0 + 0.13 * k as f64;
            let (a, c) = encode_yaw(t, 0.3);
            let (b, d) = encode_yaw(t + 2.0 * PI, 0.3);
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            assert_eq!(c, d);
        }
    }

    fn one_anchor_grid() -> (GridConfig, Vec<Anchor>) {
        let grid = GridConfig { x_range: [0.0, 0.2], y_range: [0.0, 0.2], ..GridConfig::default() };
        let anchors = generate_anchors(&grid, &AnchorConfig::default());
        (grid, anchors)
    }

    /// Solve for the yaw-0 anchor's gt offset (along x) giving a target IoU
    /// with a same-size axis-aligned gt.
    fn shifted_for_iou(a: &Anchor, iou: f64) -> f64 {
        // overlap length t over l: iou = t / (2l - t)
        let t = 2.0 * a.l * iou / (1.0 + iou);
        a.l - t
    }

    fn label_for(iou: Option<f64>, offset: [f64; 2]) -> Label {
        let (grid, anchors) = one_anchor_grid();
        let a = anchors[0];
        let dx = iou.map(|v| shifted_for_iou(&a, v)).unwrap_or(offset[0]);
        // shift along the anchor length axis (local x at yaw 0)
        let gt = BBox3D { x: a.x + dx, y: a.y + offset[1], z: a.z, w: a.w, l: a.l, h: a.h, yaw: 0.0 };
        let cfg = MatchConfig { force_best: false, ..MatchConfig::default() };
        match_anchors(&anchors, &grid, &[gt], &cfg, YawMode::SinBin).unwrap().labels[0]
    }

    #[test]
    fn threshold_bands() {
        let (_, anchors) = one_anchor_grid();
        let a = anchors[0];
        let gt_at = |dx: f64| BBox3D { x: a.x + dx, ..a.as_box() };
        let dx40 = shifted_for_iou(&a, 0.40);
        assert_abs_diff_eq!(bev_iou_unchecked(&a.as_box(), &gt_at(dx40)), 0.40, epsilon = 1e-9);
        assert_eq!(label_for(Some(0.40), [0.0, 0.0]), Label::Positive);
        // 0.32 IoU needs a shift of ~2.2 m along the 4.6 m axis: far, so ignore
        assert!(shifted_for_iou(&a, 0.32) > 0.5);
        assert_eq!(label_for(Some(0.32), [0.0, 0.0]), Label::Ignore);
        assert_eq!(label_for(Some(0.10), [0.0, 0.0]), Label::Negative);
        // low IoU but within the distance radius: a lateral shift of 0.4 m still
        // overlaps a lot, so use a gt of a different shape instead
        let (grid, anchors) = one_anchor_grid();
        let tiny = BBox3D { x: a.x + 0.4, y: a.y, z: a.z, w: 0.3, l: 0.3, h: 1.0, yaw: 0.0 };
        assert!(bev_iou_unchecked(&a.as_box(), &tiny) < 0.3);
        let cfg = MatchConfig { force_best: false, ..MatchConfig::default() };
        let t = match_anchors(&anchors, &grid, &[tiny], &cfg, YawMode::SinBin).unwrap();
        assert_eq!(t.labels[0], Label::Positive);
        let iou_only = MatchConfig { dist_pos: None, ..cfg };
        let t = match_anchors(&anchors, &grid, &[tiny], &iou_only, YawMode::SinBin).unwrap();
        assert_eq!(t.labels[0], Label::Negative);
    }

    #[test]
    fn forced_best_anchor() {
        let grid = GridConfig { x_range: [0.0, 4.0], y_range: [-2.0, 2.0], ..GridConfig::default() };
        let anchors = generate_anchors(&grid, &AnchorConfig::default());
        // small, off-grid object: no anchor clears 0.35 or is within 0.5 m
        let gt = BBox3D { x: 2.03, y: 0.05, z: -1.0, w: 0.5, l: 0.6, h: 1.0, yaw: 0.3 };
        let cfg = MatchConfig { dist_pos: None, ..MatchConfig::default() };
        let t = match_anchors(&anchors, &grid, &[gt], &cfg, YawMode::SinBin).unwrap();
        assert_eq!(t.num_positive(), 1);
        let p = t.positives().next().unwrap();
        assert_eq!(t.matched[p], Some(0));
        let unforced = MatchConfig { force_best: false, ..cfg };
        let t = match_anchors(&anchors, &grid, &[gt], &unforced, YawMode::SinBin).unwrap();
        assert_eq!(t.num_positive(), 0);
    }

    /// Brute-force labelling without the local window.
    fn brute_labels(anchors: &[Anchor], gts: &[BBox3D], cfg: &MatchConfig) -> Vec<(Label, Option<usize>)> {
        let dp = cfg.dist_pos.unwrap_or(f64::NEG_INFINITY);
        let mut out: Vec<(Label, Option<usize>)> = anchors
            .iter()
            .map(|a| {
                let ab = a.as_box();
                let s: Vec<(f64, f64)> = gts.iter().map(|g| (bev_iou_unchecked(&ab, g), (ab.x - g.x).hypot(ab.y - g.y))).collect();
                let pos = s.iter().any(|(i, d)| *i >= cfg.iou_pos || *d <= dp);
                let neg = s.iter().all(|(i, d)| *i < cfg.iou_neg && *d > dp);
                let label = if pos { Label::Positive } else if neg { Label::Negative } else { Label::Ignore };
                let mut m = None;
                if label == Label::Positive {
                    let mut bi = 0usize;
                    for j in 1..s.len() {
                        if s[j].0 > s[bi].0 || (s[j].0 == s[bi].0 && s[j].1 < s[bi].1) {
                            bi = j;
                        }
                    }
                    m = Some(bi);
                }
                (label, m)
            })
            .collect();
        if cfg.force_best {
            for (j, g) in gts.iter().enumerate() {
                let mut best: Option<(f64, usize)> = None;
                for (i, a) in anchors.iter().enumerate() {
                    let iou = bev_iou_unchecked(&a.as_box(), g);
                    if iou > 0.0 && best.is_none_or(|(b, _)| iou > b) {
                        best = Some((iou, i));
                    }
                }
                if let Some((_, i)) = best {
                    if out[i].0 != Label::Positive {
                        out[i] = (Label::Positive, Some(j));
                    }
                }
            }
        }
        out
    }

    #[test]
    fn windowed_matching_equals_brute_force() {
        use rand::{Rng, SeedableRng};
        let grid = GridConfig { x_range: [0.0, 8.0], y_range: [-4.0, 4.0], voxel_xy: 0.4, ..GridConfig::default() };
        let anchors = generate_anchors(&grid, &AnchorConfig::default());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..30 {
            let gts: Vec<BBox3D> = (0..rng.gen_range(0..4))
                .map(|_| BBox3D {
                    x: rng.gen_range(-1.0..9.0),
                    y: rng.gen_range(-5.0..5.0),
                    z: -1.0,
                    w: rng.gen_range(0.5..2.5),
                    l: rng.gen_range(0.5..5.0),
                    h: 1.5,
                    yaw: rng.gen_range(-PI..PI),
                })
                .collect();
            let cfg = MatchConfig::default();
            let t = match_anchors(&anchors, &grid, &gts, &cfg, YawMode::SinBin).unwrap();
            let b = brute_labels(&anchors, &gts, &cfg);
            for i in 0..anchors.len() {
                assert_eq!((t.labels[i], t.matched[i]), b[i], "anchor {i}");
            }
            for j in 0..gts.len() {
                let any_overlap = anchors.iter().any(|a| bev_iou_unchecked(&a.as_box(), &gts[j]) > 0.0);
                if any_overlap {
                    assert!(t.matched.iter().any(|m| *m == Some(j)) || t.positives().count() > 0);
                }
            }
        }
    }

    #[test]
    fn positives_encode_their_gt() {
        let grid = GridConfig { x_range: [0.0, 8.0], y_range: [-4.0, 4.0], ..GridConfig::default() };
        let anchors = generate_anchors(&grid, &AnchorConfig::default());
        let gt = BBox3D { x: 4.1, y: 0.3, z: -0.9, w: 1.8, l: 4.4, h: 1.6, yaw: 2.5 };
        let t = match_anchors(&anchors, &grid, &[gt], &MatchConfig::default(), YawMode::SinBin).unwrap();
        assert!(t.num_positive() > 0);
        for i in 0..anchors.len() {
            match t.labels[i] {
                Label::Positive => {
                    let back = decode_box(&anchors[i], &t.reg[i], t.dir[i] as f64, YawMode::SinBin);
                    assert!(yaw_err(back.yaw, gt.yaw) < 1e-9);
                    assert_abs_diff_eq!(back.x, gt.x, epsilon = 1e-9);
                }
                _ => {
                    assert_eq!(t.reg[i], [0.0; 7]);
                    assert!(t.matched[i].is_none());
                }
            }
        }
    }
}
