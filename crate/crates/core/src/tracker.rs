//! Unscented Kalman tracking with greedy nearest-pair association, used to
//! fuse independent detection streams after the fact.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalmetrics::Detection;
use crate::geom::{wrap, BBox3D};

pub const STATE_DIM: usize = 9;
pub const MEAS_DIM: usize = 7;
const YAW: usize = 3;

pub type StateVec = SVector<f64, STATE_DIM>;
pub type StateCov = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type MeasVec = SVector<f64, MEAS_DIM>;
pub type MeasCov = SMatrix<f64, MEAS_DIM, MEAS_DIM>;

/// State layout: `x, y, z, yaw, w, l, h, vx, vy`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub id: u64,
    pub mean: StateVec,
    pub cov: StateCov,
    pub age: u32,
    pub hits: u32,
    pub misses: u32,
    pub time: f64,
    pub score_sum: f64,
    pub score_count: u32,
}

impl TrackState {
    pub fn from_detection(id: u64, d: &Detection, time: f64, init_var: &[f64; STATE_DIM]) -> Self {
        let b = d.bbox;
        let mean = StateVec::from_column_slice(&[b.x, b.y, b.z, wrap(b.yaw), b.w, b.l, b.h, 0.0, 0.0]);
        TrackState {
            id,
            mean,
            cov: StateCov::from_diagonal(&StateVec::from_column_slice(init_var)),
            age: 1,
            hits: 1,
            misses: 0,
            time,
            score_sum: d.score,
            score_count: 1,
        }
    }

    pub fn bbox(&self) -> BBox3D {
        let m = &self.mean;
        BBox3D { x: m[0], y: m[1], z: m[2], w: m[4], l: m[5], h: m[6], yaw: wrap(m[3]) }
    }

    pub fn score(&self) -> f64 {
        self.score_sum / self.score_count.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UkfConfig {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    /// Process noise variance per second, diagonal.
    pub q: [f64; STATE_DIM],
    /// Initial covariance diagonal of a new track.
    pub init_var: [f64; STATE_DIM],
    pub gate: f64,
    pub birth_hits: u32,
    pub death_misses: u32,
}

impl Default for UkfConfig {
    fn default() -> Self {
        UkfConfig {
            alpha: 1e-3,
            beta: 2.0,
            kappa: 0.0,
            q: [0.2, 0.2, 0.05, 0.1, 0.01, 0.01, 0.01, 2.0, 2.0],
            init_var: [0.5, 0.5, 0.5, 0.3, 0.1, 0.1, 0.1, 25.0, 25.0],
            gate: 2.0,
            birth_hits: 2,
            death_misses: 3,
        }
    }
}

impl UkfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.gate > 0.0) {
            return Err(Error::Config("alpha and gate must be positive".into()));
        }
        if self.q.iter().chain(&self.init_var).any(|v| !(*v > 0.0)) {
            return Err(Error::Config("process and initial variances must be positive".into()));
        }
        if self.birth_hits == 0 || self.death_misses == 0 {
            return Err(Error::Config("birth_hits and death_misses must be at least 1".into()));
        }
        Ok(())
    }
}

/// Lidar-like measurement variances for `x, y, z, yaw, w, l, h`.
pub const LIDAR_R: [f64; MEAS_DIM] = [0.05, 0.05, 0.05, 0.05, 0.02, 0.02, 0.02];

pub fn radar_r() -> [f64; MEAS_DIM] {
    LIDAR_R.map(|v| 4.0 * v)
}

struct Weights {
    lambda: f64,
    wm0: f64,
    wc0: f64,
    wi: f64,
}

fn weights(cfg: &UkfConfig) -> Weights {
    let n = STATE_DIM as f64;
    let lambda = cfg.alpha * cfg.alpha * (n + cfg.kappa) - n;
    let wm0 = lambda / (n + lambda);
    Weights { lambda, wm0, wc0: wm0 + (1.0 - cfg.alpha * cfg.alpha + cfg.beta), wi: 0.5 / (n + lambda) }
}

fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

/// Mean-centered sigma point deltas: `[0, +cols, -cols]`.
fn sigma_deltas(cov: &StateCov, w: &Weights) -> Result<Vec<StateVec>> {
    let scaled = cov * (STATE_DIM as f64 + w.lambda);
    let l = scaled
        .cholesky()
        .ok_or_else(|| Error::Numeric("state covariance is not positive definite".into()))?
        .l();
    let mut out = Vec::with_capacity(2 * STATE_DIM + 1);
    out.push(StateVec::zeros());
    for i in 0..STATE_DIM {
        out.push(l.column(i).into_owned());
    }
    for i in 0..STATE_DIM {
        out.push(-l.column(i).into_owned());
    }
    Ok(out)
}

/// Weighted mean written as base + weighted deltas to avoid cancellation
/// between the large negative center weight and the rest.
fn ut_mean<const N: usize>(base: &SVector<f64, N>, pts: &[SVector<f64, N>], w: &Weights, yaw: usize) -> SVector<f64, N> {
    let mut acc = SVector::<f64, N>::zeros();
    for (i, p) in pts.iter().enumerate() {
        let mut d = p - base;
        d[yaw] = wrap(d[yaw]);
        acc += d * if i == 0 { w.wm0 } else { w.wi };
    }
    let mut m = base + acc;
    m[yaw] = wrap(m[yaw]);
    m
}

fn ut_cov<const N: usize, const M: usize>(
    a: &[SVector<f64, N>],
    ma: &SVector<f64, N>,
    ya: usize,
    b: &[SVector<f64, M>],
    mb: &SVector<f64, M>,
    yb: usize,
    w: &Weights,
) -> SMatrix<f64, N, M> {
    let mut c = SMatrix::<f64, N, M>::zeros();
    for (i, (p, q)) in a.iter().zip(b).enumerate() {
        let mut da = p - ma;
        da[ya] = wrap(da[ya]);
        let mut db = q - mb;
        db[yb] = wrap(db[yb]);
        c += da * db.transpose() * if i == 0 { w.wc0 } else { w.wi };
    }
    c
}

fn motion(x: &StateVec, dt: f64) -> StateVec {
    let mut y = *x;
    y[0] += x[7] * dt;
    y[1] += x[8] * dt;
    y
}

fn check_pd(cov: &StateCov) -> Result<()> {
    if cov.iter().any(|v| !v.is_finite()) || cov.cholesky().is_none() {
        return Err(Error::Numeric("covariance lost positive definiteness".into()));
    }
    Ok(())
}

pub fn ukf_predict(t: &TrackState, dt: f64, cfg: &UkfConfig) -> Result<TrackState> {
    if !(dt >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative time step {dt}")));
    }
    let w = weights(cfg);
    let chi: Vec<StateVec> = sigma_deltas(&t.cov, &w)?.iter().map(|d| motion(&(t.mean + d), dt)).collect();
    let mean = ut_mean(&chi[0], &chi, &w, YAW);
    let q = StateCov::from_diagonal(&StateVec::from_column_slice(&cfg.q)) * dt;
    let cov = symmetrize(&(ut_cov(&chi, &mean, YAW, &chi, &mean, YAW, &w) + q));
    check_pd(&cov)?;
    Ok(TrackState { mean, cov, time: t.time + dt, ..t.clone() })
}

fn observe(x: &StateVec) -> MeasVec {
    MeasVec::from_column_slice(&x.as_slice()[..MEAS_DIM])
}

pub fn measurement_of(b: &BBox3D) -> MeasVec {
    MeasVec::from_column_slice(&[b.x, b.y, b.z, wrap(b.yaw), b.w, b.l, b.h])
}

pub fn ukf_update(t: &TrackState, z: &BBox3D, r: &[f64; MEAS_DIM], cfg: &UkfConfig) -> Result<TrackState> {
    let zv = measurement_of(z);
    if zv.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("measurement"));
    }
    let w = weights(cfg);
    let chi: Vec<StateVec> = sigma_deltas(&t.cov, &w)?.iter().map(|d| t.mean + d).collect();
    let zs: Vec<MeasVec> = chi.iter().map(observe).collect();
    let zhat = ut_mean(&zs[0], &zs, &w, YAW);
    let s = symmetrize(&(ut_cov(&zs, &zhat, YAW, &zs, &zhat, YAW, &w) + MeasCov::from_diagonal(&MeasVec::from_column_slice(r))));
    let pxz = ut_cov(&chi, &t.mean, YAW, &zs, &zhat, YAW, &w);
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::Numeric("innovation covariance is not positive definite".into()))?;
    // K = Pxz S^-1, solved as S K^T = Pxz^T
    let k = chol.solve(&pxz.transpose()).transpose();
    let mut nu = zv - zhat;
    nu[YAW] = wrap(nu[YAW]);
    let mut mean = t.mean + k * nu;
    mean[YAW] = wrap(mean[YAW]);
    let cov = symmetrize(&(t.cov - k * s * k.transpose()));
    check_pd(&cov)?;
    Ok(TrackState { mean, cov, ..t.clone() })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Association {
    /// `(track index, detection index)`
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_dets: Vec<usize>,
}

/// Greedy globally-nearest pairs on BEV center distance within `gate`.
pub fn associate(tracks: &[TrackState], dets: &[Detection], gate: f64) -> Association {
    let mut pairs: Vec<(f64, u64, usize, usize)> = Vec::new();
    for (ti, t) in tracks.iter().enumerate() {
        for (di, d) in dets.iter().enumerate() {
            let dist = (t.mean[0] - d.bbox.x).hypot(t.mean[1] - d.bbox.y);
            if dist <= gate {
                pairs.push((dist, t.id, di, ti));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut t_used = vec![false; tracks.len()];
    let mut d_used = vec![false; dets.len()];
    let mut matches = Vec::new();
    for (_, _, di, ti) in pairs {
        if !t_used[ti] && !d_used[di] {
            t_used[ti] = true;
            d_used[di] = true;
            matches.push((ti, di));
        }
    }
    Association {
        matches,
        unmatched_tracks: (0..tracks.len()).filter(|i| !t_used[*i]).collect(),
        unmatched_dets: (0..dets.len()).filter(|i| !d_used[*i]).collect(),
    }
}

/// One confirmed track reported at a timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOutput {
    pub id: u64,
    pub det: Detection,
}

/// Stateful multi-stream tracker.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub cfg: UkfConfig,
    /// Measurement variances per stream.
    pub stream_r: Vec<[f64; MEAS_DIM]>,
    pub tracks: Vec<TrackState>,
    next_id: u64,
}

impl Tracker {
    pub fn new(cfg: UkfConfig, stream_r: Vec<[f64; MEAS_DIM]>) -> Result<Self> {
        cfg.validate()?;
        if stream_r.is_empty() || stream_r.iter().flatten().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("need at least one stream with positive measurement variances".into()));
        }
        Ok(Tracker { cfg, stream_r, tracks: Vec::new(), next_id: 0 })
    }

    /// Feed all streams of one timestep; returns the confirmed tracks that
    /// were observed in it.
    pub fn step(&mut self, time: f64, streams: &[Vec<Detection>]) -> Result<Vec<TrackOutput>> {
        if streams.len() != self.stream_r.len() {
            return Err(Error::Shape(format!("{} streams given, tracker has {}", streams.len(), self.stream_r.len())));
        }
        let mut seen = vec![false; self.tracks.len()];
        for (s, dets) in streams.iter().enumerate() {
            for t in &mut self.tracks {
                if time < t.time {
                    return Err(Error::Data(format!("timestamp {time} precedes track time {}", t.time)));
                }
                *t = ukf_predict(t, time - t.time, &self.cfg)?;
            }
            let a = associate(&self.tracks, dets, self.cfg.gate);
            for (ti, di) in a.matches {
                let t = &mut self.tracks[ti];
                *t = ukf_update(t, &dets[di].bbox, &self.stream_r[s], &self.cfg)?;
                t.score_sum += dets[di].score;
                t.score_count += 1;
                if ti < seen.len() {
                    seen[ti] = true;
                }
            }
            for di in a.unmatched_dets {
                self.tracks.push(TrackState::from_detection(self.next_id, &dets[di], time, &self.cfg.init_var));
                self.next_id += 1;
            }
        }
        let born = seen.len();
        for (i, t) in self.tracks.iter_mut().enumerate() {
            if i >= born {
                continue;
            }
            t.age += 1;
            if seen[i] {
                t.hits += 1;
                t.misses = 0;
            } else {
                t.misses += 1;
            }
        }
        let death = self.cfg.death_misses;
        self.tracks.retain(|t| t.misses < death);
        let birth = self.cfg.birth_hits;
        Ok(self
            .tracks
            .iter()
            .filter(|t| t.hits >= birth && t.misses == 0)
            .map(|t| TrackOutput { id: t.id, det: Detection { bbox: t.bbox(), score: t.score() } })
            .collect())
    }
}

/// Run the tracker over time-aligned streams: `streams[s][k]` holds the
/// detections of stream `s` at `times[k]`.
pub fn run_late_fusion(
    streams: &[Vec<Vec<Detection>>],
    times: &[f64],
    cfg: &UkfConfig,
    stream_r: &[[f64; MEAS_DIM]],
) -> Result<Vec<Vec<TrackOutput>>> {
    if streams.iter().any(|s| s.len() != times.len()) {
        return Err(Error::Shape("every stream needs one detection list per timestep".into()));
    }
    let mut tr = Tracker::new(cfg.clone(), stream_r.to_vec())?;
    let mut out = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let step: Vec<Vec<Detection>> = streams.iter().map(|s| s[k].clone()).collect();
        out.push(tr.step(t, &step)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn det_at(x: f64, y: f64, yaw: f64, score: f64) -> Detection {
        Detection { bbox: BBox3D { x, y, z: -1.0, w: 1.9, l: 4.6, h: 1.7, yaw }, score }
    }

    fn track(id: u64, x: f64, y: f64) -> TrackState {
        TrackState::from_detection(id, &det_at(x, y, 0.0, 0.5), 0.0, &UkfConfig::default().init_var)
    }

    #[test]
    fn predict_examples() {
        let cfg = UkfConfig::default();
        let t = track(0, 3.0, 4.0);
        let p = ukf_predict(&t, 1.0, &cfg).unwrap();
        assert!((p.mean[0] - 3.0).abs() < 1e-9 && (p.mean[1] - 4.0).abs() < 1e-9);
        assert!(p.cov.trace() > t.cov.trace());
        let mut moving = t.clone();
        moving.mean[7] = 1.0;
        let p = ukf_predict(&moving, 2.0, &cfg).unwrap();
        assert!((p.mean[0] - 5.0).abs() < 1e-9);
        assert!(ukf_predict(&t, -1.0, &cfg).is_err());
    }

    #[test]
    fn update_examples() {
        let cfg = UkfConfig::default();
        let t = track(0, 3.0, 4.0);
        let same = ukf_update(&t, &t.bbox(), &LIDAR_R, &cfg).unwrap();
        assert!((same.mean - t.mean).norm() < 1e-9);
        assert!(same.cov.trace() < t.cov.trace());
        let z = det_at(3.5, 3.8, 0.2, 1.0).bbox;
        let tight = ukf_update(&t, &z, &[1e-9; MEAS_DIM], &cfg).unwrap();
        let zv = measurement_of(&z);
        for i in 0..MEAS_DIM {
            assert!((tight.mean[i] - zv[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn yaw_innovation_wraps() {
        let cfg = UkfConfig::default();
        let mut t = track(0, 0.0, 0.0);
        t.mean[YAW] = 3.1;
        let z = det_at(0.0, 0.0, -3.1, 1.0).bbox;
        let u = ukf_update(&t, &z, &LIDAR_R, &cfg).unwrap();
        // the short way round crosses +-pi, not through zero
        assert!(u.mean[YAW].abs() > 3.0);
    }

    fn random_spd(rng: &mut ChaCha8Rng) -> StateCov {
        let a = StateCov::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        a * a.transpose() + StateCov::identity() * 0.1
    }

    fn linear_oracle_step(
        mean: &StateVec,
        cov: &StateCov,
        dt: f64,
        z: &MeasVec,
        r: &[f64; MEAS_DIM],
        cfg: &UkfConfig,
    ) -> (StateVec, StateCov, StateVec, StateCov) {
        let mut f = StateCov::identity();
        f[(0, 7)] = dt;
        f[(1, 8)] = dt;
        let q = StateCov::from_diagonal(&StateVec::from_column_slice(&cfg.q)) * dt;
        let mp = f * mean;
        let pp = f * cov * f.transpose() + q;
        let h = SMatrix::<f64, MEAS_DIM, STATE_DIM>::from_fn(|i, j| if i == j { 1.0 } else { 0.0 });
        let s = h * pp * h.transpose() + MeasCov::from_diagonal(&MeasVec::from_column_slice(r));
        let k = pp * h.transpose() * s.try_inverse().unwrap();
        let mu = mp + k * (z - h * mp);
        let pu = (StateCov::identity() - k * h) * pp;
        (mp, pp, mu, pu)
    }

    #[test]
    fn matches_linear_kalman_filter() {
        let cfg = UkfConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let cov = random_spd(&mut rng);
            let mut mean = StateVec::from_fn(|_, _| rng.gen_range(-2.0..2.0));
            mean[YAW] = rng.gen_range(-0.5..0.5);
            mean[4] += 3.0;
            mean[5] += 3.0;
            mean[6] += 3.0;
            let t = TrackState { mean, cov, ..track(0, 0.0, 0.0) };
            let dt = rng.gen_range(0.0..1.0);
            let z = MeasVec::from_fn(|i, _| mean[i] + rng.gen_range(-0.3..0.3));
            let (mp, pp, mu, pu) = linear_oracle_step(&mean, &cov, dt, &z, &LIDAR_R, &cfg);
            let p = ukf_predict(&t, dt, &cfg).unwrap();
            assert!((p.mean - mp).amax() < 1e-9);
            assert!((p.cov - pp).amax() < 1e-9, "{}", (p.cov - pp).amax());
            let zb = BBox3D { x: z[0], y: z[1], z: z[2], yaw: z[3], w: z[4], l: z[5], h: z[6] };
            let u = ukf_update(&p, &zb, &LIDAR_R, &cfg).unwrap();
            assert!((u.mean - mu).amax() < 1e-9);
            assert!((u.cov - pu).amax() < 1e-9);
        }
    }

    #[test]
    fn association_examples() {
        let tracks = vec![track(0, 0.0, 0.0), track(1, 10.0, 0.0)];
        let a = associate(&tracks, &[], 2.0);
        assert_eq!(a.unmatched_tracks, vec![0, 1]);
        let one = associate(&tracks[..1], &[det_at(0.3, 0.0, 0.0, 1.0)], 2.0);
        assert_eq!(one.matches, vec![(0, 0)]);
        // distances t0: d0=1, d1=5; t1: d0=4, d1=1.2
        let tracks = vec![track(0, 0.0, 0.0), track(1, 4.0, 3.0)];
        let dets = [det_at(1.0, 0.0, 0.0, 1.0), det_at(4.0, 1.8, 0.0, 1.0)];
        let a = associate(&tracks, &dets, 6.0);
        assert_eq!(a.matches, vec![(0, 0), (1, 1)]);
        let far = associate(&tracks, &[det_at(50.0, 0.0, 0.0, 1.0)], 2.0);
        assert_eq!(far.unmatched_dets, vec![0]);
    }

    fn cv_target(k: usize) -> Detection {
        let t = k as f64 * 0.5;
        det_at(5.0 + 2.0 * t, -1.0 + 0.5 * t, (0.5f64).atan2(2.0), 0.8)
    }

    fn tight() -> [f64; MEAS_DIM] {
        [1e-12; MEAS_DIM]
    }

    #[test]
    fn noise_free_target_converges() {
        let cfg = UkfConfig::default();
        let times: Vec<f64> = (0..6).map(|k| k as f64 * 0.5).collect();
        let stream: Vec<Vec<Detection>> = (0..6).map(|k| vec![cv_target(k)]).collect();
        let out = run_late_fusion(&[stream], &times, &cfg, &[tight()]).unwrap();
        assert!(out[0].is_empty());
        for (k, o) in out.iter().enumerate().skip(1) {
            assert_eq!(o.len(), 1);
            let b = o[0].det.bbox;
            let g = cv_target(k).bbox;
            assert!((b.x - g.x).hypot(b.y - g.y) < 1e-6);
            assert!((o[0].det.score - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn silence_and_duplicate_streams() {
        let cfg = UkfConfig::default();
        let times = [0.0, 0.5, 1.0];
        let out = run_late_fusion(&[vec![vec![]; 3]], &times, &cfg, &[LIDAR_R]).unwrap();
        assert!(out.iter().all(|o| o.is_empty()));

        let stream: Vec<Vec<Detection>> = (0..3).map(|k| vec![cv_target(k)]).collect();
        let single = run_late_fusion(std::slice::from_ref(&stream), &times, &cfg, &[tight()]).unwrap();
        let double = run_late_fusion(&[stream.clone(), stream], &times, &cfg, &[tight(), tight()]).unwrap();
        for (a, b) in single.iter().zip(&double) {
            assert_eq!(a.len(), b.len());
            for (p, q) in a.iter().zip(b) {
                assert_eq!(p.id, q.id);
                for (u, v) in p.det.bbox.as_array().iter().zip(q.det.bbox.as_array()) {
                    assert!((u - v).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn tracks_retire_and_ids_stay_unique() {
        let cfg = UkfConfig::default();
        let mut tr = Tracker::new(cfg, vec![LIDAR_R]).unwrap();
        tr.step(0.0, &[vec![det_at(0.0, 0.0, 0.0, 1.0)]]).unwrap();
        tr.step(0.5, &[vec![det_at(0.0, 0.0, 0.0, 1.0), det_at(20.0, 0.0, 0.0, 1.0)]]).unwrap();
        assert_eq!(tr.tracks.len(), 2);
        for k in 0..3 {
            tr.step(1.0 + k as f64 * 0.5, &[vec![]]).unwrap();
        }
        assert!(tr.tracks.is_empty());
        tr.step(3.0, &[vec![det_at(0.0, 0.0, 0.0, 1.0)]]).unwrap();
        assert_eq!(tr.tracks[0].id, 2);
    }

    #[test]
    fn covariance_stays_pd_on_random_walks() {
        let cfg = UkfConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = track(0, 0.0, 0.0);
        for _ in 0..1000 {
            t = ukf_predict(&t, rng.gen_range(0.0..0.5), &cfg).unwrap();
            if rng.gen_bool(0.7) {
                let b = t.bbox();
                let z = BBox3D { x: b.x + rng.gen_range(-1.0..1.0), y: b.y + rng.gen_range(-1.0..1.0), yaw: rng.gen_range(-3.2..3.2), ..b };
                t = ukf_update(&t, &z, &radar_r(), &cfg).unwrap();
            }
            let eig = t.cov.symmetric_eigenvalues();
            assert!(eig.min() > 0.0);
            assert!((t.cov - t.cov.transpose()).amax() == 0.0);
            assert!((-std::f64::consts::PI..std::f64::consts::PI).contains(&t.mean[YAW]));
        }
    }
}
