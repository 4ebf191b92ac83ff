//! The subcommands. Every output file is a pure function of the config, the
//! seeds and the input directory.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use voxfuse::evalmetrics::{evaluate, write_metrics_csv, write_pr_csv, Detection, EvalResult, FrameResult};
use voxfuse::geom::BBox3D;
use voxfuse::net::checkpoint::{read_checkpoint, write_checkpoint};
use voxfuse::net::ParamStore;
use voxfuse::scenegen::{Frame, WeatherMode};
use voxfuse::storage::{config_hash, generate_dataset, load_split, read_manifest, read_scene, Manifest, SceneEntry, Split, TOOL_VERSION};
use voxfuse::targets::YawMode;
use voxfuse::tracker::{run_late_fusion, MEAS_DIM};
use voxfuse::trainer::{build_examples, train, write_curves_csv, EpochRecord, Modality, Pipeline};

use crate::config::{from_toml, RunConfig};
use crate::error::{CliError, CliResult};
use crate::plot::pr_svg;

fn ensure_empty_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        let nonempty = fs::read_dir(dir)?.next().is_some();
        if nonempty && !force {
            return Err(CliError::Config(format!("{} exists and is not empty; pass --force to overwrite", dir.display())));
        }
        if nonempty {
            fs::remove_dir_all(dir)?;
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn cmd_generate(cfg: &RunConfig, out: &Path, force: bool) -> CliResult<Manifest> {
    cfg.validate()?;
    ensure_empty_dir(out, force)?;
    Ok(generate_dataset(&cfg.dataset, out)?)
}

fn check_grid(cfg: &RunConfig, m: &Manifest) -> CliResult<()> {
    let g = &cfg.train.grid;
    if g.x_range != m.region.x_range || g.y_range != m.region.y_range {
        return Err(CliError::Config(format!(
            "grid x {:?} / y {:?} does not match the dataset region x {:?} / y {:?}",
            g.x_range, g.y_range, m.region.x_range, m.region.y_range
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub tool_version: String,
    pub config_hash: String,
    pub dataset_hash: String,
    pub modality: String,
    pub train_frames: usize,
    pub val_frames: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub initial_loss: f64,
    pub curves: Vec<EpochRecord>,
}

fn hash_bytes(cfg: &RunConfig) -> CliResult<[u8; 32]> {
    Ok(config_hash(cfg)?)
}

fn numeric(e: voxfuse::Error) -> CliError {
    match e {
        voxfuse::Error::Numeric(m) => CliError::Numeric(m),
        voxfuse::Error::NonFinite(m) => CliError::Numeric(m.to_string()),
        other => CliError::Core(other),
    }
}

pub fn cmd_train(cfg: &RunConfig, data: &Path, run: &Path, force: bool) -> CliResult<TrainReport> {
    cfg.validate()?;
    let manifest = read_manifest(data)?;
    check_grid(cfg, &manifest)?;
    ensure_empty_dir(run, force)?;
    let pipe = Pipeline::new(cfg.train.clone())?;
    let train_scenes = load_split(data, &manifest, Split::Train)?;
    let val_scenes = load_split(data, &manifest, Split::Val)?;
    let train_set = build_examples(&pipe, &train_scenes)?;
    let val_set = build_examples(&pipe, &val_scenes)?;
    let out = train(&pipe, &train_set, &val_set, None).map_err(numeric)?;
    let hash = hash_bytes(cfg)?;
    fs::write(run.join("config.toml"), cfg.to_toml()?)?;
    write_checkpoint(BufWriter::new(fs::File::create(run.join("best.ckpt"))?), &out.best, &hash)?;
    write_checkpoint(BufWriter::new(fs::File::create(run.join("last.ckpt"))?), &out.last, &hash)?;
    write_curves_csv(BufWriter::new(fs::File::create(run.join("curves.csv"))?), &out.curves)?;
    let report = TrainReport {
        tool_version: TOOL_VERSION.to_string(),
        config_hash: cfg.hash()?,
        dataset_hash: manifest.config_hash.clone(),
        modality: cfg.train.modality.label(),
        train_frames: train_set.len(),
        val_frames: val_set.len(),
        epochs_run: out.curves.len(),
        best_epoch: out.best_epoch,
        initial_loss: out.initial_loss,
        curves: out.curves,
    };
    fs::write(run.join("report.json"), serde_json::to_vec_pretty(&report).map_err(voxfuse::Error::from)?)?;
    Ok(report)
}

/// A trained run loaded back from disk.
pub struct Model {
    pub cfg: RunConfig,
    pub pipe: Pipeline,
    pub params: ParamStore,
}

pub fn load_model(run: &Path) -> CliResult<Model> {
    let text = fs::read_to_string(run.join("config.toml"))
        .map_err(|e| CliError::Data(format!("{}: {e}", run.join("config.toml").display())))?;
    let cfg = from_toml(&text)?;
    let ckpt = run.join("best.ckpt");
    let file = fs::File::open(&ckpt).map_err(|e| CliError::Data(format!("missing checkpoint {}: {e}", ckpt.display())))?;
    let (params, hash) = read_checkpoint(std::io::BufReader::new(file))?;
    if hash != hash_bytes(&cfg)? {
        return Err(CliError::Data(format!("{} was not written by the config in {}", ckpt.display(), run.display())));
    }
    let pipe = Pipeline::new(cfg.train.clone())?;
    Ok(Model { cfg, pipe, params })
}

/// Where detections come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetSource {
    Model,
    /// Ground truth fed back as detections with score 1.
    Oracle,
    /// No detections at all.
    Empty,
}

impl DetSource {
    fn name(self) -> &'static str {
        match self {
            DetSource::Model => "model",
            DetSource::Oracle => "oracle",
            DetSource::Empty => "empty",
        }
    }
}

fn in_region(m: &Manifest, gts: &[BBox3D]) -> Vec<BBox3D> {
    gts.iter().filter(|b| m.region.contains(b.x, b.y)).copied().collect()
}

fn scene_detections(source: DetSource, model: Option<&Model>, m: &Manifest, scene: &[Frame]) -> CliResult<Vec<Vec<Detection>>> {
    (0..scene.len())
        .map(|k| match (source, model) {
            (DetSource::Model, Some(md)) => Ok(md.pipe.infer_frame(&md.params, scene, k)?),
            (DetSource::Model, None) => Err(CliError::Config("model detections need a run directory".into())),
            (DetSource::Oracle, _) => Ok(in_region(m, &scene[k].gts).into_iter().map(|b| Detection { bbox: b, score: 1.0 }).collect()),
            (DetSource::Empty, _) => Ok(Vec::new()),
        })
        .collect()
}

/// Metrics over a split, overall and per weather mode.
#[derive(Debug, Clone)]
pub struct SplitEval {
    pub overall: Option<EvalResult>,
    pub by_weather: BTreeMap<&'static str, EvalResult>,
}

impl SplitEval {
    pub fn mean_ap(&self) -> f64 {
        self.overall.as_ref().map_or(f64::NAN, |r| r.mean_ap)
    }

    pub fn weather_ap(&self, w: WeatherMode) -> f64 {
        self.by_weather.get(w.name()).map_or(f64::NAN, |r| r.mean_ap)
    }
}

fn score(frames: &[FrameResult]) -> CliResult<Option<EvalResult>> {
    if frames.iter().all(|f| f.gts.is_empty()) {
        return Ok(None);
    }
    Ok(Some(evaluate(frames)?))
}

fn split_eval(groups: Vec<(WeatherMode, Vec<FrameResult>)>) -> CliResult<SplitEval> {
    let mut by_weather = BTreeMap::new();
    for w in WeatherMode::ALL {
        let frames: Vec<FrameResult> = groups.iter().filter(|(g, _)| *g == w).flat_map(|(_, f)| f.clone()).collect();
        if let Some(r) = score(&frames)? {
            by_weather.insert(w.name(), r);
        }
    }
    let all: Vec<FrameResult> = groups.into_iter().flat_map(|(_, f)| f).collect();
    Ok(SplitEval { overall: score(&all)?, by_weather })
}

fn write_eval(out: &Path, ev: &SplitEval, header: &[(&str, String)], title: &str) -> CliResult<()> {
    fs::create_dir_all(out)?;
    let mut csv = Vec::new();
    match &ev.overall {
        Some(r) => write_metrics_csv(&mut csv, r)?,
        None => csv.extend_from_slice(b"metric,value\nmean_ap,nan\n"),
    }
    for (k, v) in header {
        csv.extend_from_slice(format!("{k},{v}\n").as_bytes());
    }
    fs::write(out.join("metrics.csv"), csv)?;
    let mut by = String::from("weather,mean_ap,aoe,aoe_count\n");
    for (w, r) in &ev.by_weather {
        by.push_str(&format!("{w},{:.9},{:.9},{}\n", r.mean_ap, r.aoe, r.aoe_count));
    }
    fs::write(out.join("metrics_by_weather.csv"), by)?;
    if let Some(r) = &ev.overall {
        let mut pr = Vec::new();
        write_pr_csv(&mut pr, r)?;
        fs::write(out.join("pr.csv"), pr)?;
        fs::write(out.join("pr_curves.svg"), pr_svg(title, &r.pr_curves))?;
    }
    Ok(())
}

/// Detection metrics of a run (or of the oracle / empty detector) on a split.
pub fn cmd_eval(run: Option<&Path>, data: &Path, split: Split, source: DetSource, out: &Path) -> CliResult<SplitEval> {
    let manifest = read_manifest(data)?;
    let model = match (source, run) {
        (DetSource::Model, Some(r)) => Some(load_model(r)?),
        (DetSource::Model, None) => return Err(CliError::Config("eval needs --run unless --oracle or --empty is given".into())),
        _ => None,
    };
    if let Some(m) = &model {
        check_grid(&m.cfg, &manifest)?;
    }
    let mut groups = Vec::new();
    for entry in manifest.scenes_in(split) {
        let scene = read_scene(data, entry)?;
        let dets = scene_detections(source, model.as_ref(), &manifest, &scene)?;
        let frames = scene.iter().zip(dets).map(|(f, d)| FrameResult { dets: d, gts: in_region(&manifest, &f.gts) }).collect();
        groups.push((entry.weather, frames));
    }
    let ev = split_eval(groups)?;
    let header = vec![
        ("split", split.name().to_string()),
        ("source", source.name().to_string()),
        ("config_hash", model.as_ref().map_or(Ok("none".to_string()), |m| m.cfg.hash())?),
        ("dataset_hash", manifest.config_hash.clone()),
        ("tool_version", TOOL_VERSION.to_string()),
    ];
    write_eval(out, &ev, &header, &format!("{} split, {} detections", split.name(), source.name()))?;
    Ok(ev)
}

/// One row of an ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub spec: String,
    pub modality: Modality,
    pub simple_yaw: bool,
    pub no_augment: bool,
    pub iou_only: bool,
    pub sweeps: Option<usize>,
}

impl std::str::FromStr for Variant {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        let mut parts = s.split(':');
        let modality: Modality = parts.next().unwrap_or("").parse()?;
        let mut v = Variant { spec: s.to_string(), modality, simple_yaw: false, no_augment: false, iou_only: false, sweeps: None };
        for flag in parts {
            match flag {
                "simple-yaw" => v.simple_yaw = true,
                "no-aug" => v.no_augment = true,
                "iou-only" => v.iou_only = true,
                _ => match flag.strip_prefix("sweeps=").map(str::parse::<usize>) {
                    Some(Ok(n)) if n > 0 => v.sweeps = Some(n),
                    _ => return Err(CliError::Config(format!("unknown variant flag {flag:?} in {s:?}"))),
                },
            }
        }
        Ok(v)
    }
}

impl Variant {
    pub fn apply(&self, base: &RunConfig, seed: u64) -> RunConfig {
        let mut c = base.clone();
        c.train.modality = self.modality;
        c.train.seed = seed;
        if self.simple_yaw {
            c.train.yaw_mode = YawMode::Direct;
        }
        if self.no_augment {
            c.train.augment.enabled = false;
        }
        if self.iou_only {
            c.train.matching.dist_pos = None;
        }
        if let Some(n) = self.sweeps {
            c.train.sweeps = n;
        }
        c
    }

    fn dir_name(&self, seed: u64) -> String {
        let clean: String = self.spec.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect();
        format!("{clean}_s{seed}")
    }
}

/// Trains into `run` unless it already holds a finished run of the same config.
pub fn train_or_reuse(cfg: &RunConfig, data: &Path, run: &Path) -> CliResult<()> {
    if let Ok(text) = fs::read(run.join("report.json")) {
        #[derive(Deserialize)]
        struct Stamp {
            config_hash: String,
        }
        if let Ok(r) = serde_json::from_slice::<Stamp>(&text) {
            if r.config_hash == cfg.hash()? && run.join("best.ckpt").exists() {
                return Ok(());
            }
        }
    }
    cmd_train(cfg, data, run, true).map(|_| ())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub name: String,
    /// Mean AP per weather column in `WeatherMode::ALL` order, then overall.
    pub cells: [f64; 4],
}

fn fmt_cell(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.6}")
    }
}

pub fn write_table(path: &Path, rows: &[TableRow]) -> CliResult<()> {
    let mut s = String::from("variant,clear,rain,night,all\n");
    for r in rows {
        let cells: Vec<String> = r.cells.iter().map(|v| fmt_cell(*v)).collect();
        s.push_str(&format!("{},{}\n", r.name, cells.join(",")));
    }
    fs::write(path, s)?;
    Ok(())
}

fn cells_of(ev: &SplitEval) -> [f64; 4] {
    [ev.weather_ap(WeatherMode::Clear), ev.weather_ap(WeatherMode::Rain), ev.weather_ap(WeatherMode::Night), ev.mean_ap()]
}

fn mean_cells(all: &[[f64; 4]]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (k, o) in out.iter_mut().enumerate() {
        *o = all.iter().map(|c| c[k]).sum::<f64>() / all.len() as f64;
    }
    out
}

/// Trains and evaluates every variant on the val split, seeds averaged.
pub fn cmd_compare(cfg: &RunConfig, data: &Path, out: &Path) -> CliResult<Vec<TableRow>> {
    cfg.validate()?;
    let manifest = read_manifest(data)?;
    check_grid(cfg, &manifest)?;
    fs::create_dir_all(out)?;
    let variants: Vec<Variant> = cfg.compare.variants.iter().map(|s| s.parse()).collect::<CliResult<_>>()?;
    let mut rows = Vec::new();
    let run_of = |v: &Variant, seed: u64| -> CliResult<PathBuf> {
        let dir = out.join("runs").join(v.dir_name(seed));
        train_or_reuse(&v.apply(cfg, seed), data, &dir)?;
        Ok(dir)
    };
    for v in &variants {
        let mut per_seed = Vec::new();
        for &seed in &cfg.compare.seeds {
            let dir = run_of(v, seed)?;
            let ev = cmd_eval(Some(&dir), data, Split::Val, DetSource::Model, &dir.join("eval_val"))?;
            per_seed.push(cells_of(&ev));
        }
        rows.push(TableRow { name: v.spec.clone(), cells: mean_cells(&per_seed) });
    }
    if cfg.compare.late_fusion {
        let lidar: Variant = "lidar".parse()?;
        let radar: Variant = "radar".parse()?;
        let mut per_seed = Vec::new();
        for &seed in &cfg.compare.seeds {
            let runs = TrackRuns { lidar: Some(run_of(&lidar, seed)?), radar: Some(run_of(&radar, seed)?), early: None };
            let rows = cmd_track(cfg, data, &runs, Split::Val, TrackSource::Models, &out.join("track").join(format!("s{seed}")))?;
            let late = rows.into_iter().find(|r| r.name == "tracked late fusion").expect("late fusion row present");
            per_seed.push(late.cells);
        }
        rows.push(TableRow { name: "tracked late fusion (lidar|radar)".into(), cells: mean_cells(&per_seed) });
    }
    write_table(&out.join("table.csv"), &rows)?;
    Ok(rows)
}

/// Run directories feeding the tracker.
#[derive(Debug, Clone, Default)]
pub struct TrackRuns {
    pub lidar: Option<PathBuf>,
    pub radar: Option<PathBuf>,
    pub early: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackSource {
    Models,
    Oracle,
    Empty,
}

#[derive(Debug, Serialize)]
struct TrackedBox {
    scene: String,
    frame: usize,
    id: u64,
    bbox: BBox3D,
    score: f64,
}

fn check_times(entry: &SceneEntry, scene: &[Frame]) -> CliResult<Vec<f64>> {
    let times: Vec<f64> = scene.iter().map(|f| f.timestamp).collect();
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(CliError::Data(format!("{}: timestamps are not strictly increasing", entry.name)));
    }
    Ok(times)
}

/// Tracks one set of streams over a split and scores the tracked boxes.
fn tracked_eval(
    cfg: &RunConfig,
    manifest: &Manifest,
    scenes: &[(SceneEntry, Vec<Frame>)],
    streams: &[Vec<Vec<Vec<Detection>>>],
    rs: &[[f64; MEAS_DIM]],
    dump: &Path,
) -> CliResult<SplitEval> {
    let mut groups = Vec::new();
    let mut boxes = Vec::new();
    for (si, (entry, scene)) in scenes.iter().enumerate() {
        let times = check_times(entry, scene)?;
        let per_stream: Vec<Vec<Vec<Detection>>> = streams.iter().map(|s| s[si].clone()).collect();
        let tracked = run_late_fusion(&per_stream, &times, &cfg.track.ukf, rs)?;
        let mut frames = Vec::new();
        for (k, outs) in tracked.iter().enumerate() {
            for o in outs {
                boxes.push(TrackedBox { scene: entry.name.clone(), frame: k, id: o.id, bbox: o.det.bbox, score: o.det.score });
            }
            if k < cfg.track.warmup_frames {
                continue;
            }
            let mut dets: Vec<Detection> = outs.iter().map(|o| o.det).collect();
            dets.sort_by(|a, b| b.score.total_cmp(&a.score));
            frames.push(FrameResult { dets, gts: in_region(manifest, &scene[k].gts) });
        }
        groups.push((entry.weather, frames));
    }
    let mut text = String::new();
    for b in &boxes {
        text.push_str(&serde_json::to_string(b).map_err(voxfuse::Error::from)?);
        text.push('\n');
    }
    fs::write(dump, text)?;
    split_eval(groups)
}

/// Tracked AP of lidar-only, late-fusion and early-fusion streams.
pub fn cmd_track(cfg: &RunConfig, data: &Path, runs: &TrackRuns, split: Split, source: TrackSource, out: &Path) -> CliResult<Vec<TableRow>> {
    cfg.track.ukf.validate()?;
    let manifest = read_manifest(data)?;
    fs::create_dir_all(out)?;
    let scenes: Vec<(SceneEntry, Vec<Frame>)> =
        manifest.scenes_in(split).map(|e| Ok((e.clone(), read_scene(data, e)?))).collect::<CliResult<_>>()?;
    let detect = |src: DetSource, model: Option<&Model>| -> CliResult<Vec<Vec<Vec<Detection>>>> {
        scenes.iter().map(|(_, s)| scene_detections(src, model, &manifest, s)).collect()
    };
    let load = |p: &Option<PathBuf>| -> CliResult<Option<Model>> {
        match p {
            Some(dir) => {
                let m = load_model(dir)?;
                check_grid(&m.cfg, &manifest)?;
                Ok(Some(m))
            }
            None => Ok(None),
        }
    };
    let (lr, rr) = (cfg.track.lidar_r, cfg.track.radar_r);
    let mut rows = Vec::new();
    let mut add = |name: &str, file: &str, streams: Vec<Vec<Vec<Vec<Detection>>>>, rs: Vec<[f64; MEAS_DIM]>| -> CliResult<()> {
        let ev = tracked_eval(cfg, &manifest, &scenes, &streams, &rs, &out.join(file))?;
        rows.push(TableRow { name: name.into(), cells: cells_of(&ev) });
        Ok(())
    };
    match source {
        TrackSource::Oracle => add("tracked oracle", "tracks_oracle.jsonl", vec![detect(DetSource::Oracle, None)?], vec![lr])?,
        TrackSource::Empty => add("tracked empty", "tracks_empty.jsonl", vec![detect(DetSource::Empty, None)?], vec![lr])?,
        TrackSource::Models => {
            let lidar = load(&runs.lidar)?;
            let radar = load(&runs.radar)?;
            let early = load(&runs.early)?;
            if lidar.is_none() && early.is_none() {
                return Err(CliError::Config("track needs --lidar-run or --early-run".into()));
            }
            let lidar_dets = lidar.as_ref().map(|m| detect(DetSource::Model, Some(m))).transpose()?;
            if let Some(d) = &lidar_dets {
                add("tracked lidar", "tracks_lidar.jsonl", vec![d.clone()], vec![lr])?;
            }
            if let (Some(d), Some(rm)) = (&lidar_dets, &radar) {
                let rd = detect(DetSource::Model, Some(rm))?;
                add("tracked late fusion", "tracks_late.jsonl", vec![d.clone(), rd], vec![lr, rr])?;
            }
            if let Some(em) = &early {
                add("tracked early fusion", "tracks_early.jsonl", vec![detect(DetSource::Model, Some(em))?], vec![lr])?;
            }
        }
    }
    write_table(&out.join("tracked.csv"), &rows)?;
    Ok(rows)
}
