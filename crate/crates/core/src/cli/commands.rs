use std::fs;
use std::path::{Path, PathBuf};

use super::manifest::{file_checksum, now_ms, sha256_hex, write_atomic, RunManifest, StageRecord};
use super::{RunConfig, SourceInput, TargetInput};
use crate::error::{Error, Result};
use crate::generator::{init_generator, load_checkpoint, write_checkpoint};
use crate::metrics::{
    frechet_distance, median_bandwidth, mmd2, mse, pca_embed, pck, write_reports_csv, write_reports_json,
    MetricReport, SampleMatrix,
};
use crate::pose::{load_poses, write_poses, PoseSet};
use crate::render::{encode_png, rasterize, svg_string};
use crate::rng;
use crate::synth::{make_shifted_dataset, sample_poses};
use crate::train::{
    adapt, build_guidance, layer_sweep, sample_target, train_source, write_loss_csv, write_sweep_csv, LayerSet,
};

pub const SOURCE: &str = "source.jsonl";
pub const SHOTS: &str = "shots.jsonl";
pub const HOLDOUT: &str = "holdout.jsonl";
pub const GENERATOR: &str = "generator.fxp";
pub const SOURCE_LOSS: &str = "source_loss.csv";
pub const TRANSFER: &str = "transfer.fxp";
pub const ADAPT_LOSS: &str = "adapt_loss.csv";
pub const SWEEP: &str = "sweep.csv";
pub const SAMPLES: &str = "samples.jsonl";
pub const EVAL_CSV: &str = "eval.csv";
pub const EVAL_JSON: &str = "eval.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenData,
    TrainSource,
    Adapt,
    SweepLayers,
    Sample,
    Eval,
    Render,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::TrainSource => "train-source",
            Command::Adapt => "adapt",
            Command::SweepLayers => "sweep-layers",
            Command::Sample => "sample",
            Command::Eval => "eval",
            Command::Render => "render",
            Command::Report => "report",
        }
    }
}

/// Bookkeeping for one command: verified inputs, checksummed outputs.
struct Stage {
    dir: PathBuf,
    manifest: RunManifest,
    record: StageRecord,
}

impl Stage {
    fn begin(cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(&cfg.out_dir)?;
        Ok(Stage {
            dir: cfg.out_dir.clone(),
            manifest: RunManifest::open(&cfg.out_dir, cfg)?,
            record: StageRecord {
                started_unix_ms: now_ms(),
                ..Default::default()
            },
        })
    }

    /// A run-directory artifact written by an earlier stage.
    fn input(&mut self, rel: &str) -> Result<PathBuf> {
        let sum = self.manifest.verify_input(&self.dir, rel)?;
        self.record.inputs.insert(rel.to_string(), sum);
        Ok(self.dir.join(rel))
    }

    /// Any file, inside the run directory or not.
    fn external_input(&mut self, path: &Path) -> Result<()> {
        let key = self.key(path);
        let sum = match path.strip_prefix(&self.dir) {
            Ok(rel) => self.manifest.verify_input(&self.dir, &rel.to_string_lossy())?,
            Err(_) => file_checksum(path)?,
        };
        self.record.inputs.insert(key, sum);
        Ok(())
    }

    fn key(&self, path: &Path) -> String {
        path.strip_prefix(&self.dir)
            .map_or_else(|_| path.display().to_string(), |r| r.to_string_lossy().into_owned())
    }

    fn output(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        write_atomic(&path, bytes)?;
        self.record.outputs.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn poses(&mut self, rel: &str, set: &PoseSet) -> Result<()> {
        let mut buf = Vec::new();
        write_poses(set, &mut buf)?;
        self.output(rel, &buf)
    }

    fn finish(mut self, cmd: Command) -> Result<RunManifest> {
        self.record.finished_unix_ms = now_ms();
        self.manifest.stages.insert(cmd.name().to_string(), self.record);
        self.manifest.save(&self.dir)?;
        Ok(self.manifest)
    }
}

/// Runs one command against a resolved config and returns the updated
/// manifest, which is also written to the run directory.
pub fn run(cmd: Command, cfg: &RunConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let mut st = Stage::begin(cfg)?;
    match cmd {
        Command::GenData => gen_data(cfg, &mut st)?,
        Command::TrainSource => cmd_train_source(cfg, &mut st)?,
        Command::Adapt => cmd_adapt(cfg, &mut st)?,
        Command::SweepLayers => cmd_sweep(cfg, &mut st)?,
        Command::Sample => cmd_sample(cfg, &mut st)?,
        Command::Eval => cmd_eval(cfg, &mut st)?,
        Command::Render => cmd_render(cfg, &mut st)?,
        Command::Report => cmd_report(cfg, &mut st)?,
    }
    st.finish(cmd)
}

fn at_least_one(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("n must be ≥ 1".into()));
    }
    Ok(())
}

fn gen_data(cfg: &RunConfig, st: &mut Stage) -> Result<()> {
    let d = &cfg.data;
    let spec = cfg.source_spec()?;
    let source = match (&d.source, &spec) {
        (SourceInput::File(p), _) => {
            st.external_input(p)?;
            load_poses(p)?
        }
        (_, Some(s)) => {
            at_least_one(d.source_count)?;
            sample_poses(s, d.source_count, rng::derive(cfg.seed, "source-data"))?
        }
        (_, None) => unreachable!("non-file sources always resolve to a spec"),
    };
    let (shots, holdout) = match &d.target {
        TargetInput::Shift(shift) => {
            at_least_one(d.target_pool)?;
            at_least_one(d.holdout)?;
            let s = spec.as_ref().expect("validated: shift targets have a source spec");
            // separate seed streams keep the pool and the holdout disjoint
            let pool = make_shifted_dataset(s, shift, d.target_pool, rng::derive(cfg.seed, "target-pool"))?;
            let holdout = make_shifted_dataset(s, shift, d.holdout, rng::derive(cfg.seed, "target-holdout"))?;
            (pool, holdout)
        }
        TargetInput::File(p) => {
            st.external_input(p)?;
            let all = load_poses(p)?;
            if all.len() <= cfg.shots {
                return Err(Error::Config(format!(
                    "target file has {} poses, need more than {} shots to leave a holdout",
                    all.len(),
                    cfg.shots
                )));
            }
            let holdout = PoseSet::new(all.topology.clone(), all.poses[cfg.shots..].to_vec())?;
            (all, holdout)
        }
    };
    if shots.len() < cfg.shots {
        return Err(Error::Config(format!("target pool has {} poses, fewer than {} shots", shots.len(), cfg.shots)));
    }
    if source.topology != shots.topology {
        return Err(Error::Config("source and target topologies differ".into()));
    }
    let shots = PoseSet::new(shots.topology.clone(), shots.poses[..cfg.shots].to_vec())?;
    st.poses(SOURCE, &source)?;
    st.poses(SHOTS, &shots)?;
    st.poses(HOLDOUT, &holdout)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn cmd_train_source(cfg: &RunConfig, st: &mut Stage) -> Result<()> {
    let source = load_poses(st.input(SOURCE)?)?;
    let g0 = init_generator(cfg.generator, rng::derive(cfg.seed, "generator-init"))?;
    let out = train_source(&g0, &source, &cfg.source_train)?;
    st.output(GENERATOR, &write_checkpoint(&out.generator, None))?;
    let loss = csv_bytes(|b| write_loss_csv(&out.loss_trace, b))?;
    st.output(SOURCE_LOSS, &loss)
}

fn load_generator(st: &mut Stage, cfg: &RunConfig) -> Result<crate::generator::Generator> {
    let (g, _) = load_checkpoint(st.input(GENERATOR)?)?;
    if *g.config() != cfg.generator {
        return Err(Error::Config(format!("{GENERATOR} was trained with a different generator config")));
    }
    Ok(g)
}

fn cmd_adapt(cfg: &RunConfig, st: &mut Stage) -> Result<()> {
    let g = load_generator(st, cfg)?;
    let shots = load_poses(st.input(SHOTS)?)?;
    let guidance = build_guidance(&shots, &cfg.adapt, cfg.generator.d_z)?;
    let out = adapt(&g, &guidance, &cfg.adapt)?;
    st.output(TRANSFER, &write_checkpoint(&g, Some(&out.tau)))?;
    let loss = csv_bytes(|b| write_loss_csv(&out.loss_trace, b))?;
    st.output(ADAPT_LOSS, &loss)
}

fn cmd_sweep(cfg: &RunConfig, st: &mut Stage) -> Result<()> {
    let g = load_generator(st, cfg)?;
    let shots = load_poses(st.input(SHOTS)?)?;
    let guidance = build_guidance(&shots, &cfg.adapt, cfg.generator.d_z)?;
    let candidates: Vec<LayerSet> = cfg.sweep_layers.iter().map(|&l| LayerSet::Only(vec![l])).collect();
    let entries = layer_sweep(&g, &guidance, &candidates, &cfg.adapt)?;
    let bytes = csv_bytes(|b| write_sweep_csv(&entries, b))?;
    st.output(SWEEP, &bytes)
}

fn cmd_sample(cfg: &RunConfig, st: &mut Stage) -> Result<()> {
    let (g, tau) = load_checkpoint(st.input(TRANSFER)?)?;
    let tau = tau.ok_or_else(|| Error::Checkpoint(format!("{TRANSFER} holds no transfer matrix")))?;
    let shots = load_poses(st.input(SHOTS)?)?;
    let s = &cfg.sample;
    at_least_one(s.count)?;
    let raster = s.rasters.then_some((s.width, s.height));
    let out = sample_target(&g, &tau, &shots.topology, s.count, rng::derive(cfg.seed, "sample"), raster)?;
    if out.skipped > 0 {
        eprintln!("sample: replaced {} degenerate draws", out.skipped);
    }
    st.poses(SAMPLES, &out.poses)?;
    for (i, img) in out.rasters.iter().flatten().enumerate() {
        st.output(&format!("samples/sample_{i:05}.png"), &encode_png(img)?)?;
    }
    Ok(())
}

/// MMD², FD, and when the sets are index-aligned PCK and MSE.
pub fn compare(a: &PoseSet, b: &PoseSet, cfg: &RunConfig) -> Result<Vec<MetricReport>> {
    let x = SampleMatrix::from_poses(a)?;
    let y = SampleMatrix::from_poses(b)?;
    let (n_x, n_y) = (x.rows(), y.rows());
    let (sigma, rule) = match cfg.metrics.bandwidth {
        Some(s) => (s, "fixed"),
        None => (median_bandwidth(&x, &y)?, "median"),
    };
    let mut out = vec![
        MetricReport::new("mmd2", mmd2(&x, &y, sigma)?, n_x, n_y)
            .param("bandwidth", format!("{sigma:e}"))
            .param("bandwidth_rule", rule)
            .param("kernel", "gaussian")
            .param("estimator", "unbiased")
            .seed(cfg.seed),
        MetricReport::new("fd", frechet_distance(&x, &y)?, n_x, n_y)
            .param("space", "keypoints")
            .seed(cfg.seed),
    ];
    if n_x == n_y && a.topology == b.topology {
        let rho = cfg.metrics.pck_threshold;
        let px = cfg.metrics.canvas_px;
        out.push(
            MetricReport::new("pck", pck(a, b, rho)?, n_x, n_y)
                .param("rho", rho)
                .seed(cfg.seed),
        );
        out.push(
            MetricReport::new("mse", mse(a, b, px)?, n_x, n_y)
                .param("canvas_px", px)
                .seed(cfg.seed),
        );
    }
    Ok(out)
}

fn cmd_eval(cfg: &RunConfig, st: &mut Stage) -> Result<()> {
    let mut side = |p: &Option<PathBuf>, default: &str| -> Result<PoseSet> {
        match p {
            Some(p) => {
                st.external_input(p)?;
                load_poses(p)
            }
            None => load_poses(st.input(default)?),
        }
    };
    let a = side(&cfg.metrics.a, SAMPLES)?;
    let b = side(&cfg.metrics.b, HOLDOUT)?;
    let reports = compare(&a, &b, cfg)?;
    st.output(EVAL_CSV, &csv_bytes(|w| write_reports_csv(&reports, w))?)?;
    st.output(EVAL_JSON, &csv_bytes(|w| write_reports_json(&reports, w))?)
}

fn cmd_render(cfg: &RunConfig, st: &mut Stage) -> Result<()> {
    let r = &cfg.render;
    let set = match &r.poses {
        Some(p) => {
            st.external_input(p)?;
            load_poses(p)?
        }
        None => load_poses(st.input(SAMPLES)?)?,
    };
    let n = r.limit.map_or(set.len(), |l| l.min(set.len()));
    for (i, pose) in set.poses[..n].iter().enumerate() {
        let img = rasterize(pose, &set.topology, r.width, r.height)?;
        st.output(&format!("render/pose_{i:05}.png"), &encode_png(&img)?)?;
        let svg = svg_string(pose, &set.topology, r.width, r.height);
        st.output(&format!("render/pose_{i:05}.svg"), svg.as_bytes())?;
    }
    Ok(())
}

fn cmd_report(cfg: &RunConfig, st: &mut Stage) -> Result<()> {
    let source = load_poses(st.input(SOURCE)?)?;
    let holdout = load_poses(st.input(HOLDOUT)?)?;
    let samples = load_poses(st.input(SAMPLES)?)?;
    let mut reports = Vec::new();
    for (label, set) in [("source", &source), ("adapted", &samples)] {
        for r in compare(set, &holdout, cfg)? {
            if r.metric == "mmd2" || r.metric == "fd" {
                reports.push(r.param("compared", format!("{label}-vs-target")));
            }
        }
    }
    st.output("report.json", &csv_bytes(|w| write_reports_json(&reports, w))?)?;
    let mats = [
        SampleMatrix::from_poses(&source)?,
        SampleMatrix::from_poses(&holdout)?,
        SampleMatrix::from_poses(&samples)?,
    ];
    let emb = pca_embed(&mats, &["source", "target", "adapted"])?;
    st.output("embedding.csv", emb.to_csv().as_bytes())?;
    st.output("embedding.svg", emb.to_svg(480).as_bytes())
}
