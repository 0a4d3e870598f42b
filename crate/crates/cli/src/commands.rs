//! Workflow commands: generate, corrupt, beamform, evaluate, sweep, report.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use log::{info, warn};
use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sosgen_core::beamform::bmode;
use sosgen_core::dataio::{
    read_mask_png, read_sample, write_map_png, write_mask_png, write_sample, DatasetManifest,
    ManifestEntry, SampleRecord,
};
use sosgen_core::geometry::Setup;
use sosgen_core::metrics::{self, abs_diff_display, EvalReport, MeanSd, DISPLAY_FLOOR};
use sosgen_core::phantom::{
    gen_ellipsoids, gen_layered, gen_single_inclusion, gen_t2us_with, gt_downsample,
    mask_downsample, GeneratorParams, GeneratorTag, GrayImage, PhantomSample,
};
use sosgen_core::rng::{self, sample_seed, Stream};
use sosgen_core::sigproc::{corrupt, preprocess, replay};
use sosgen_core::solver::{make_tone_burst, simulate_with, Provenance, RfFrame};
use sosgen_core::{Error, Result};

use crate::config::{CaseKind, ExperimentConfig, GeneratorConfig, PredictorConfig};
use crate::plot;

/// Container flag marking a prediction record.
pub const PREDICTION_FLAG: u32 = 1 << 9;
/// Container flag marking a b-mode record (dB values in the GT payload).
pub const BMODE_FLAG: u32 = 1 << 10;

pub const RAW_DIR: &str = "raw";
pub const FAILURES_FILE: &str = "failures.json";

/// A sample that could not be produced; the run continues without it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub id: String,
    pub seed: u64,
    pub kind: String,
    pub message: String,
}

impl SampleFailure {
    fn new(id: &str, seed: u64, e: &Error) -> Self {
        SampleFailure {
            id: id.to_string(),
            seed,
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    pub failures: Vec<SampleFailure>,
}

impl Outcome {
    fn merge(&mut self, other: Outcome) {
        self.outputs.extend(other.outputs);
        self.failures.extend(other.failures);
    }
}

/// Create `path`, refusing to reuse a non-empty directory.
pub fn fresh_dir(path: &Path) -> Result<()> {
    if path.exists() {
        let empty = path.is_dir() && fs::read_dir(path)?.next().is_none();
        if !empty {
            return Err(Error::Config(format!(
                "output {} already exists; outputs always go to fresh paths",
                path.display()
            )));
        }
    }
    fs::create_dir_all(path)?;
    Ok(())
}

/// Run `f` inside a pool of `workers` threads (all cores when `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        b = b.num_threads(n);
    }
    let pool = b
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn sample_id(index: usize) -> String {
    format!("s{index:05}")
}

/// Seed of the quantization noise of a sample.
pub fn preprocess_seed(phantom_seed: u64) -> u64 {
    sample_seed(phantom_seed, 0x5155_414e)
}

/// Seed of a corruption applied to a sample.
pub fn corruption_seed(noise_seed: u64, phantom_seed: u64) -> u64 {
    sample_seed(noise_seed, phantom_seed)
}

fn load_config_from(manifest: &DatasetManifest) -> Result<ExperimentConfig> {
    serde_json::from_value(manifest.config.clone()).map_err(|e| {
        Error::Format {
            field: "config",
            detail: format!("manifest config is not an experiment config: {e}"),
        }
    })
}

/// Draw the phantom of one sample.
fn build_phantom(
    cfg: &ExperimentConfig,
    setup: &Setup,
    seed: u64,
    tag: GeneratorTag,
    params: &GeneratorParams,
    image_index: Option<usize>,
) -> Result<PhantomSample> {
    let pcfg = cfg.phantom_config();
    let grid = &setup.grid;
    match (tag, params) {
        (GeneratorTag::Ellipsoids, _) => Ok(gen_ellipsoids(seed, grid, &pcfg)),
        (GeneratorTag::Layered, _) => Ok(gen_layered(seed, grid, &pcfg)),
        (GeneratorTag::SingleInclusion, GeneratorParams::SingleInclusion { background_sos, spec }) => {
            gen_single_inclusion(spec, *background_sos, seed, grid, &pcfg)
        }
        (GeneratorTag::T2us, _) => {
            let GeneratorConfig::T2us { images, t2us } = &cfg.generator else {
                return Err(Error::Config("t2us sample in a dataset without t2us images".into()));
            };
            let k = image_index.ok_or_else(|| Error::Format {
                field: "tags.image_index",
                detail: "t2us sample without an image index".into(),
            })?;
            let path = images.get(k).ok_or_else(|| Error::Config(format!("no t2us image #{k}")))?;
            let image = GrayImage::load(path)?;
            let coin = rng::stream(seed, Stream::Coin).random::<bool>();
            gen_t2us_with(&image, seed, grid, coin, &pcfg, t2us)
        }
        (tag, _) => Err(Error::Config(format!("cannot rebuild a `{tag}` phantom"))),
    }
}

/// Generator inputs for sample `index` of a run.
fn job_for(cfg: &ExperimentConfig, setup: &Setup, index: usize) -> (u64, GeneratorTag, GeneratorParams, Option<usize>) {
    let seed = sample_seed(cfg.seed, index as u64);
    match &cfg.generator {
        GeneratorConfig::Ellipsoids => (seed, GeneratorTag::Ellipsoids, GeneratorParams::Custom, None),
        GeneratorConfig::Layered => (seed, GeneratorTag::Layered, GeneratorParams::Custom, None),
        GeneratorConfig::T2us { images, .. } => (
            seed,
            GeneratorTag::T2us,
            GeneratorParams::Custom,
            Some(index % images.len().max(1)),
        ),
        GeneratorConfig::SingleInclusion(inc) => (
            seed,
            GeneratorTag::SingleInclusion,
            GeneratorParams::SingleInclusion {
                background_sos: inc.background_sos,
                spec: inc.spec(setup),
            },
            None,
        ),
    }
}

fn simulate_raw(cfg: &ExperimentConfig, setup: &Setup, phantom: &PhantomSample) -> Result<RfFrame> {
    let source = make_tone_burst(&setup.grid, &setup.transducer);
    simulate_with(phantom, &setup.grid, &setup.transducer, &source, &cfg.solver)
}

fn image_index(entry: &ManifestEntry) -> Option<usize> {
    entry.tags.get("image_index").and_then(|v| v.as_u64()).map(|v| v as usize)
}

fn gt_record(phantom: &PhantomSample, setup: &Setup) -> Result<Array2<f32>> {
    Ok(gt_downsample(phantom, &setup.fov)?.values.mapv(|v| v as f32))
}

fn record(frame: &RfFrame, gt: Array2<f32>, seed: u64) -> SampleRecord {
    SampleRecord {
        flags: frame.provenance.flags(),
        seed,
        rf: frame.samples.clone(),
        gt,
    }
}

fn frame_of(rec: &SampleRecord, setup: &Setup, provenance: Provenance) -> RfFrame {
    RfFrame {
        samples: rec.rf.clone(),
        sample_rate: setup.transducer.rx_sample_rate,
        provenance,
    }
}

fn write_failures(dir: &Path, failures: &[SampleFailure]) -> Result<()> {
    if !failures.is_empty() {
        fs::write(dir.join(FAILURES_FILE), serde_json::to_string_pretty(failures)? + "\n")?;
        for f in failures {
            warn!("sample {} (seed {}) failed: {}", f.id, f.seed, f.message);
        }
    }
    Ok(())
}

fn one_sample(
    cfg: &ExperimentConfig,
    setup: &Setup,
    dir: &Path,
    id: &str,
    job: &(u64, GeneratorTag, GeneratorParams, Option<usize>),
    tags: &serde_json::Map<String, serde_json::Value>,
) -> Result<ManifestEntry> {
    let (seed, tag, params, image) = job;
    let phantom = build_phantom(cfg, setup, *seed, *tag, params, *image)?;
    let raw = simulate_raw(cfg, setup, &phantom)?;
    let gt = gt_record(&phantom, setup)?;
    let frame = preprocess(raw.clone(), &cfg.preprocess_config(), preprocess_seed(*seed))?;

    let file = format!("{id}.sosd");
    write_sample(dir.join(&file), &record(&frame, gt.clone(), *seed))?;
    let raw_file = if cfg.keep_raw {
        let f = format!("{RAW_DIR}/{id}.sosd");
        write_sample(dir.join(&f), &record(&raw, gt, *seed))?;
        Some(f)
    } else {
        None
    };
    let mask_file = match &phantom.inclusion_mask {
        Some(m) => {
            let f = format!("{id}_mask.png");
            write_mask_png(dir.join(&f), &mask_downsample(m, &setup.grid, &setup.fov))?;
            Some(f)
        }
        None => None,
    };
    let mut tags = tags.clone();
    if let Some(k) = image {
        tags.insert("image_index".into(), json!(k));
    }
    if let Some(f) = raw_file {
        tags.insert("raw_file".into(), json!(f));
    }
    info!("{id}: seed {seed} done");
    Ok(ManifestEntry {
        id: id.to_string(),
        file,
        seed: *seed,
        generator_tag: phantom.generator_tag,
        params: phantom.params.clone(),
        provenance: frame.provenance,
        mask_file,
        tags,
    })
}

fn finish(dir: &Path, manifest: &mut DatasetManifest, results: Vec<(String, u64, Result<ManifestEntry>)>) -> Result<Outcome> {
    let mut failures = Vec::new();
    for (id, seed, r) in results {
        match r {
            Ok(e) => manifest.samples.push(e),
            Err(e) => failures.push(SampleFailure::new(&id, seed, &e)),
        }
    }
    manifest.write(dir)?;
    write_failures(dir, &failures)?;
    Ok(Outcome {
        outputs: vec![dir.to_path_buf()],
        failures,
    })
}

/// Generate `cfg.count` samples into a fresh dataset directory.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    generate_tagged(cfg, out, &serde_json::Map::new())
}

fn generate_tagged(
    cfg: &ExperimentConfig,
    out: &Path,
    tags: &serde_json::Map<String, serde_json::Value>,
) -> Result<Outcome> {
    cfg.validate()?;
    fresh_dir(out)?;
    if cfg.keep_raw {
        fs::create_dir_all(out.join(RAW_DIR))?;
    }
    let setup = cfg.setup();
    info!("generating {} samples at {} into {}", cfg.count, cfg.scale, out.display());
    let results: Vec<_> = with_workers(cfg.workers, || {
        (0..cfg.count)
            .into_par_iter()
            .map(|k| {
                let id = sample_id(k);
                let job = job_for(cfg, &setup, k);
                let r = one_sample(cfg, &setup, out, &id, &job, tags);
                (id, job.0, r)
            })
            .collect()
    })?;
    let mut manifest = DatasetManifest::new(cfg.canonical());
    finish(out, &mut manifest, results)
}

/// Rebuild a sample's raw frame by simulation.
pub fn regenerate_raw(cfg: &ExperimentConfig, entry: &ManifestEntry) -> Result<(RfFrame, Array2<f32>)> {
    let setup = cfg.setup();
    let phantom = build_phantom(cfg, &setup, entry.seed, entry.generator_tag, &entry.params, image_index(entry))?;
    let raw = simulate_raw(cfg, &setup, &phantom)?;
    Ok((raw, gt_record(&phantom, &setup)?))
}

/// Rebuild a listed sample from scratch using only the manifest.
pub fn regenerate(manifest: &DatasetManifest, entry: &ManifestEntry) -> Result<SampleRecord> {
    let cfg = load_config_from(manifest)?;
    let (raw, gt) = regenerate_raw(&cfg, entry)?;
    let frame = replay(raw, &entry.provenance.steps)?;
    Ok(record(&frame, gt, entry.seed))
}

/// Raw frame of a sample: the stored copy when there is one, else a fresh
/// simulation.
fn raw_frame(cfg: &ExperimentConfig, dir: &Path, entry: &ManifestEntry) -> Result<(RfFrame, Array2<f32>)> {
    let setup = cfg.setup();
    match entry.tags.get("raw_file").and_then(|v| v.as_str()) {
        Some(f) if dir.join(f).is_file() => {
            let rec = read_sample(dir.join(f))?;
            let provenance = Provenance {
                phantom_seed: entry.seed,
                ..Provenance::default()
            };
            Ok((frame_of(&rec, &setup, provenance), rec.gt))
        }
        _ => {
            warn!("{}: no stored raw frame, simulating again", entry.id);
            regenerate_raw(cfg, entry)
        }
    }
}

fn copy_mask(src_dir: &Path, dst_dir: &Path, entry: &ManifestEntry) -> Result<()> {
    if let Some(m) = &entry.mask_file {
        fs::copy(src_dir.join(m), dst_dir.join(m))?;
    }
    Ok(())
}

/// Corrupt the raw frames of a dataset and preprocess them again.
///
/// Corruption settings come from `corruption` in `cfg`; everything else
/// from the dataset's own configuration.
pub fn cmd_corrupt(dataset: &Path, cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let c = cfg
        .corruption
        .clone()
        .ok_or_else(|| Error::Config("corrupt needs a `corruption` section in the config".into()))?;
    c.validate()?;
    let (source, src_dir) = DatasetManifest::read(dataset)?;
    let mut scfg = load_config_from(&source)?;
    scfg.corruption = Some(c.clone());
    scfg.validate()?;
    fresh_dir(out)?;
    if scfg.keep_raw {
        fs::create_dir_all(out.join(RAW_DIR))?;
    }
    let pcfg = scfg.preprocess_config();
    let results: Vec<_> = with_workers(cfg.workers, || {
        source
            .samples
            .par_iter()
            .map(|entry| {
                let r = (|| {
                    let (raw, gt) = raw_frame(&scfg, &src_dir, entry)?;
                    let sample_cfg = sosgen_core::sigproc::CorruptionConfig {
                        noise_seed: corruption_seed(c.noise_seed, entry.seed),
                        ..c.clone()
                    };
                    let noisy = corrupt(raw, &sample_cfg, pcfg.mute_samples)?;
                    let frame = preprocess(noisy.clone(), &pcfg, preprocess_seed(entry.seed))?;
                    write_sample(out.join(&entry.file), &record(&frame, gt.clone(), entry.seed))?;
                    let mut tags = entry.tags.clone();
                    if scfg.keep_raw {
                        let f = format!("{RAW_DIR}/{}.sosd", entry.id);
                        write_sample(out.join(&f), &record(&noisy, gt, entry.seed))?;
                        tags.insert("raw_file".into(), json!(f));
                    } else {
                        tags.remove("raw_file");
                    }
                    tags.insert("awgn_target_snr_db".into(), json!(c.awgn_target_snr_db));
                    tags.insert("phase_range_rad".into(), json!(c.phase_range_rad));
                    copy_mask(&src_dir, out, entry)?;
                    Ok(ManifestEntry {
                        provenance: frame.provenance,
                        tags,
                        ..entry.clone()
                    })
                })();
                (entry.id.clone(), entry.seed, r)
            })
            .collect()
    })?;
    let mut manifest = DatasetManifest::new(scfg.canonical());
    finish(out, &mut manifest, results)
}

/// B-mode images of every sample: PNG plus the dB field in a container.
pub fn cmd_beamform(dataset: &Path, cfg: Option<&ExperimentConfig>, out: &Path) -> Result<Outcome> {
    let (source, src_dir) = DatasetManifest::read(dataset)?;
    let dcfg = load_config_from(&source)?;
    let bcfg = cfg.unwrap_or(&dcfg);
    let setup = dcfg.setup();
    fresh_dir(out)?;
    let results: Vec<_> = with_workers(cfg.and_then(|c| c.workers), || {
        source
            .samples
            .par_iter()
            .map(|entry| {
                let r = (|| {
                    let rec = read_sample(src_dir.join(&entry.file))?;
                    let frame = frame_of(&rec, &setup, entry.provenance.clone());
                    let img = bmode(&frame, &setup, bcfg.beamform_sos, &bcfg.beamform)?;
                    img.save_png(out.join(format!("{}.png", entry.id)))?;
                    let file = format!("{}.sosd", entry.id);
                    write_sample(
                        out.join(&file),
                        &SampleRecord {
                            flags: BMODE_FLAG,
                            seed: entry.seed,
                            rf: Array2::zeros((0, 0)),
                            gt: img.pixels.mapv(|v| v as f32),
                        },
                    )?;
                    Ok(ManifestEntry {
                        file,
                        mask_file: None,
                        ..entry.clone()
                    })
                })();
                (entry.id.clone(), entry.seed, r)
            })
            .collect()
    })?;
    let mut manifest = DatasetManifest::new(json!({
        "kind": "bmode",
        "source_config_hash": source.config_hash,
        "beamform": bcfg.beamform,
        "beamform_sos": bcfg.beamform_sos,
    }));
    finish(out, &mut manifest, results)
}

fn as_f64(a: &Array2<f32>) -> Array2<f64> {
    a.mapv(f64::from)
}

/// Metrics of every GT sample against the prediction with the same id.
pub fn evaluate_datasets(gt: &Path, pred: &Path, ssim: &metrics::SsimConfig) -> Result<Vec<EvalReport>> {
    let (gman, gdir) = DatasetManifest::read(gt)?;
    let (pman, pdir) = DatasetManifest::read(pred)?;
    let by_id: BTreeMap<&str, &ManifestEntry> = pman.samples.iter().map(|e| (e.id.as_str(), e)).collect();
    let missing: Vec<&str> = gman
        .samples
        .iter()
        .map(|e| e.id.as_str())
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Input(format!("no prediction for samples {}", missing.join(", "))));
    }
    gman.samples
        .par_iter()
        .map(|e| {
            let g = as_f64(&read_sample(gdir.join(&e.file))?.gt);
            let p = as_f64(&read_sample(pdir.join(&by_id[e.id.as_str()].file))?.gt);
            let mask = match &e.mask_file {
                Some(m) => {
                    let m = read_mask_png(gdir.join(m))?;
                    // a mask that covers nothing or everything has no regions
                    let n = m.iter().filter(|v| **v).count();
                    (n > 0 && n < m.len()).then_some(m)
                }
                None => None,
            };
            metrics::evaluate(&e.id, &g, &p, mask.as_ref(), ssim)
        })
        .collect()
}

/// CSV, JSON summary, box-plot data and difference maps.
pub fn cmd_evaluate(gt: &Path, pred: &Path, cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let reports = with_workers(cfg.workers, || evaluate_datasets(gt, pred, &cfg.ssim))??;
    fresh_dir(out)?;
    metrics::write_reports(&reports, out)?;
    if let Err(e) = plot::box_plot_png(&reports, &out.join("boxplot.png")) {
        warn!("box plot not rendered: {e}");
    }
    let (gman, gdir) = DatasetManifest::read(gt)?;
    let (pman, pdir) = DatasetManifest::read(pred)?;
    let diff_dir = out.join("absdiff");
    fs::create_dir_all(&diff_dir)?;
    for e in &gman.samples {
        let p = pman.samples.iter().find(|p| p.id == e.id).expect("checked above");
        let g = as_f64(&read_sample(gdir.join(&e.file))?.gt);
        let q = as_f64(&read_sample(pdir.join(&p.file))?.gt);
        let d = abs_diff_display(&g, &q, DISPLAY_FLOOR)?;
        write_map_png(diff_dir.join(format!("{}.png", e.id)), &d, 0.0, 100.0)?;
    }
    Ok(Outcome {
        outputs: vec![out.to_path_buf()],
        failures: Vec::new(),
    })
}

/// Run the external predictor on a dataset and check what it wrote.
pub fn run_predictor(p: &PredictorConfig, dataset: &Path, out: &Path) -> Result<()> {
    let (program, args) = p.command.split_first().ok_or_else(|| Error::Config("empty predictor command".into()))?;
    info!("predicting {} with {}", dataset.display(), program);
    let status = Command::new(program)
        .args(args)
        .arg("--dataset")
        .arg(dataset)
        .arg("--out")
        .arg(out)
        .status()
        .map_err(|e| Error::Predictor(format!("cannot start `{program}`: {e}")))?;
    if !status.success() {
        return Err(Error::Predictor(format!("`{program}` exited with {status}")));
    }
    check_predictions(dataset, out)
}

/// Every input id has a finite SoS map of the GT shape.
pub fn check_predictions(dataset: &Path, pred: &Path) -> Result<()> {
    let (inputs, idir) = DatasetManifest::read(dataset)?;
    let (preds, pdir) = DatasetManifest::read(pred)
        .map_err(|e| Error::Predictor(format!("no readable prediction manifest: {e}")))?;
    for e in &inputs.samples {
        let p = preds
            .samples
            .iter()
            .find(|p| p.id == e.id)
            .ok_or_else(|| Error::Predictor(format!("no prediction for {}", e.id)))?;
        let want = read_sample(idir.join(&e.file))?.gt.dim();
        let got = read_sample(pdir.join(&p.file))?.gt;
        if got.dim() != want || got.iter().any(|v| !v.is_finite()) {
            return Err(Error::Predictor(format!(
                "prediction for {} has shape {:?} (expected {want:?}) or non-finite values",
                e.id,
                got.dim()
            )));
        }
    }
    Ok(())
}

/// Reference predictor: the GT plus a constant offset.
pub fn predict_oracle(dataset: &Path, out: &Path, offset: f64) -> Result<()> {
    let (source, src_dir) = DatasetManifest::read(dataset)?;
    fresh_dir(out)?;
    let mut manifest = DatasetManifest::new(json!({
        "kind": "predictions",
        "predictor": "oracle",
        "offset": offset,
        "source_config_hash": source.config_hash,
    }));
    for e in &source.samples {
        let rec = read_sample(src_dir.join(&e.file))?;
        write_sample(
            out.join(&e.file),
            &SampleRecord {
                flags: PREDICTION_FLAG,
                seed: e.seed,
                rf: Array2::zeros((0, 0)),
                gt: rec.gt.mapv(|v| (f64::from(v) + offset) as f32),
            },
        )?;
        manifest.samples.push(ManifestEntry {
            mask_file: None,
            tags: Default::default(),
            ..e.clone()
        });
    }
    manifest.write(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepIndexEntry {
    pub sweep: String,
    pub label: String,
    pub value: f64,
    /// Dataset directory relative to the sweep directory.
    pub dir: String,
}

pub const SWEEP_INDEX: &str = "sweep.json";

/// Datasets for every sweep case, plus the aggregate when a predictor is
/// configured.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    cfg.validate()?;
    if cfg.sweeps.is_empty() {
        return Err(Error::Config("sweep needs at least one entry in `sweeps`".into()));
    }
    fresh_dir(out)?;
    let noise_seed = cfg.corruption.as_ref().map_or(cfg.seed, |c| c.noise_seed);
    let mut outcome = Outcome::default();
    let mut index = Vec::new();
    let needs_base = cfg.sweeps.iter().any(|s| s.is_corruption());
    let base = out.join("base");
    if needs_base {
        outcome.merge(cmd_generate(cfg, &base)?);
    }
    for spec in &cfg.sweeps {
        for case in spec.cases(noise_seed) {
            let rel = format!("{}/{}", case.sweep, case.label);
            let dir = out.join(&rel);
            let mut tags = serde_json::Map::new();
            tags.insert("sweep".into(), json!(case.sweep));
            tags.insert("case".into(), json!(case.label));
            tags.insert("value".into(), json!(case.value));
            info!("sweep case {rel}");
            let r = match &case.kind {
                CaseKind::Phantom { inclusion, samples } => {
                    let ccfg = ExperimentConfig {
                        generator: GeneratorConfig::SingleInclusion(inclusion.clone()),
                        count: *samples,
                        sweeps: Vec::new(),
                        ..cfg.clone()
                    };
                    generate_tagged(&ccfg, &dir, &tags)
                }
                CaseKind::Corruption(c) => {
                    let ccfg = ExperimentConfig {
                        corruption: Some(c.clone()),
                        sweeps: Vec::new(),
                        ..cfg.clone()
                    };
                    cmd_corrupt(&base, &ccfg, &dir)
                }
            };
            match r {
                Ok(o) => outcome.merge(o),
                Err(e) => outcome.failures.push(SampleFailure::new(&rel, cfg.seed, &e)),
            }
            index.push(SweepIndexEntry {
                sweep: case.sweep,
                label: case.label,
                value: case.value,
                dir: rel,
            });
        }
    }
    fs::write(out.join(SWEEP_INDEX), serde_json::to_string_pretty(&index)? + "\n")?;
    write_failures(out, &outcome.failures)?;
    if cfg.predictor.is_some() {
        outcome.merge(cmd_report(out, None, cfg, &out.join("report"))?);
    } else {
        info!("no predictor configured; run `report` once predictions exist");
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub sweep: String,
    pub case: String,
    pub value: f64,
    pub n: usize,
    pub rmse: Option<MeanSd>,
    /// RMSE inside the inclusion.
    pub rmse_inclusion: Option<MeanSd>,
    pub rmse_background: Option<MeanSd>,
    pub ssim: Option<MeanSd>,
}

fn opt_cell(m: &Option<MeanSd>) -> String {
    m.as_ref()
        .map_or(",".to_string(), |m| format!("{},{}", m.mean, m.sd))
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from(
        "sweep,case,value,n,rmse_mean,rmse_sd,rmse_inclusion_mean,rmse_inclusion_sd,rmse_background_mean,rmse_background_sd,ssim_mean,ssim_sd\n",
    );
    for r in rows {
        s += &format!(
            "{},{},{},{},{},{},{},{}\n",
            r.sweep,
            r.case,
            r.value,
            r.n,
            opt_cell(&r.rmse),
            opt_cell(&r.rmse_inclusion),
            opt_cell(&r.rmse_background),
            opt_cell(&r.ssim)
        );
    }
    s
}

/// Sweep aggregate: per case, mean and SD of the metrics, with RMSE inside
/// the inclusion as the headline.
///
/// Predictions for case `sweep/label` are read from `predictions/sweep/label`;
/// missing ones are produced by the configured predictor into the report
/// directory.
pub fn cmd_report(sweep_dir: &Path, predictions: Option<&Path>, cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let index: Vec<SweepIndexEntry> = serde_json::from_str(
        &fs::read_to_string(sweep_dir.join(SWEEP_INDEX))
            .map_err(|e| Error::Input(format!("{} is not a sweep directory: {e}", sweep_dir.display())))?,
    )?;
    fresh_dir(out)?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for case in &index {
        let data = sweep_dir.join(&case.dir);
        let r = (|| -> Result<Vec<EvalReport>> {
            let pred = match predictions {
                Some(p) => p.join(&case.dir),
                None => {
                    let p = out.join("predictions").join(&case.dir);
                    let predictor = cfg.predictor.as_ref().ok_or_else(|| {
                        Error::Config("report needs --predictions or a configured predictor".into())
                    })?;
                    fs::create_dir_all(p.parent().expect("nested path"))?;
                    run_predictor(predictor, &data, &p)?;
                    p
                }
            };
            evaluate_datasets(&data, &pred, &cfg.ssim)
        })();
        match r {
            Ok(reports) => {
                let col = |f: fn(&EvalReport) -> Option<f64>| {
                    MeanSd::of(&reports.iter().filter_map(f).collect::<Vec<_>>())
                };
                rows.push(AggregateRow {
                    sweep: case.sweep.clone(),
                    case: case.label.clone(),
                    value: case.value,
                    n: reports.len(),
                    rmse: col(|r| Some(r.rmse)),
                    rmse_inclusion: col(|r| r.region_rmse_inclusion),
                    rmse_background: col(|r| r.region_rmse_background),
                    ssim: col(|r| Some(r.ssim)),
                });
            }
            Err(e) => failures.push(SampleFailure::new(&case.dir, cfg.seed, &e)),
        }
    }
    fs::write(out.join("sweep_aggregate.csv"), aggregate_csv(&rows))?;
    fs::write(out.join("sweep_aggregate.json"), serde_json::to_string_pretty(&rows)? + "\n")?;
    if let Err(e) = plot::sweep_png(&rows, out) {
        warn!("sweep plots not rendered: {e}");
    }
    write_failures(out, &failures)?;
    Ok(Outcome {
        outputs: vec![out.to_path_buf()],
        failures,
    })
}

/// Regenerate the first `n` samples of a dataset and compare bytes with
/// the stored containers.
pub fn verify_regeneration(dataset: &Path, n: usize) -> Result<Vec<(String, bool)>> {
    let (manifest, dir) = DatasetManifest::read(dataset)?;
    manifest
        .samples
        .iter()
        .take(n)
        .map(|e| {
            let stored = fs::read(dir.join(&e.file))?;
            let again = sosgen_core::dataio::encode(&regenerate(&manifest, e)?)?;
            Ok((e.id.clone(), stored == again))
        })
        .collect()
}
