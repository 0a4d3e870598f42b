//! Experiment configuration.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sosgen_core::beamform::BeamformConfig;
use sosgen_core::geometry::{Scale, Setup, REFERENCE_SOS};
use sosgen_core::metrics::SsimConfig;
use sosgen_core::phantom::{Echogenicity, InclusionSpec, PhantomConfig, T2usConfig, SOS_RANGE};
use sosgen_core::sigproc::{CorruptionConfig, PreprocConfig};
use sosgen_core::solver::SolverOptions;
use sosgen_core::{Error, Result};

/// Published JSON schema for [`ExperimentConfig`].
pub const SCHEMA: &str = include_str!("../../../docs/experiment.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InclusionCase {
    pub background_sos: f64,
    pub echogenicity: Echogenicity,
    pub scatterer_fraction: f64,
    pub sos_contrast: f64,
    pub radius_lateral: f64,
    pub radius_axial: f64,
}

impl Default for InclusionCase {
    fn default() -> Self {
        InclusionCase {
            background_sos: REFERENCE_SOS,
            echogenicity: Echogenicity::Isoechoic,
            scatterer_fraction: 0.10,
            sos_contrast: 0.0,
            radius_lateral: 5e-3,
            radius_axial: 5e-3,
        }
    }
}

impl InclusionCase {
    pub fn spec(&self, setup: &Setup) -> InclusionSpec {
        InclusionSpec::centered(
            &setup.grid,
            self.echogenicity,
            self.scatterer_fraction,
            self.sos_contrast,
            self.radius_lateral,
            self.radius_axial,
        )
    }

    fn validate(&self) -> Result<()> {
        let inside = self.background_sos + self.sos_contrast;
        for v in [self.background_sos, inside] {
            if !(SOS_RANGE.0..=SOS_RANGE.1).contains(&v) {
                return Err(Error::Config(format!(
                    "inclusion case SoS {v} m/s outside [{}, {}]",
                    SOS_RANGE.0, SOS_RANGE.1
                )));
            }
        }
        if !(0.0..=0.6).contains(&self.scatterer_fraction) {
            return Err(Error::Config(format!(
                "scatterer_fraction {} outside [0, 0.6]",
                self.scatterer_fraction
            )));
        }
        if !(self.radius_lateral > 0.0 && self.radius_axial > 0.0) {
            return Err(Error::Config("inclusion radii must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorConfig {
    Ellipsoids,
    Layered,
    /// Patches of user-supplied grayscale images; sample `k` uses image
    /// `k mod images.len()`.
    T2us {
        images: Vec<PathBuf>,
        #[serde(default)]
        t2us: T2usConfig,
    },
    SingleInclusion(InclusionCase),
}

fn one() -> usize {
    1
}

fn all_classes() -> Vec<Echogenicity> {
    Echogenicity::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepSpec {
    /// Scatterer fraction inside the inclusion from `start` to `stop`.
    ScattererFraction {
        start: f64,
        stop: f64,
        step: f64,
        #[serde(default)]
        inclusion: InclusionCase,
        #[serde(default = "one")]
        samples_per_case: usize,
    },
    /// `count` contrasts `start + k step` for every listed class.
    SosContrast {
        start: f64,
        step: f64,
        count: usize,
        #[serde(default = "all_classes")]
        classes: Vec<Echogenicity>,
        #[serde(default)]
        inclusion: InclusionCase,
        #[serde(default = "one")]
        samples_per_case: usize,
    },
    /// Echogenicity classes at the inclusion's own contrast.
    Echogenicity {
        #[serde(default = "all_classes")]
        classes: Vec<Echogenicity>,
        #[serde(default)]
        inclusion: InclusionCase,
        #[serde(default = "one")]
        samples_per_case: usize,
    },
    /// Corrupt the configured dataset at each SNR.
    Snr { targets_db: Vec<f64> },
    /// Corrupt the configured dataset with each phase range.
    PhaseNoise { ranges_rad: Vec<f64> },
}

/// One point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCase {
    pub sweep: String,
    pub label: String,
    pub value: f64,
    pub kind: CaseKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CaseKind {
    Phantom { inclusion: InclusionCase, samples: usize },
    Corruption(CorruptionConfig),
}

impl SweepSpec {
    pub fn name(&self) -> &'static str {
        match self {
            SweepSpec::ScattererFraction { .. } => "scatterer_fraction",
            SweepSpec::SosContrast { .. } => "sos_contrast",
            SweepSpec::Echogenicity { .. } => "echogenicity",
            SweepSpec::Snr { .. } => "snr",
            SweepSpec::PhaseNoise { .. } => "phase_noise",
        }
    }

    pub fn is_corruption(&self) -> bool {
        matches!(self, SweepSpec::Snr { .. } | SweepSpec::PhaseNoise { .. })
    }

    /// Inclusion scatterer fraction 5 % to 55 % in 2.5 % steps.
    pub fn paper_scatterer_fraction() -> Self {
        SweepSpec::ScattererFraction {
            start: 0.05,
            stop: 0.55,
            step: 0.025,
            inclusion: InclusionCase::default(),
            samples_per_case: 1,
        }
    }

    /// ±50 m/s at the stated 7.5 m/s step (14 contrasts).
    pub fn paper_contrast_by_step() -> Self {
        SweepSpec::SosContrast {
            start: -50.0,
            step: 7.5,
            count: 14,
            classes: all_classes(),
            inclusion: InclusionCase::default(),
            samples_per_case: 1,
        }
    }

    /// ±50 m/s with the stated 20 cases.
    pub fn paper_contrast_by_count() -> Self {
        SweepSpec::SosContrast {
            start: -50.0,
            step: 100.0 / 19.0,
            count: 20,
            classes: all_classes(),
            inclusion: InclusionCase::default(),
            samples_per_case: 1,
        }
    }

    pub fn paper_snr() -> Self {
        SweepSpec::Snr {
            targets_db: vec![10.0, 15.0, 20.0],
        }
    }

    pub fn cases(&self, noise_seed: u64) -> Vec<SweepCase> {
        let sweep = self.name().to_string();
        let phantom = |label: String, value: f64, inclusion: InclusionCase, samples: usize| SweepCase {
            sweep: sweep.clone(),
            label,
            value,
            kind: CaseKind::Phantom { inclusion, samples },
        };
        match self {
            SweepSpec::ScattererFraction {
                start,
                stop,
                step,
                inclusion,
                samples_per_case,
            } => {
                let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
                (0..n)
                    .map(|k| {
                        let f = start + k as f64 * step;
                        let inc = InclusionCase {
                            scatterer_fraction: f,
                            ..inclusion.clone()
                        };
                        phantom(format!("{k:03}_f{:.4}", f), f, inc, *samples_per_case)
                    })
                    .collect()
            }
            SweepSpec::SosContrast {
                start,
                step,
                count,
                classes,
                inclusion,
                samples_per_case,
            } => classes
                .iter()
                .flat_map(|class| {
                    (0..*count).map(move |k| {
                        let c = start + k as f64 * step;
                        let inc = InclusionCase {
                            echogenicity: *class,
                            sos_contrast: c,
                            ..inclusion.clone()
                        };
                        (format!("{}_{k:03}_c{c:+.2}", class_name(*class)), c, inc)
                    })
                })
                .map(|(label, c, inc)| phantom(label, c, inc, *samples_per_case))
                .collect(),
            SweepSpec::Echogenicity {
                classes,
                inclusion,
                samples_per_case,
            } => classes
                .iter()
                .enumerate()
                .map(|(k, class)| {
                    let inc = InclusionCase {
                        echogenicity: *class,
                        ..inclusion.clone()
                    };
                    phantom(class_name(*class).to_string(), k as f64, inc, *samples_per_case)
                })
                .collect(),
            SweepSpec::Snr { targets_db } => targets_db
                .iter()
                .map(|&snr| SweepCase {
                    sweep: sweep.clone(),
                    label: format!("snr{snr}db"),
                    value: snr,
                    kind: CaseKind::Corruption(CorruptionConfig {
                        awgn_target_snr_db: Some(snr),
                        phase_range_rad: None,
                        noise_seed,
                    }),
                })
                .collect(),
            SweepSpec::PhaseNoise { ranges_rad } => ranges_rad
                .iter()
                .map(|&r| SweepCase {
                    sweep: sweep.clone(),
                    label: format!("phase{r}rad"),
                    value: r,
                    kind: CaseKind::Corruption(CorruptionConfig {
                        awgn_target_snr_db: None,
                        phase_range_rad: Some(r),
                        noise_seed,
                    }),
                })
                .collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("{} sweep: {msg}", self.name())));
        match self {
            SweepSpec::ScattererFraction {
                start,
                stop,
                step,
                inclusion,
                samples_per_case,
            } => {
                if !(*step > 0.0 && stop >= start) {
                    return bad(format!("need step > 0 and stop >= start (start {start}, stop {stop}, step {step})"));
                }
                if !(0.0..=0.6).contains(start) || !(0.0..=0.6).contains(stop) {
                    return bad("fractions must lie in [0, 0.6]".into());
                }
                if *samples_per_case == 0 {
                    return bad("samples_per_case must be positive".into());
                }
                inclusion.validate()
            }
            SweepSpec::SosContrast {
                start,
                step,
                count,
                classes,
                inclusion,
                samples_per_case,
            } => {
                if *count == 0 || classes.is_empty() || *samples_per_case == 0 {
                    return bad("count, classes and samples_per_case must be non-empty".into());
                }
                for k in [0, count - 1] {
                    InclusionCase {
                        sos_contrast: start + k as f64 * step,
                        ..inclusion.clone()
                    }
                    .validate()?;
                }
                Ok(())
            }
            SweepSpec::Echogenicity {
                classes,
                inclusion,
                samples_per_case,
            } => {
                if classes.is_empty() || *samples_per_case == 0 {
                    return bad("classes and samples_per_case must be non-empty".into());
                }
                inclusion.validate()
            }
            SweepSpec::Snr { targets_db } => {
                if targets_db.is_empty() || targets_db.iter().any(|v| v.is_nan()) {
                    return bad("targets_db must be a non-empty list of numbers".into());
                }
                Ok(())
            }
            SweepSpec::PhaseNoise { ranges_rad } => {
                if ranges_rad.is_empty() || ranges_rad.iter().any(|v| !(*v >= 0.0)) {
                    return bad("ranges_rad must be a non-empty list of non-negative numbers".into());
                }
                Ok(())
            }
        }
    }
}

fn class_name(e: Echogenicity) -> &'static str {
    match e {
        Echogenicity::Anechoic => "anechoic",
        Echogenicity::Hypoechoic => "hypoechoic",
        Echogenicity::Isoechoic => "isoechoic",
        Echogenicity::Hyperechoic => "hyperechoic",
    }
}

/// External prediction program.
///
/// Invoked as `command... --dataset DIR --out DIR`; it must write a dataset
/// to the output directory whose containers hold one SoS map per input id in
/// the GT payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfig {
    pub command: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub scale: Scale,
    /// Replaces the scale preset when present.
    pub setup: Option<Setup>,
    pub generator: GeneratorConfig,
    pub count: usize,
    pub seed: u64,
    pub phantom: Option<PhantomConfig>,
    pub solver: SolverOptions,
    pub preprocess: Option<PreprocConfig>,
    pub corruption: Option<CorruptionConfig>,
    pub beamform: BeamformConfig,
    /// SoS assumed by the beamformer.
    pub beamform_sos: f64,
    pub ssim: SsimConfig,
    pub sweeps: Vec<SweepSpec>,
    pub predictor: Option<PredictorConfig>,
    /// Also store the unprocessed RF of every sample.
    pub keep_raw: bool,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            scale: Scale::Desk4,
            setup: None,
            generator: GeneratorConfig::Ellipsoids,
            count: 10,
            seed: 0,
            phantom: None,
            solver: SolverOptions::default(),
            preprocess: None,
            corruption: None,
            beamform: BeamformConfig::default(),
            beamform_sos: REFERENCE_SOS,
            ssim: SsimConfig::default(),
            sweeps: Vec::new(),
            predictor: None,
            keep_raw: true,
            out: None,
            workers: None,
        }
    }
}

fn schema_validator() -> &'static jsonschema::Validator {
    static V: OnceLock<jsonschema::Validator> = OnceLock::new();
    V.get_or_init(|| {
        let schema: serde_json::Value = serde_json::from_str(SCHEMA).expect("published schema is JSON");
        jsonschema::validator_for(&schema).expect("published schema is valid")
    })
}

/// Check a JSON document against the published schema.
pub fn check_schema(doc: &serde_json::Value) -> Result<()> {
    let problems: Vec<String> = schema_validator()
        .iter_errors(doc)
        .map(|e| {
            let at = e.instance_path().as_str();
            format!("{}: {e}", if at.is_empty() { "/" } else { at })
        })
        .collect();
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!("schema violation: {}", problems.join("; "))))
    }
}

impl ExperimentConfig {
    /// Parse, check against the schema, and deserialize.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: serde_json::Value = serde_json::from_str(text)?;
        check_schema(&doc)?;
        Ok(serde_json::from_value(doc)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Make relative image paths relative to the config file.
    fn resolve_paths(&mut self, base: &Path) {
        if let GeneratorConfig::T2us { images, .. } = &mut self.generator {
            for p in images.iter_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }

    pub fn setup(&self) -> Setup {
        self.setup.clone().unwrap_or_else(|| self.scale.setup())
    }

    pub fn phantom_config(&self) -> PhantomConfig {
        self.phantom
            .clone()
            .unwrap_or_else(|| PhantomConfig::for_setup(&self.setup()))
    }

    pub fn preprocess_config(&self) -> PreprocConfig {
        self.preprocess
            .clone()
            .unwrap_or_else(|| PreprocConfig::for_setup(&self.setup()))
    }

    /// Semantic checks beyond the schema.
    pub fn validate(&self) -> Result<()> {
        let setup = self.setup();
        setup.validate()?;
        self.preprocess_config().validate(setup.transducer.rx_samples)?;
        if let Some(c) = &self.corruption {
            c.validate()?;
        }
        if !(self.beamform_sos > 0.0) {
            return Err(Error::Config(format!("beamform_sos must be positive (got {})", self.beamform_sos)));
        }
        if !(self.beamform.f_number > 0.0 && self.beamform.dyn_range_db > 0.0) {
            return Err(Error::Config("beamform f_number and dyn_range_db must be positive".into()));
        }
        match &self.generator {
            GeneratorConfig::T2us { images, .. } => {
                if images.is_empty() {
                    return Err(Error::Config("t2us generator needs at least one image".into()));
                }
                if let Some(missing) = images.iter().find(|p| !p.is_file()) {
                    return Err(Error::Config(format!("t2us image {} not found", missing.display())));
                }
            }
            GeneratorConfig::SingleInclusion(inc) => inc.validate()?,
            _ => {}
        }
        for s in &self.sweeps {
            s.validate()?;
        }
        if let Some(p) = &self.predictor {
            if p.command.is_empty() {
                return Err(Error::Config("predictor command is empty".into()));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        Ok(())
    }

    /// The part of the configuration that determines outputs; run-local
    /// settings (output path, worker count) are cleared.
    pub fn canonical(&self) -> serde_json::Value {
        let mut c = self.clone();
        c.out = None;
        c.workers = None;
        serde_json::to_value(c).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_satisfy_schema() {
        let mut cfg = ExperimentConfig {
            corruption: Some(CorruptionConfig::default()),
            preprocess: Some(PreprocConfig::default()),
            phantom: Some(PhantomConfig::default()),
            setup: Some(Scale::Desk8.setup()),
            predictor: Some(PredictorConfig {
                command: vec!["predict".into()],
            }),
            sweeps: vec![
                SweepSpec::paper_scatterer_fraction(),
                SweepSpec::paper_contrast_by_step(),
                SweepSpec::paper_snr(),
                SweepSpec::PhaseNoise { ranges_rad: vec![0.7] },
                SweepSpec::Echogenicity {
                    classes: all_classes(),
                    inclusion: InclusionCase::default(),
                    samples_per_case: 2,
                },
            ],
            out: Some("x".into()),
            workers: Some(2),
            ..Default::default()
        };
        for generator in [
            GeneratorConfig::Ellipsoids,
            GeneratorConfig::Layered,
            GeneratorConfig::SingleInclusion(InclusionCase::default()),
            GeneratorConfig::T2us {
                images: vec!["a.png".into()],
                t2us: T2usConfig::default(),
            },
        ] {
            cfg.generator = generator;
            let text = serde_json::to_string(&cfg).unwrap();
            let back = ExperimentConfig::from_json(&text).unwrap();
            assert_eq!(back, cfg);
        }
        check_schema(&serde_json::json!({})).unwrap();
    }

    #[test]
    fn schema_rejects_unknown_and_mistyped_keys() {
        for bad in [
            r#"{"cout": 3}"#,
            r#"{"count": -1}"#,
            r#"{"scale": "desk3"}"#,
            r#"{"generator": {"kind": "spheres"}}"#,
            r#"{"sweeps": [{"kind": "snr"}]}"#,
            r#"{"phantom": {"scatterer_fraktion": 0.1}}"#,
        ] {
            let err = ExperimentConfig::from_json(bad).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{bad}: {err}");
        }
    }

    #[test]
    fn scatterer_sweep_has_21_cases() {
        let cases = SweepSpec::paper_scatterer_fraction().cases(0);
        assert_eq!(cases.len(), 21);
        assert!((cases[20].value - 0.55).abs() < 1e-12);
    }

    #[test]
    fn contrast_presets_keep_count_and_step() {
        let by_step = SweepSpec::paper_contrast_by_step().cases(0);
        assert_eq!(by_step.len(), 14 * 4);
        assert!((by_step[13].value - 47.5).abs() < 1e-12);
        let by_count = SweepSpec::paper_contrast_by_count().cases(0);
        assert_eq!(by_count.len(), 20 * 4);
        assert!((by_count[19].value - 50.0).abs() < 1e-9);
        assert!(SweepSpec::paper_contrast_by_count().validate().is_ok());
    }

    #[test]
    fn semantic_validation() {
        let mut cfg = ExperimentConfig {
            sweeps: vec![SweepSpec::SosContrast {
                start: -300.0,
                step: 10.0,
                count: 3,
                classes: all_classes(),
                inclusion: InclusionCase::default(),
                samples_per_case: 1,
            }],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.sweeps.clear();
        assert!(cfg.validate().is_ok());
        cfg.workers = Some(0);
        assert!(cfg.validate().is_err());
        cfg.workers = None;
        cfg.generator = GeneratorConfig::T2us {
            images: vec!["/nonexistent.png".into()],
            t2us: T2usConfig::default(),
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn canonical_ignores_run_local_settings() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            out: Some("/tmp/x".into()),
            workers: Some(8),
            ..Default::default()
        };
        assert_eq!(a.canonical(), b.canonical());
    }
}
