//! Error metrics between ground-truth and predicted SoS maps.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DISPLAY_FLOOR: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 400.0,
        }
    }
}

fn same_shape(gt: &Array2<f64>, pred: &Array2<f64>) -> Result<()> {
    if gt.dim() != pred.dim() {
        return Err(Error::input(format!(
            "shape mismatch: gt {:?} vs pred {:?}",
            gt.dim(),
            pred.dim()
        )));
    }
    if gt.is_empty() {
        return Err(Error::input("empty maps"));
    }
    Ok(())
}

pub fn rmse(gt: &Array2<f64>, pred: &Array2<f64>) -> Result<f64> {
    same_shape(gt, pred)?;
    let sum = Zip::from(gt).and(pred).fold(0.0, |s, a, b| s + (a - b) * (a - b));
    Ok((sum / gt.len() as f64).sqrt())
}

pub fn mae(gt: &Array2<f64>, pred: &Array2<f64>) -> Result<f64> {
    same_shape(gt, pred)?;
    let sum = Zip::from(gt).and(pred).fold(0.0, |s, a, b| s + (a - b).abs());
    Ok(sum / gt.len() as f64)
}

/// Mean absolute percentage error, normalized by the ground truth.
pub fn mape(gt: &Array2<f64>, pred: &Array2<f64>) -> Result<f64> {
    same_shape(gt, pred)?;
    if gt.iter().any(|v| *v == 0.0) {
        return Err(Error::input("ground truth contains zeros"));
    }
    let sum = Zip::from(gt).and(pred).fold(0.0, |s, a, b| s + ((a - b) / a).abs());
    Ok(sum / gt.len() as f64 * 100.0)
}

fn gaussian_kernel(window: usize, sigma: f64) -> Vec<f64> {
    let half = (window / 2) as f64;
    let w: Vec<f64> = (0..window)
        .map(|k| (-((k as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Separable filtering, keeping only positions where the window fits.
fn filter_valid(src: &Array2<f64>, kernel: &[f64]) -> Array2<f64> {
    let (h, w) = src.dim();
    let k = kernel.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let rows: Array2<f64> = Array2::from_shape_fn((h, ow), |(i, j)| (0..k).map(|m| kernel[m] * src[[i, j + m]]).sum());
    Array2::from_shape_fn((oh, ow), |(i, j)| (0..k).map(|m| kernel[m] * rows[[i + m, j]]).sum())
}

/// Mean local SSIM over every position where the Gaussian window fits.
pub fn ssim(gt: &Array2<f64>, pred: &Array2<f64>, cfg: &SsimConfig) -> Result<f64> {
    same_shape(gt, pred)?;
    let (h, w) = gt.dim();
    if cfg.window == 0 || cfg.window % 2 == 0 || h < cfg.window || w < cfg.window {
        return Err(Error::input(format!(
            "ssim window {} does not fit a {h}x{w} map",
            cfg.window
        )));
    }
    let kernel = gaussian_kernel(cfg.window, cfg.sigma);
    let c1 = (cfg.k1 * cfg.data_range).powi(2);
    let c2 = (cfg.k2 * cfg.data_range).powi(2);
    // second moments about a common offset avoid cancellation at SoS magnitudes
    let shift = gt.mean().unwrap_or(0.0);
    let x = gt.mapv(|v| v - shift);
    let y = pred.mapv(|v| v - shift);
    let mx = filter_valid(&x, &kernel);
    let my = filter_valid(&y, &kernel);
    let xx = filter_valid(&(&x * &x), &kernel);
    let yy = filter_valid(&(&y * &y), &kernel);
    let xy = filter_valid(&(&x * &y), &kernel);
    let mut total = 0.0;
    for idx in 0..mx.len() {
        let (i, j) = (idx / mx.ncols(), idx % mx.ncols());
        let (sa, sb) = (mx[[i, j]], my[[i, j]]);
        let vx = xx[[i, j]] - sa * sa;
        let vy = yy[[i, j]] - sb * sb;
        let cov = xy[[i, j]] - sa * sb;
        let (a, b) = (sa + shift, sb + shift);
        total += ((2.0 * a * b + c1) * (2.0 * cov + c2)) / ((a * a + b * b + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

/// `|gt - pred|` with values below `floor` zeroed; for display only.
pub fn abs_diff_display(gt: &Array2<f64>, pred: &Array2<f64>, floor: f64) -> Result<Array2<f64>> {
    same_shape(gt, pred)?;
    Ok(Zip::from(gt).and(pred).map_collect(|a, b| {
        let d = (a - b).abs();
        if d < floor {
            0.0
        } else {
            d
        }
    }))
}

fn check_mask(mask: &Array2<bool>, shape: (usize, usize)) -> Result<usize> {
    if mask.dim() != shape {
        return Err(Error::input(format!(
            "mask shape {:?} differs from map shape {shape:?}",
            mask.dim()
        )));
    }
    let inside = mask.iter().filter(|m| **m).count();
    if inside == 0 || inside == mask.len() {
        return Err(Error::input("mask must be neither empty nor full"));
    }
    Ok(inside)
}

/// RMSE inside and outside `mask`.
pub fn region_rmse(gt: &Array2<f64>, pred: &Array2<f64>, mask: &Array2<bool>) -> Result<(f64, f64)> {
    same_shape(gt, pred)?;
    let inside = check_mask(mask, gt.dim())?;
    let (si, so) = Zip::from(gt)
        .and(pred)
        .and(mask)
        .fold((0.0, 0.0), |(si, so), a, b, &m| {
            let e = (a - b) * (a - b);
            if m {
                (si + e, so)
            } else {
                (si, so + e)
            }
        });
    let outside = gt.len() - inside;
    Ok(((si / inside as f64).sqrt(), (so / outside as f64).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sample_id: String,
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
    pub ssim: f64,
    pub region_rmse_inclusion: Option<f64>,
    pub region_rmse_background: Option<f64>,
}

pub fn evaluate(
    sample_id: &str,
    gt: &Array2<f64>,
    pred: &Array2<f64>,
    mask: Option<&Array2<bool>>,
    ssim_cfg: &SsimConfig,
) -> Result<EvalReport> {
    let (inc, bg) = match mask {
        Some(m) if check_mask(m, gt.dim()).is_ok() => {
            let (a, b) = region_rmse(gt, pred, m)?;
            (Some(a), Some(b))
        }
        _ => (None, None),
    };
    Ok(EvalReport {
        sample_id: sample_id.to_string(),
        rmse: rmse(gt, pred)?,
        mae: mae(gt, pred)?,
        mape: mape(gt, pred)?,
        ssim: ssim(gt, pred, ssim_cfg)?,
        region_rmse_inclusion: inc,
        region_rmse_background: bg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Population statistics; `None` for an empty input.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(MeanSd { mean, sd: var.sqrt() })
    }
}

/// Five-number summary for box plots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    /// Quartiles by linear interpolation between order statistics.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
        };
        Some(BoxStats {
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub count: usize,
    pub rmse: Option<MeanSd>,
    pub mae: Option<MeanSd>,
    pub mape: Option<MeanSd>,
    pub ssim: Option<MeanSd>,
    pub region_rmse_inclusion: Option<MeanSd>,
    pub region_rmse_background: Option<MeanSd>,
}

fn column(reports: &[EvalReport], f: impl Fn(&EvalReport) -> Option<f64>) -> Vec<f64> {
    reports.iter().filter_map(f).collect()
}

const METRICS: [&str; 6] = [
    "rmse",
    "mae",
    "mape",
    "ssim",
    "region_rmse_inclusion",
    "region_rmse_background",
];

fn metric(r: &EvalReport, name: &str) -> Option<f64> {
    match name {
        "rmse" => Some(r.rmse),
        "mae" => Some(r.mae),
        "mape" => Some(r.mape),
        "ssim" => Some(r.ssim),
        "region_rmse_inclusion" => r.region_rmse_inclusion,
        "region_rmse_background" => r.region_rmse_background,
        _ => None,
    }
}

pub fn summarize(reports: &[EvalReport]) -> EvalSummary {
    let stat = |name| MeanSd::of(&column(reports, |r| metric(r, name)));
    EvalSummary {
        count: reports.len(),
        rmse: stat("rmse"),
        mae: stat("mae"),
        mape: stat("mape"),
        ssim: stat("ssim"),
        region_rmse_inclusion: stat("region_rmse_inclusion"),
        region_rmse_background: stat("region_rmse_background"),
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn reports_csv(reports: &[EvalReport]) -> String {
    let mut out = format!("sample_id,{}\n", METRICS.join(","));
    for r in reports {
        let cells: Vec<String> = METRICS.iter().map(|m| cell(metric(r, m))).collect();
        let _ = writeln!(out, "{},{}", r.sample_id, cells.join(","));
    }
    out
}

/// One row per metric: `metric,min,q1,median,q3,max`.
pub fn box_plot_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("metric,min,q1,median,q3,max\n");
    for m in METRICS {
        if let Some(b) = BoxStats::of(&column(reports, |r| metric(r, m))) {
            let _ = writeln!(out, "{m},{},{},{},{},{}", b.min, b.q1, b.median, b.q3, b.max);
        }
    }
    out
}

pub fn write_reports(reports: &[EvalReport], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.csv"), reports_csv(reports))?;
    std::fs::write(dir.join("boxplot.csv"), box_plot_csv(reports))?;
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summarize(reports))?,
    )?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub frames: usize,
    pub inclusion_means: Vec<f64>,
    pub inclusion_sds: Vec<f64>,
    pub background_means: Vec<f64>,
    pub background_sds: Vec<f64>,
    /// Mean over frames of the per-frame SDs.
    pub mean_inclusion_sd: f64,
    pub mean_background_sd: f64,
    /// SD over frames of the per-frame means.
    pub inclusion_mean_sd: f64,
    pub background_mean_sd: f64,
}

/// Per-frame mean and SD inside and outside `mask`.
pub fn frame_stability(preds: &[Array2<f64>], mask: &Array2<bool>) -> Result<StabilityReport> {
    if preds.len() < 2 {
        return Err(Error::input(format!("need at least 2 frames, got {}", preds.len())));
    }
    let shape = preds[0].dim();
    check_mask(mask, shape)?;
    let mut stats = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for (k, p) in preds.iter().enumerate() {
        if p.dim() != shape {
            return Err(Error::input(format!("frame {k} has shape {:?}, expected {shape:?}", p.dim())));
        }
        let inside: Vec<f64> = Zip::from(p).and(mask).fold(Vec::new(), |mut v, x, &m| {
            if m {
                v.push(*x);
            }
            v
        });
        let outside: Vec<f64> = Zip::from(p).and(mask).fold(Vec::new(), |mut v, x, &m| {
            if !m {
                v.push(*x);
            }
            v
        });
        let a = MeanSd::of(&inside).expect("mask is non-empty");
        let b = MeanSd::of(&outside).expect("mask is not full");
        stats[0].push(a.mean);
        stats[1].push(a.sd);
        stats[2].push(b.mean);
        stats[3].push(b.sd);
    }
    let [im, isd, bm, bsd] = stats;
    let mean = |v: &[f64]| MeanSd::of(v).expect("frames").mean;
    let spread = |v: &[f64]| MeanSd::of(v).expect("frames").sd;
    Ok(StabilityReport {
        frames: preds.len(),
        mean_inclusion_sd: mean(&isd),
        mean_background_sd: mean(&bsd),
        inclusion_mean_sd: spread(&im),
        background_mean_sd: spread(&bm),
        inclusion_means: im,
        inclusion_sds: isd,
        background_means: bm,
        background_sds: bsd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rmse_examples() {
        let gt = Array2::from_elem((4, 4), 1500.0);
        assert_eq!(rmse(&gt, &gt).unwrap(), 0.0);
        assert_eq!(rmse(&gt, &Array2::from_elem((4, 4), 1510.0)).unwrap(), 10.0);
        let r = rmse(&array![[1500.0, 1500.0]], &array![[1490.0, 1520.0]]).unwrap();
        assert!((r - 250f64.sqrt()).abs() < 1e-12);
        assert!((r - 15.811).abs() < 1e-3);
        assert!(matches!(rmse(&gt, &Array2::zeros((2, 2))), Err(Error::Input(_))));
    }

    #[test]
    fn mae_mape_examples() {
        let gt = Array2::from_elem((3, 3), 1500.0);
        assert_eq!(mae(&gt, &gt).unwrap(), 0.0);
        assert_eq!(mape(&gt, &gt).unwrap(), 0.0);
        let p = Array2::from_elem((3, 3), 1515.0);
        assert_eq!(mae(&gt, &p).unwrap(), 15.0);
        assert!((mape(&gt, &p).unwrap() - 1.0).abs() < 1e-12);
        let gt = array![[1400.0, 1600.0]];
        let p = array![[1414.0, 1584.0]];
        assert_eq!(mae(&gt, &p).unwrap(), 15.0);
        assert!((mape(&gt, &p).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(mape(&array![[0.0]], &array![[1.0]]), Err(Error::Input(_))));
    }

    #[test]
    fn ssim_identity_and_constants() {
        let cfg = SsimConfig::default();
        let x = Array2::from_shape_fn((40, 30), |(i, j)| 1400.0 + ((i * 7 + j * 13) % 50) as f64);
        assert_eq!(ssim(&x, &x, &cfg).unwrap(), 1.0);
        let (a, b) = (1500.0, 1540.0);
        let c1 = (0.01f64 * 400.0).powi(2);
        let expected = (2.0 * a * b + c1) / (a * a + b * b + c1);
        let got = ssim(&Array2::from_elem((20, 20), a), &Array2::from_elem((20, 20), b), &cfg).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} {expected}");
    }

    #[test]
    fn display_floor() {
        let gt = Array2::from_elem((3, 3), 1500.0);
        assert!(abs_diff_display(&gt, &gt, DISPLAY_FLOOR).unwrap().iter().all(|v| *v == 0.0));
        let p = Array2::from_elem((3, 3), 1529.0);
        assert!(abs_diff_display(&gt, &p, DISPLAY_FLOOR).unwrap().iter().all(|v| *v == 0.0));
        let p = Array2::from_elem((3, 3), 1531.0);
        assert!(abs_diff_display(&gt, &p, DISPLAY_FLOOR).unwrap().iter().all(|v| *v == 31.0));
    }

    #[test]
    fn region_examples() {
        let gt = Array2::from_elem((4, 4), 1500.0);
        let mask = Array2::from_shape_fn((4, 4), |(i, _)| i < 2);
        assert_eq!(region_rmse(&gt, &gt, &mask).unwrap(), (0.0, 0.0));
        let p = Array2::from_shape_fn((4, 4), |(i, _)| if i < 2 { 1510.0 } else { 1500.0 });
        assert_eq!(region_rmse(&gt, &p, &mask).unwrap(), (10.0, 0.0));
        let checker = Array2::from_shape_fn((4, 4), |(i, j)| (i + j) % 2 == 0);
        let p = Array2::from_shape_fn((4, 4), |(i, j)| if (i + j) % 2 == 0 { 1510.0 } else { 1480.0 });
        assert_eq!(region_rmse(&gt, &p, &checker).unwrap(), (10.0, 20.0));
        assert!(region_rmse(&gt, &gt, &Array2::from_elem((4, 4), true)).is_err());
        assert!(region_rmse(&gt, &gt, &Array2::from_elem((4, 4), false)).is_err());
    }

    #[test]
    fn stability_examples() {
        let mask = Array2::from_shape_fn((10, 10), |(i, _)| i < 5);
        let f = Array2::from_elem((10, 10), 1500.0);
        let r = frame_stability(&[f.clone(), f.clone()], &mask).unwrap();
        assert_eq!(r.inclusion_means, vec![1500.0, 1500.0]);
        assert_eq!(r.inclusion_mean_sd, 0.0);
        let g = Array2::from_elem((10, 10), 1510.0);
        let r = frame_stability(&[f.clone(), g], &mask).unwrap();
        assert_eq!(r.inclusion_means, vec![1500.0, 1510.0]);
        assert_eq!(r.inclusion_sds, vec![0.0, 0.0]);
        assert!(matches!(frame_stability(&[f], &mask), Err(Error::Input(_))));
    }

    #[test]
    fn box_stats_quartiles() {
        let b = BoxStats::of(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!((b.min, b.q1, b.median, b.q3, b.max), (1.0, 2.0, 3.0, 4.0, 5.0));
        assert!(BoxStats::of(&[]).is_none());
    }

    #[test]
    fn csv_leaves_missing_regions_empty() {
        let r = EvalReport {
            sample_id: "s0".into(),
            rmse: 1.0,
            mae: 0.5,
            mape: 0.1,
            ssim: 0.9,
            region_rmse_inclusion: None,
            region_rmse_background: None,
        };
        let csv = reports_csv(&[r]);
        assert_eq!(csv.lines().nth(1).unwrap(), "s0,1,0.5,0.1,0.9,,");
    }
}
