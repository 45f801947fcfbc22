//! Per-sample evaluation, mean/median summaries and result CSVs.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::ViewPose;
use crate::loss::{mse, psnr_from_mse, ssim};
use crate::raster::{magnitude, rasterize_forward, RenderConfig, SpectrumImage};
use crate::rfsim::TxSample;
use crate::scene::GaussianCloud;

pub const EVAL_HEADER: [&str; 4] = ["id", "ssim", "psnr", "mse"];

#[derive(Clone, Debug, PartialEq)]
pub struct SampleMetrics {
    pub id: String,
    pub ssim: f64,
    pub psnr: f64,
    pub mse: f64,
}

/// Compares `pred` with `gt`, reducing `pred` to magnitude when `gt` is a
/// magnitude image.
pub fn compare(id: &str, pred: &SpectrumImage, gt: &SpectrumImage) -> Result<SampleMetrics> {
    let pred = if gt.channels == 1 && pred.channels == 2 { magnitude(pred)? } else { pred.clone() };
    let m = mse(&pred, gt)?;
    Ok(SampleMetrics {
        id: id.to_string(),
        ssim: ssim(&pred, gt)?,
        psnr: psnr_from_mse(m),
        mse: m,
    })
}

/// Renders every sample and compares it with its ground truth.
pub fn evaluate(cloud: &GaussianCloud, samples: &[TxSample], pose: &ViewPose, cfg: &RenderConfig) -> Result<Vec<SampleMetrics>> {
    samples
        .iter()
        .map(|s| {
            let gt = &s.spectrum;
            let (img, _) = rasterize_forward(cloud, pose, s.tx_position, gt.width, gt.height, cfg)?;
            compare(&s.id, &img, gt)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub median: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("cannot aggregate an empty set".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Ok(Self {
            mean: values.iter().sum::<f64>() / n as f64,
            median,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSummary {
    pub count: usize,
    pub ssim: Aggregate,
    pub psnr: Aggregate,
    pub mse: Aggregate,
}

pub fn summarize(rows: &[SampleMetrics]) -> Result<MetricSummary> {
    let col = |f: fn(&SampleMetrics) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    Ok(MetricSummary {
        count: rows.len(),
        ssim: Aggregate::of(&col(|r| r.ssim))?,
        psnr: Aggregate::of(&col(|r| r.psnr))?,
        mse: Aggregate::of(&col(|r| r.mse))?,
    })
}

/// How reported mean/median MSE and PSNR relate.
///
/// PSNR is a decreasing function of MSE, so for an odd count the median
/// PSNR is exactly `psnr(median MSE)`; PSNR is convex in MSE, so the mean
/// PSNR is at least `psnr(mean MSE)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConsistencyReport {
    /// `|median PSNR − psnr(median MSE)|` in dB.
    pub median_gap_db: f64,
    /// `mean PSNR − psnr(mean MSE)` in dB; never negative for real data.
    pub mean_excess_db: f64,
}

impl ConsistencyReport {
    pub fn from_reported(mean_mse: f64, mean_psnr: f64, median_mse: f64, median_psnr: f64) -> Self {
        Self {
            median_gap_db: (median_psnr - psnr_from_mse(median_mse)).abs(),
            mean_excess_db: mean_psnr - psnr_from_mse(mean_mse),
        }
    }

    pub fn from_summary(s: &MetricSummary) -> Self {
        Self::from_reported(s.mse.mean, s.psnr.mean, s.mse.median, s.psnr.median)
    }

    /// `tolerance_db` absorbs rounding of reported figures and the
    /// even-count median.
    pub fn is_consistent(&self, tolerance_db: f64) -> bool {
        self.median_gap_db <= tolerance_db && self.mean_excess_db >= -tolerance_db
    }
}

pub fn write_eval_csv(path: &Path, rows: &[SampleMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(EVAL_HEADER).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.write_record([r.id.clone(), r.ssim.to_string(), r.psnr.to_string(), r.mse.to_string()])
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a per-sample result CSV with header `id,ssim,psnr,mse`. Extra
/// columns are ignored; `inf` is accepted for PSNR.
pub fn read_eval_csv(path: &Path) -> Result<Vec<SampleMetrics>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let header = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::format(path, format!("missing column '{name}'")))
    };
    let (ci, cs, cp, cm) = (column("id")?, column("ssim")?, column("psnr")?, column("mse")?);
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let num = |k: usize| -> Result<f64> {
            record[k]
                .trim()
                .parse()
                .map_err(|e| Error::format(path, format!("row {}: {}: {e}", line + 1, &header[k])))
        };
        rows.push(SampleMetrics {
            id: record[ci].to_string(),
            ssim: num(cs)?,
            psnr: num(cp)?,
            mse: num(cm)?,
        });
    }
    Ok(rows)
}

pub fn write_summary_csv(path: &Path, s: &MetricSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["metric", "mean", "median", "count"]).map_err(|e| Error::csv(path, e))?;
    for (name, a) in [("ssim", s.ssim), ("psnr", s.psnr), ("mse", s.mse)] {
        w.write_record([name.to_string(), a.mean.to_string(), a.median.to_string(), s.count.to_string()])
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
