//! MSE, PSNR and SSIM for basis-density images.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// A square or rectangular image borrowed as a row-major slice.
#[derive(Clone, Copy, Debug)]
pub struct ImageView<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
}

impl<'a> ImageView<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} image",
                data.len()
            )));
        }
        Ok(ImageView { data, rows, cols })
    }

    /// Square image of side `sqrt(len)`.
    pub fn square(data: &'a [f64]) -> Result<Self> {
        let n = (data.len() as f64).sqrt().round() as usize;
        Self::new(data, n, n)
    }
}

fn same_shape(x: &ImageView<'_>, y: &ImageView<'_>) -> Result<()> {
    if x.rows != y.rows || x.cols != y.cols {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            x.rows, x.cols, y.rows, y.cols
        )));
    }
    Ok(())
}

pub fn mse(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} vs {} pixels", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(Error::Shape("empty images".into()));
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64)
}

/// `10 log10(peak^2 / mse)`; `+inf` for identical images.
pub fn psnr(x: &[f64], truth: &[f64], peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::invalid(format!("PSNR peak must be > 0, got {peak}")));
    }
    Ok(psnr_from_mse(mse(x, truth)?, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering: output is `(rows - k + 1) x (cols - k + 1)`.
fn filter_valid(img: &[f64], rows: usize, cols: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let oc = cols - k + 1;
    let or = rows - k + 1;
    let mut horiz = vec![0.0; rows * oc];
    for r in 0..rows {
        let src = &img[r * cols..(r + 1) * cols];
        for c in 0..oc {
            horiz[r * oc + c] = taps.iter().zip(&src[c..c + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; or * oc];
    for r in 0..or {
        for c in 0..oc {
            out[r * oc + c] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * horiz[(r + i) * oc + c])
                .sum();
        }
    }
    out
}

/// Mean SSIM over all fully-contained 11x11 Gaussian windows (sigma 1.5).
pub fn ssim(x: &ImageView<'_>, truth: &ImageView<'_>, data_range: f64) -> Result<f64> {
    same_shape(x, truth)?;
    if !(data_range > 0.0 && data_range.is_finite()) {
        return Err(Error::invalid(format!("SSIM data range must be > 0, got {data_range}")));
    }
    if x.rows < SSIM_WINDOW || x.cols < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            x.rows, x.cols
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (rows, cols) = (x.rows, x.cols);
    let blur = |img: &[f64]| filter_valid(img, rows, cols, &taps);
    let prod = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p * q).collect() };
    let mu_x = blur(x.data);
    let mu_y = blur(truth.data);
    let xx = blur(&prod(x.data, x.data));
    let yy = blur(&prod(truth.data, truth.data));
    let xy = blur(&prod(x.data, truth.data));
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let n = mu_x.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_db<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Db {
        Num(f64),
        Text(String),
    }
    match Db::deserialize(d)? {
        Db::Num(v) => Ok(v),
        Db::Text(t) if t == "inf" => Ok(f64::INFINITY),
        Db::Text(t) => Err(serde::de::Error::custom(format!("bad PSNR value {t:?}"))),
    }
}

/// Metrics for one channel; `peak` doubles as the SSIM data range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub mse: f64,
    #[serde(serialize_with = "ser_db", deserialize_with = "de_db")]
    pub psnr: f64,
    pub ssim: f64,
    pub peak: f64,
}

impl ChannelMetrics {
    /// Peak and data range are the maximum of `truth`.
    pub fn compute(pred: &[f64], truth: &[f64]) -> Result<Self> {
        let peak = truth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(peak > 0.0) {
            return Err(Error::invalid("ground truth has no positive pixel; PSNR peak undefined"));
        }
        let xv = ImageView::square(pred)?;
        let tv = ImageView::square(truth)?;
        Ok(ChannelMetrics {
            mse: mse(pred, truth)?,
            psnr: psnr(pred, truth, peak)?,
            ssim: ssim(&xv, &tv, peak)?,
            peak,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bone: ChannelMetrics,
    pub water: ChannelMetrics,
}

impl MetricReport {
    pub fn compute(pred_f: &[f64], pred_g: &[f64], truth_f: &[f64], truth_g: &[f64]) -> Result<Self> {
        Ok(MetricReport {
            bone: ChannelMetrics::compute(pred_f, truth_f)?,
            water: ChannelMetrics::compute(pred_g, truth_g)?,
        })
    }
}

/// Per-channel means over a sample set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AveragedReport {
    pub model: String,
    pub samples: usize,
    pub bone: ChannelMetrics,
    pub water: ChannelMetrics,
}

impl AveragedReport {
    /// The reported peak is the mean per-sample peak.
    pub fn from_reports(model: impl Into<String>, reports: &[MetricReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::invalid("no reports to average"));
        }
        let n = reports.len() as f64;
        let avg = |pick: fn(&MetricReport) -> &ChannelMetrics| ChannelMetrics {
            mse: reports.iter().map(|r| pick(r).mse).sum::<f64>() / n,
            psnr: reports.iter().map(|r| pick(r).psnr).sum::<f64>() / n,
            ssim: reports.iter().map(|r| pick(r).ssim).sum::<f64>() / n,
            peak: reports.iter().map(|r| pick(r).peak).sum::<f64>() / n,
        };
        Ok(AveragedReport {
            model: model.into(),
            samples: reports.len(),
            bone: avg(|r| &r.bone),
            water: avg(|r| &r.water),
        })
    }
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.2}")
    }
}

/// Table with one row per metric and material and one column per model.
pub fn table_csv(reports: &[AveragedReport]) -> String {
    let mut out = String::from("metric");
    for r in reports {
        out.push(',');
        out.push_str(&r.model);
    }
    out.push('\n');
    let rows: [(&str, fn(&AveragedReport) -> String); 6] = [
        ("Average MSE (Bone)", |r| format!("{:.3e}", r.bone.mse)),
        ("Average PSNR (Bone) (dB)", |r| fmt_db(r.bone.psnr)),
        ("Average SSIM (Bone)", |r| format!("{:.6}", r.bone.ssim)),
        ("Average MSE (Water)", |r| format!("{:.3e}", r.water.mse)),
        ("Average PSNR (Water) (dB)", |r| fmt_db(r.water.psnr)),
        ("Average SSIM (Water)", |r| format!("{:.6}", r.water.ssim)),
    ];
    for (label, cell) in rows {
        out.push_str(label);
        for r in reports {
            out.push(',');
            out.push_str(&cell(r));
        }
        out.push('\n');
    }
    out
}
