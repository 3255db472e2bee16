//! Evaluation metrics (MSE, SSIM, NCC, keypoint RMSE), the paired t-test, and
//! the per-pair evaluation harness that produces the results table.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{threshold_mask, warp, AffineTransform, Image2D, Interp, Pt};
use crate::phantomgen::EvalPair;

/// Mean squared difference over all pixels.
pub fn mse(a: &Image2D, b: &Image2D) -> Result<f64> {
    same_shape(a, b)?;
    let n = (a.height() * a.width()) as f64;
    let sum: f64 = a
        .pixels
        .iter()
        .zip(b.pixels.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / n)
}

/// Mean local SSIM over all fully-interior windows.
///
/// Uniform `window x window` weights (default 7), constants C1 = 0.01^2 and
/// C2 = 0.03^2 for unit-range data.
pub fn ssim(a: &Image2D, b: &Image2D, window: usize) -> Result<f64> {
    same_shape(a, b)?;
    if window % 2 == 0 || window == 0 {
        return Err(Error::InvalidParameter(format!("SSIM window must be odd, got {window}")));
    }
    let (h, w) = (a.height(), a.width());
    if h < window || w < window {
        return Err(Error::InvalidParameter(format!(
            "image {h}x{w} smaller than SSIM window {window}"
        )));
    }
    const C1: f64 = 0.01 * 0.01;
    const C2: f64 = 0.03 * 0.03;
    let n = (window * window) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=(h - window) {
        for x0 in 0..=(w - window) {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + window {
                for x in x0..x0 + window {
                    let va = a.pixels[[y, x]];
                    let vb = b.pixels[[y, x]];
                    sx += va;
                    sy += vb;
                    sxx += va * va;
                    syy += vb * vb;
                    sxy += va * vb;
                }
            }
            let mx = sx / n;
            let my = sy / n;
            let vx = sxx / n - mx * mx;
            let vy = syy / n - my * my;
            let cxy = sxy / n - mx * my;
            total += (2.0 * mx * my + C1) * (2.0 * cxy + C2)
                / ((mx * mx + my * my + C1) * (vx + vy + C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Pearson correlation of flattened pixels. Zero variance in either image is
/// an undefined-metric error.
pub fn ncc(a: &Image2D, b: &Image2D) -> Result<f64> {
    same_shape(a, b)?;
    let n = (a.height() * a.width()) as f64;
    let ma = a.pixels.iter().sum::<f64>() / n;
    let mb = b.pixels.iter().sum::<f64>() / n;
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in a.pixels.iter().zip(b.pixels.iter()) {
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
        cov += (x - ma) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::UndefinedMetric("NCC of constant image".into()));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// RMSE over `||A_est * p_moving - p_fixed||` (exact point mapping).
pub fn keypoint_rmse(
    kps_moving: &[Pt],
    kps_fixed_gt: &[Pt],
    a_est: &AffineTransform,
) -> Result<f64> {
    if kps_moving.is_empty() || kps_moving.len() != kps_fixed_gt.len() {
        return Err(Error::InvalidParameter(format!(
            "keypoint lists must be nonempty and aligned: {} vs {}",
            kps_moving.len(),
            kps_fixed_gt.len()
        )));
    }
    let sum: f64 = kps_moving
        .iter()
        .zip(kps_fixed_gt.iter())
        .map(|(m, f)| {
            let p = a_est.apply(*m);
            (p.x - f.x).powi(2) + (p.y - f.y).powi(2)
        })
        .sum();
    Ok((sum / kps_moving.len() as f64).sqrt())
}

/// Two-sided paired t-test result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
}

/// Two-sided paired t-test on aligned samples.
///
/// The p-value comes from the Student-t CDF with n-1 degrees of freedom,
/// evaluated through the regularized incomplete beta function (Lentz continued
/// fraction, accurate to well below 1e-8).
pub fn paired_t_test(x: &[f64], y: &[f64]) -> Result<TTest> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "paired samples must have equal length >= 2: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let d: Vec<f64> = x.iter().zip(y.iter()).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Err(Error::DegenerateInput("all paired differences equal (zero variance)".into()));
    }
    let t = mean / (var / n).sqrt();
    let dof = n - 1.0;
    let p = betai(dof / 2.0, 0.5, dof / (dof + t * t));
    Ok(TTest { t, p })
}

fn ln_gamma(z: f64) -> f64 {
    // Lanczos approximation, g = 7.
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if z < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * z).sin()).ln() - ln_gamma(1.0 - z);
    }
    let z = z - 1.0;
    let mut x = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        x += c / (z + i as f64);
    }
    let t = z + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + x.ln()
}

fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 3e-14;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
fn betai(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let bt = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        bt * betacf(a, b, x) / a
    } else {
        1.0 - bt * betacf(b, a, 1.0 - x) / b
    }
}

/// Per-pair metric bundle for one method. `mse_x100` is MSE scaled by 100 as
/// reported in the results table; `ncc` is `None` when undefined (constant
/// image), excluded from means and counted in the summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub method: String,
    pub pair_id: String,
    pub mse_x100: f64,
    pub ssim: f64,
    pub ncc: Option<f64>,
    pub kp_rmse: f64,
}

/// A registration failure on one pair; recorded, never fatal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalFailure {
    pub method: String,
    pub pair_id: String,
    pub reason: String,
}

/// Anything that maps a (moving, fixed) pair to an affine estimate.
pub trait RegistrationMethod: Sync {
    fn name(&self) -> String;
    fn register(&self, moving: &Image2D, fixed: &Image2D) -> Result<AffineTransform>;
}

/// Trivial reference method: always predicts the identity transform.
pub struct IdentityMethod;

impl RegistrationMethod for IdentityMethod {
    fn name(&self) -> String {
        "identity".into()
    }

    fn register(&self, moving: &Image2D, _fixed: &Image2D) -> Result<AffineTransform> {
        Ok(AffineTransform::identity(moving.center()))
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Directory for per-pair contour-overlay PNGs; skipped when `None`.
    pub fig_dir: Option<std::path::PathBuf>,
    /// Restrict pixel metrics to the union of the two FOV masks instead of the
    /// full canvas.
    pub masked_overlap: bool,
    pub ssim_window: usize,
}

impl EvalOptions {
    pub fn new() -> Self {
        EvalOptions { fig_dir: None, masked_overlap: false, ssim_window: 7 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub failures: Vec<EvalFailure>,
    pub undefined_ncc: usize,
    pub methods: Vec<String>,
}

/// Runs every method on every pair and collects the metric table.
///
/// Pixel metrics compare `warp(moving, A_est)` against the fixed image over
/// the full canvas (or the FOV union when `masked_overlap` is set); keypoint
/// RMSE uses the exact landmark correspondences.
pub fn evaluate_all(
    methods: &[&dyn RegistrationMethod],
    pairs: &[EvalPair],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    use rayon::prelude::*;

    if let Some(dir) = &opts.fig_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut undefined_ncc = 0usize;
    for method in methods {
        let name = method.name();
        // registration is pure per pair; run pairs in parallel, keep order
        let results: Vec<_> = pairs
            .par_iter()
            .map(|pair| method.register(&pair.moving, &pair.fixed))
            .collect();
        for (pair, reg) in pairs.iter().zip(results) {
            match reg {
                Err(e) => failures.push(EvalFailure {
                    method: name.clone(),
                    pair_id: pair.pair_id.clone(),
                    reason: e.to_string(),
                }),
                Ok(a_est) => {
                    let warped = warp(&pair.moving, &a_est, Interp::Bilinear)?;
                    let (wv, fv) = if opts.masked_overlap {
                        masked_views(&warped, &pair.fixed)
                    } else {
                        (warped.clone(), pair.fixed.clone())
                    };
                    let m = mse(&wv, &fv)?;
                    let s = ssim(&wv, &fv, opts.ssim_window)?;
                    let c = match ncc(&wv, &fv) {
                        Ok(v) => Some(v),
                        Err(Error::UndefinedMetric(_)) => {
                            undefined_ncc += 1;
                            None
                        }
                        Err(e) => return Err(e),
                    };
                    let k = keypoint_rmse(&pair.kps_moving, &pair.kps_fixed, &a_est)?;
                    if let Some(dir) = &opts.fig_dir {
                        let path = dir.join(format!("pair_{}_{}.png", pair.pair_id, name));
                        overlay_png(&warped, &pair.fixed, &path)?;
                    }
                    records.push(EvalRecord {
                        method: name.clone(),
                        pair_id: pair.pair_id.clone(),
                        mse_x100: 100.0 * m,
                        ssim: s,
                        ncc: c,
                        kp_rmse: k,
                    });
                }
            }
        }
    }
    Ok(EvalReport {
        records,
        failures,
        undefined_ncc,
        methods: methods.iter().map(|m| m.name()).collect(),
    })
}

/// Zeroes both images outside the union of their FOV masks.
fn masked_views(a: &Image2D, b: &Image2D) -> (Image2D, Image2D) {
    let ma = threshold_mask(a, 0.0);
    let mb = threshold_mask(b, 0.0);
    let mut av = a.pixels.clone();
    let mut bv = b.pixels.clone();
    for y in 0..a.height() {
        for x in 0..a.width() {
            if ma.pixels[[y, x]] == 0 && mb.pixels[[y, x]] == 0 {
                av[[y, x]] = 0.0;
                bv[[y, x]] = 0.0;
            }
        }
    }
    (Image2D { pixels: av }, Image2D { pixels: bv })
}

/// Contour overlay: grayscale blend, warped-moving FOV contour in yellow,
/// fixed FOV contour in blue.
pub fn overlay_png(warped_moving: &Image2D, fixed: &Image2D, path: &Path) -> Result<()> {
    let (h, w) = (fixed.height(), fixed.width());
    let mm = threshold_mask(warped_moving, 0.0);
    let mf = threshold_mask(fixed, 0.0);
    let contour = |m: &crate::geometry::BinaryMask, x: usize, y: usize| -> bool {
        if m.pixels[[y, x]] == 0 {
            return false;
        }
        let mut edge = false;
        for (dy, dx) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
            let (yy, xx) = (y as i64 + dy, x as i64 + dx);
            if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                edge = true;
            } else if m.pixels[[yy as usize, xx as usize]] == 0 {
                edge = true;
            }
        }
        edge
    };
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = 0.5 * (warped_moving.pixels[[y, x]] + fixed.pixels[[y, x]]);
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            let mut px = [g, g, g];
            if contour(&mf, x, y) {
                px = [40, 90, 255];
            }
            if contour(&mm, x, y) {
                px = [255, 220, 40];
            }
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img.save(path).map_err(|e| Error::CorruptArtifact(format!("PNG write failed: {e}")))?;
    Ok(())
}

/// Writes `results.csv` with one row per successful (method, pair).
pub fn write_results_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in &report.records {
        w.serialize(r).map_err(|e| Error::CorruptArtifact(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<EvalRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec.map_err(|e| Error::CorruptArtifact(e.to_string()))?);
    }
    Ok(out)
}

struct MetricSpec {
    key: &'static str,
    label: &'static str,
    lower_is_better: bool,
}

const METRICS: [MetricSpec; 4] = [
    MetricSpec { key: "mse_x100", label: "MSE(x100) v", lower_is_better: true },
    MetricSpec { key: "ssim", label: "SSIM ^", lower_is_better: false },
    MetricSpec { key: "ncc", label: "NCC ^", lower_is_better: false },
    MetricSpec { key: "kp_rmse", label: "RMSE(px) v", lower_is_better: true },
];

fn metric_values(records: &[EvalRecord], method: &str, key: &str) -> Vec<(String, f64)> {
    records
        .iter()
        .filter(|r| r.method == method)
        .filter_map(|r| {
            let v = match key {
                "mse_x100" => Some(r.mse_x100),
                "ssim" => Some(r.ssim),
                "ncc" => r.ncc,
                "kp_rmse" => Some(r.kp_rmse),
                _ => None,
            };
            v.map(|v| (r.pair_id.clone(), v))
        })
        .collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Renders the markdown summary grid: mean +/- std per metric per method,
/// best in bold, second-best underlined, `*` when the best is significantly
/// better than the runner-up (paired t-test on shared pairs, p < 0.05).
pub fn write_summary_md(report: &EvalReport, path: &Path) -> Result<()> {
    let methods = &report.methods;
    let mut out = String::new();
    out.push_str("# Stitching evaluation summary\n\n");
    out.push_str(&format!(
        "Pairs evaluated per method: {}. Registration failures: {}. Undefined NCC values: {}.\n\n",
        report.records.len() / methods.len().max(1),
        report.failures.len(),
        report.undefined_ncc
    ));
    out.push_str("| Metric |");
    for m in methods {
        out.push_str(&format!(" {m} |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(methods.len()));
    out.push('\n');
    for spec in &METRICS {
        let stats: Vec<(String, f64, f64, Vec<(String, f64)>)> = methods
            .iter()
            .map(|m| {
                let pv = metric_values(&report.records, m, spec.key);
                let vals: Vec<f64> = pv.iter().map(|(_, v)| *v).collect();
                let (mean, std) = mean_std(&vals);
                (m.clone(), mean, std, pv)
            })
            .collect();
        let mut order: Vec<usize> = (0..stats.len()).filter(|&i| stats[i].1.is_finite()).collect();
        order.sort_by(|&a, &b| {
            let (x, y) = (stats[a].1, stats[b].1);
            if spec.lower_is_better { x.total_cmp(&y) } else { y.total_cmp(&x) }
        });
        let best = order.first().copied();
        let second = order.get(1).copied();
        let significant = match (best, second) {
            (Some(b), Some(s)) => {
                let joined = join_pairs(&stats[b].3, &stats[s].3);
                if joined.0.len() >= 2 {
                    paired_t_test(&joined.0, &joined.1).map(|tt| tt.p < 0.05).unwrap_or(false)
                } else {
                    false
                }
            }
            _ => false,
        };
        out.push_str(&format!("| {} |", spec.label));
        for (i, (_, mean, std, _)) in stats.iter().enumerate() {
            let cell = if mean.is_finite() {
                format!("{mean:.3} +/- {std:.3}")
            } else {
                "n/a".to_string()
            };
            let cell = if Some(i) == best {
                let star = if significant { "\\*" } else { "" };
                format!("**{cell}**{star}")
            } else if Some(i) == second {
                format!("<u>{cell}</u>")
            } else {
                cell
            };
            out.push_str(&format!(" {cell} |"));
        }
        out.push('\n');
    }
    if !report.failures.is_empty() {
        out.push_str("\n## Failures\n\n");
        for f in &report.failures {
            out.push_str(&format!("- {} on pair {}: {}\n", f.method, f.pair_id, f.reason));
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Inner join of two per-pair value lists on pair id, preserving order.
fn join_pairs(a: &[(String, f64)], b: &[(String, f64)]) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (id, v) in a {
        if let Some((_, w)) = b.iter().find(|(jid, _)| jid == id) {
            xs.push(*v);
            ys.push(*w);
        }
    }
    (xs, ys)
}

fn same_shape(a: &Image2D, b: &Image2D) -> Result<()> {
    if a.pixels.dim() != b.pixels.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", a.pixels.dim()),
            got: format!("{:?}", b.pixels.dim()),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_img(h: usize, w: usize, seed: u64) -> Image2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image2D::new(Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..1.0f64))).unwrap()
    }

    // literal-formula double-loop oracles, independent of the implementations

    fn mse_oracle(a: &Image2D, b: &Image2D) -> f64 {
        let mut s = 0.0;
        for y in 0..a.height() {
            for x in 0..a.width() {
                let d = a.pixels[[y, x]] - b.pixels[[y, x]];
                s += d * d;
            }
        }
        s / (a.height() * a.width()) as f64
    }

    fn ncc_oracle(a: &Image2D, b: &Image2D) -> f64 {
        let n = (a.height() * a.width()) as f64;
        let (mut sa, mut sb) = (0.0, 0.0);
        for y in 0..a.height() {
            for x in 0..a.width() {
                sa += a.pixels[[y, x]];
                sb += b.pixels[[y, x]];
            }
        }
        let (ma, mb) = (sa / n, sb / n);
        let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
        for y in 0..a.height() {
            for x in 0..a.width() {
                let da = a.pixels[[y, x]] - ma;
                let db = b.pixels[[y, x]] - mb;
                va += da * da;
                vb += db * db;
                cov += da * db;
            }
        }
        cov / (va.sqrt() * vb.sqrt())
    }

    fn ssim_oracle(a: &Image2D, b: &Image2D, win: usize) -> f64 {
        let c1 = 0.0001;
        let c2 = 0.0009;
        let n = (win * win) as f64;
        let mut acc = 0.0;
        let mut cnt = 0;
        for y0 in 0..=(a.height() - win) {
            for x0 in 0..=(a.width() - win) {
                let (mut mx, mut my) = (0.0, 0.0);
                for y in y0..y0 + win {
                    for x in x0..x0 + win {
                        mx += a.pixels[[y, x]];
                        my += b.pixels[[y, x]];
                    }
                }
                mx /= n;
                my /= n;
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for y in y0..y0 + win {
                    for x in x0..x0 + win {
                        vx += (a.pixels[[y, x]] - mx) * (a.pixels[[y, x]] - mx);
                        vy += (b.pixels[[y, x]] - my) * (b.pixels[[y, x]] - my);
                        cxy += (a.pixels[[y, x]] - mx) * (b.pixels[[y, x]] - my);
                    }
                }
                vx /= n;
                vy /= n;
                cxy /= n;
                acc += (2.0 * mx * my + c1) * (2.0 * cxy + c2)
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                cnt += 1;
            }
        }
        acc / cnt as f64
    }

    fn kp_rmse_oracle(km: &[Pt], kf: &[Pt], a: &AffineTransform) -> f64 {
        let mut s = 0.0;
        for (m, f) in km.iter().zip(kf) {
            let x = a.matrix[0][0] * m.x + a.matrix[0][1] * m.y + a.matrix[0][2];
            let y = a.matrix[1][0] * m.x + a.matrix[1][1] * m.y + a.matrix[1][2];
            s += (x - f.x).powi(2) + (y - f.y).powi(2);
        }
        (s / km.len() as f64).sqrt()
    }

    #[test]
    fn mse_trivial_and_oracle() {
        let a = rand_img(5, 5, 1);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let zero = Image2D::zeros(5, 5);
        let tenth = Image2D::new(Array2::from_elem((5, 5), 0.1)).unwrap();
        assert_abs_diff_eq!(mse(&zero, &tenth).unwrap(), 0.01, epsilon = 1e-15);
        let b = rand_img(5, 5, 2);
        assert_abs_diff_eq!(mse(&a, &b).unwrap(), mse_oracle(&a, &b), epsilon = 1e-12);
    }

    #[test]
    fn ssim_trivial_and_oracle() {
        let a = rand_img(9, 9, 3);
        assert_abs_diff_eq!(ssim(&a, &a, 7).unwrap(), 1.0, epsilon = 1e-12);
        let b = rand_img(9, 9, 4);
        assert_abs_diff_eq!(ssim(&a, &b, 7).unwrap(), ssim_oracle(&a, &b, 7), epsilon = 1e-9);
    }

    #[test]
    fn ssim_checkerboard_anticorrelated() {
        let cb = Image2D::new(Array2::from_shape_fn((9, 9), |(y, x)| ((x + y) % 2) as f64))
            .unwrap();
        let inv = Image2D::new(cb.pixels.mapv(|v| 1.0 - v)).unwrap();
        let got = ssim(&cb, &inv, 7).unwrap();
        assert_abs_diff_eq!(got, ssim_oracle(&cb, &inv, 7), epsilon = 1e-12);
        assert!(got < -0.99, "anti-correlated structure should drive SSIM to -1, got {got}");
    }

    #[test]
    fn ssim_window_errors() {
        let a = rand_img(5, 5, 5);
        assert!(ssim(&a, &a, 7).is_err());
        assert!(ssim(&a, &a, 4).is_err());
    }

    #[test]
    fn ncc_trivial_affine_invariance_and_oracle() {
        let a = rand_img(8, 8, 6);
        assert_abs_diff_eq!(ncc(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
        let scaled = Image2D::from_clamped(a.pixels.mapv(|v| 0.5 * v + 0.2));
        assert_abs_diff_eq!(ncc(&a, &scaled).unwrap(), 1.0, epsilon = 1e-12);
        let b = rand_img(8, 8, 7);
        assert_abs_diff_eq!(ncc(&a, &b).unwrap(), ncc_oracle(&a, &b), epsilon = 1e-12);
        let constant = Image2D::new(Array2::from_elem((8, 8), 0.3)).unwrap();
        assert!(matches!(ncc(&a, &constant), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn keypoint_rmse_cases() {
        let km = vec![Pt::new(1.0, 2.0), Pt::new(5.0, 5.0), Pt::new(9.0, 3.0)];
        let a = AffineTransform::from_params(
            &crate::geometry::TrsParams { tx: 1.5, ty: -0.5, theta: 0.2, sx: 1.1, sy: 0.9, shear: 0.0 },
            (5.0, 5.0),
        )
        .unwrap();
        let kf: Vec<Pt> = km.iter().map(|p| a.apply(*p)).collect();
        assert_abs_diff_eq!(keypoint_rmse(&km, &kf, &a).unwrap(), 0.0, epsilon = 1e-12);

        // identity estimate, every point offset by (3, 4) -> RMSE 5
        let shifted: Vec<Pt> = km.iter().map(|p| Pt::new(p.x + 3.0, p.y + 4.0)).collect();
        let id = AffineTransform::identity((5.0, 5.0));
        assert_abs_diff_eq!(keypoint_rmse(&km, &shifted, &id).unwrap(), 5.0, epsilon = 1e-12);

        // random case against the per-point loop oracle
        assert_abs_diff_eq!(
            keypoint_rmse(&km, &shifted, &a).unwrap(),
            kp_rmse_oracle(&km, &shifted, &a),
            epsilon = 1e-12
        );

        // permutation invariance (consistent permutation of both lists)
        let perm = [2usize, 0, 1];
        let kmp: Vec<Pt> = perm.iter().map(|&i| km[i]).collect();
        let kfp: Vec<Pt> = perm.iter().map(|&i| shifted[i]).collect();
        assert_abs_diff_eq!(
            keypoint_rmse(&km, &shifted, &a).unwrap(),
            keypoint_rmse(&kmp, &kfp, &a).unwrap(),
            epsilon = 1e-12
        );

        assert!(keypoint_rmse(&[], &[], &id).is_err());
    }

    #[test]
    fn t_test_degenerate_and_derived_values() {
        let x = [1.0, 2.0, 3.0];
        assert!(matches!(paired_t_test(&x, &x), Err(Error::DegenerateInput(_))));

        // d = [1,1,1,1,2]: mean 1.2, sd sqrt(0.2), t = 1.2/(sqrt(0.2)/sqrt(5)) = 6
        let y = [0.0; 5];
        let x = [1.0, 1.0, 1.0, 1.0, 2.0];
        let tt = paired_t_test(&x, &y).unwrap();
        assert_abs_diff_eq!(tt.t, 6.0, epsilon = 1e-12);
        // two-sided p at 4 dof for t=6, from the closed-form t(4) tail
        // P(|T|>t) = 1 - x(1 + x^2/2)/ (1+x^2/4)^(3/2)-style antiderivative,
        // evaluated independently with high-precision quadrature
        assert_abs_diff_eq!(tt.p, 0.0038834788, epsilon = 1e-8);

        // n=2, d=[1,3]: t = 2, 1 dof is the Cauchy distribution:
        // p = 2*(1 - (1/2 + atan(2)/pi)) = 0.29516723...
        let tt = paired_t_test(&[1.0, 3.0], &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(tt.t, 2.0, epsilon = 1e-12);
        let p_closed = 2.0 * (1.0 - (0.5 + 2.0f64.atan() / std::f64::consts::PI));
        assert_abs_diff_eq!(tt.p, p_closed, epsilon = 1e-8);
        assert_abs_diff_eq!(tt.p, 0.2951672, epsilon = 1e-4);
    }

    #[test]
    fn t_test_symmetry() {
        let x = [1.0, 2.0, 3.5, 0.5, 2.2];
        let y = [0.8, 2.5, 3.0, 1.0, 1.8];
        let a = paired_t_test(&x, &y).unwrap();
        let b = paired_t_test(&y, &x).unwrap();
        assert_abs_diff_eq!(a.t, -b.t, epsilon = 1e-12);
        assert_abs_diff_eq!(a.p, b.p, epsilon = 1e-12);
    }

    #[test]
    fn metric_symmetry() {
        let a = rand_img(9, 9, 8);
        let b = rand_img(9, 9, 9);
        assert_abs_diff_eq!(ssim(&a, &b, 7).unwrap(), ssim(&b, &a, 7).unwrap(), epsilon = 1e-12);
        assert_abs_diff_eq!(ncc(&a, &b).unwrap(), ncc(&b, &a).unwrap(), epsilon = 1e-12);
        assert_abs_diff_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn evaluate_all_with_oracle_and_identity() {
        use crate::geometry::TrsParams;
        use crate::phantomgen::EvalPair;

        let img = rand_img(32, 32, 10);
        let center = img.center();
        let gt = AffineTransform::from_params(&TrsParams::translation(3.0, -2.0), center).unwrap();
        let fixed = warp(&img, &gt, Interp::Bilinear).unwrap();
        let kps: Vec<Pt> = (0..10).map(|i| Pt::new(8.0 + i as f64, 10.0 + (i % 3) as f64)).collect();
        let kps_fixed: Vec<Pt> = kps.iter().map(|p| gt.apply(*p)).collect();
        let pairs = vec![EvalPair {
            pair_id: "p0".into(),
            moving: img.clone(),
            fixed: fixed.clone(),
            kps_moving: kps.clone(),
            kps_fixed: kps_fixed.clone(),
            gt_affine: gt,
        }];

        struct Oracle(AffineTransform);
        impl RegistrationMethod for Oracle {
            fn name(&self) -> String {
                "oracle".into()
            }
            fn register(&self, _m: &Image2D, _f: &Image2D) -> Result<AffineTransform> {
                Ok(self.0)
            }
        }

        let oracle = Oracle(gt);
        let id = IdentityMethod;
        let methods: Vec<&dyn RegistrationMethod> = vec![&oracle, &id];
        let report = evaluate_all(&methods, &pairs, &EvalOptions::new()).unwrap();
        assert_eq!(report.records.len(), 2);
        let orec = report.records.iter().find(|r| r.method == "oracle").unwrap();
        assert!(orec.kp_rmse <= 1e-6);
        assert_abs_diff_eq!(orec.ssim, 1.0, epsilon = 1e-9);
        let irec = report.records.iter().find(|r| r.method == "identity").unwrap();
        assert!(irec.kp_rmse > 1.0);

        // identity pairs: identity method is at the optimum
        let id_pairs = vec![EvalPair {
            pair_id: "same".into(),
            moving: img.clone(),
            fixed: img.clone(),
            kps_moving: kps.clone(),
            kps_fixed: kps,
            gt_affine: AffineTransform::identity(center),
        }];
        let methods: Vec<&dyn RegistrationMethod> = vec![&id];
        let report = evaluate_all(&methods, &id_pairs, &EvalOptions::new()).unwrap();
        let r = &report.records[0];
        assert_eq!(r.mse_x100, 0.0);
        assert_abs_diff_eq!(r.ssim, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.ncc.unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(r.kp_rmse, 0.0);
    }

    #[test]
    fn csv_and_summary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            EvalRecord { method: "a".into(), pair_id: "0".into(), mse_x100: 1.0, ssim: 0.9, ncc: Some(0.8), kp_rmse: 2.0 },
            EvalRecord { method: "a".into(), pair_id: "1".into(), mse_x100: 1.5, ssim: 0.8, ncc: None, kp_rmse: 2.5 },
            EvalRecord { method: "b".into(), pair_id: "0".into(), mse_x100: 2.0, ssim: 0.7, ncc: Some(0.6), kp_rmse: 4.0 },
            EvalRecord { method: "b".into(), pair_id: "1".into(), mse_x100: 2.5, ssim: 0.6, ncc: Some(0.5), kp_rmse: 5.0 },
        ];
        let report = EvalReport {
            records,
            failures: vec![],
            undefined_ncc: 1,
            methods: vec!["a".into(), "b".into()],
        };
        let csv_path = dir.path().join("results.csv");
        write_results_csv(&report, &csv_path).unwrap();
        let back = read_results_csv(&csv_path).unwrap();
        assert_eq!(back.len(), 4);
        assert_eq!(back[1].ncc, None);
        let md_path = dir.path().join("summary.md");
        write_summary_md(&report, &md_path).unwrap();
        let text = std::fs::read_to_string(&md_path).unwrap();
        assert!(text.contains("**1.000 +/- 0.354**"), "best MSE cell bolded:\n{text}");
        assert!(text.contains("<u>"), "second best underlined");
    }
}
