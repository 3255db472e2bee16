//! Affine algebra, image warping, mask extraction, and the condition-patch
//! constructions used by pair generation.
//!
//! Conventions, fixed across the crate:
//! - a pixel coordinate is `(x, y)` = (column, row); image arrays index `[[y, x]]`;
//! - transforms are 3x3 homogeneous matrices acting on `(x, y, 1)` column vectors;
//! - the rotation/scale pivot is the image center, passed explicitly as `center`;
//! - warping is inverse-mapping: `out(p) = in(A^-1 * p)`, zero fill outside the grid.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Determinant magnitude below which a transform is treated as singular.
pub const SINGULAR_EPS: f64 = 1e-9;

/// A 2D point in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pt {
    pub x: f64,
    pub y: f64,
}

impl Pt {
    pub fn new(x: f64, y: f64) -> Self {
        Pt { x, y }
    }

    pub fn dist(&self, other: &Pt) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Translation / rotation / scale / shear parameterization about a pivot.
///
/// `shear` is 0 for transforms sampled by the pair generator; the stitching
/// network's 6-dof head may produce nonzero shear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrsParams {
    pub tx: f64,
    pub ty: f64,
    pub theta: f64,
    pub sx: f64,
    pub sy: f64,
    #[serde(default)]
    pub shear: f64,
}

impl TrsParams {
    pub fn identity() -> Self {
        TrsParams { tx: 0.0, ty: 0.0, theta: 0.0, sx: 1.0, sy: 1.0, shear: 0.0 }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        TrsParams { tx, ty, ..Self::identity() }
    }

    pub fn rotation(theta: f64) -> Self {
        TrsParams { theta, ..Self::identity() }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.tx, self.ty, self.theta, self.sx, self.sy, self.shear]
    }
}

/// Homogeneous 2D affine transform with its pivot.
///
/// The matrix is row-major; the last row is always `(0, 0, 1)` for transforms
/// built by this module. `center` is carried so the TRS decomposition is
/// well-defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub matrix: [[f64; 3]; 3],
    pub center: (f64, f64),
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

fn translate(tx: f64, ty: f64) -> [[f64; 3]; 3] {
    [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]]
}

impl AffineTransform {
    pub fn identity(center: (f64, f64)) -> Self {
        AffineTransform { matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], center }
    }

    /// Builds `Translate(center) * Translate(tx,ty) * Rotate(theta) * Scale(sx,sy)
    /// * Shear(k) * Translate(-center)`.
    ///
    /// Composition order is fixed: scale and shear apply first in scene space,
    /// then rotation, then translation, all pivoted at `center`.
    pub fn from_params(p: &TrsParams, center: (f64, f64)) -> Result<Self> {
        if p.sx <= 0.0 || p.sy <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "scale must be positive, got sx={}, sy={}",
                p.sx, p.sy
            )));
        }
        if !p.as_array().iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite affine parameter".into()));
        }
        let (s, c) = p.theta.sin_cos();
        let rot = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
        let scale = [[p.sx, 0.0, 0.0], [0.0, p.sy, 0.0], [0.0, 0.0, 1.0]];
        let shear = [[1.0, p.shear, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let mut m = translate(center.0, center.1);
        m = mat_mul(&m, &translate(p.tx, p.ty));
        m = mat_mul(&m, &rot);
        m = mat_mul(&m, &scale);
        m = mat_mul(&m, &shear);
        m = mat_mul(&m, &translate(-center.0, -center.1));
        Ok(AffineTransform { matrix: m, center })
    }

    /// Wraps a raw homogeneous matrix. Fails on singular input.
    pub fn from_matrix(matrix: [[f64; 3]; 3], center: (f64, f64)) -> Result<Self> {
        let t = AffineTransform { matrix, center };
        if t.det().abs() <= SINGULAR_EPS {
            return Err(Error::SingularTransform(SINGULAR_EPS));
        }
        Ok(t)
    }

    /// Determinant of the 2x2 linear part.
    pub fn det(&self) -> f64 {
        let m = &self.matrix;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    /// Recovers TRS(+shear) parameters about `self.center`.
    ///
    /// Exact (to rounding) for matrices built by [`AffineTransform::from_params`];
    /// for arbitrary invertible affines it returns the unique decomposition with
    /// `sx > 0`.
    pub fn params(&self) -> TrsParams {
        let m = &self.matrix;
        let l = [[m[0][0], m[0][1]], [m[1][0], m[1][1]]];
        let sx = (l[0][0] * l[0][0] + l[1][0] * l[1][0]).sqrt();
        let theta = l[1][0].atan2(l[0][0]);
        let (s, c) = theta.sin_cos();
        // R^-1 * L = [[sx, sx*shear], [0, sy]]
        let sy = -s * l[0][1] + c * l[1][1];
        let shear = if sx.abs() > 0.0 { (c * l[0][1] + s * l[1][1]) / sx } else { 0.0 };
        // Tc^-1 * A * Tc has translation column (tx, ty).
        let (cx, cy) = self.center;
        let tx = m[0][0] * cx + m[0][1] * cy + m[0][2] - cx;
        let ty = m[1][0] * cx + m[1][1] * cy + m[1][2] - cy;
        TrsParams { tx, ty, theta, sx, sy, shear }
    }

    pub fn apply(&self, p: Pt) -> Pt {
        let m = &self.matrix;
        Pt::new(
            m[0][0] * p.x + m[0][1] * p.y + m[0][2],
            m[1][0] * p.x + m[1][1] * p.y + m[1][2],
        )
    }

    /// Inverse transform; fails if `|det| <= 1e-9`.
    pub fn inverse(&self) -> Result<Self> {
        let d = self.det();
        if d.abs() <= SINGULAR_EPS {
            return Err(Error::SingularTransform(SINGULAR_EPS));
        }
        let m = &self.matrix;
        let li = [[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]];
        let tx = -(li[0][0] * m[0][2] + li[0][1] * m[1][2]);
        let ty = -(li[1][0] * m[0][2] + li[1][1] * m[1][2]);
        Ok(AffineTransform {
            matrix: [[li[0][0], li[0][1], tx], [li[1][0], li[1][1], ty], [0.0, 0.0, 1.0]],
            center: self.center,
        })
    }

    pub fn is_invertible(&self) -> bool {
        self.det().abs() > SINGULAR_EPS
    }
}

/// `compose(A, B)`: apply `B` first, then `A` (`result = A * B`).
///
/// The result carries `A`'s center; decompositions of composites are relative
/// to that pivot.
pub fn compose(a: &AffineTransform, b: &AffineTransform) -> Result<AffineTransform> {
    if !a.is_invertible() || !b.is_invertible() {
        return Err(Error::SingularTransform(SINGULAR_EPS));
    }
    Ok(AffineTransform { matrix: mat_mul(&a.matrix, &b.matrix), center: a.center })
}

#[derive(Serialize, Deserialize)]
struct AffineJson {
    matrix: [[f64; 3]; 3],
    params: TrsParams,
    center: [f64; 2],
}

impl Serialize for AffineTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        AffineJson { matrix: self.matrix, params: self.params(), center: [self.center.0, self.center.1] }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for AffineTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        // `params` in the file is derived metadata; the matrix is authoritative.
        let j = AffineJson::deserialize(d)?;
        Ok(AffineTransform { matrix: j.matrix, center: (j.center[0], j.center[1]) })
    }
}

/// Single-channel intensity image with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    pub pixels: Array2<f64>,
}

impl Image2D {
    /// Validates that all intensities are finite and inside [0, 1].
    pub fn new(pixels: Array2<f64>) -> Result<Self> {
        if let Some(bad) = pixels.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "image intensity {bad} outside [0,1]"
            )));
        }
        Ok(Image2D { pixels })
    }

    /// Clamps into [0, 1]; used where upstream math may overshoot slightly.
    pub fn from_clamped(mut pixels: Array2<f64>) -> Self {
        pixels.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Image2D { pixels }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Image2D { pixels: Array2::zeros((height, width)) }
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.width() as f64 - 1.0) / 2.0, (self.height() as f64 - 1.0) / 2.0)
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[[y, x]]
    }
}

/// H x W mask with values exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub pixels: Array2<u8>,
}

impl BinaryMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        BinaryMask { pixels: Array2::zeros((height, width)) }
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.iter().all(|&v| v == 0)
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        check_same_shape(self.pixels.dim(), other.pixels.dim())?;
        let mut out = self.pixels.clone();
        out.zip_mut_with(&other.pixels, |a, &b| *a &= b);
        Ok(BinaryMask { pixels: out })
    }

    /// Elementwise mask-image product `M (.) I`.
    pub fn apply(&self, image: &Image2D) -> Result<Image2D> {
        check_same_shape(self.pixels.dim(), image.pixels.dim())?;
        let mut out = image.pixels.clone();
        out.zip_mut_with(&self.pixels, |v, &m| {
            if m == 0 {
                *v = 0.0
            }
        });
        Ok(Image2D { pixels: out })
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (xi, yi) = (x.round() as i64, y.round() as i64);
        xi >= 0
            && yi >= 0
            && (xi as usize) < self.width()
            && (yi as usize) < self.height()
            && self.pixels[[yi as usize, xi as usize]] != 0
    }
}

fn check_same_shape(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch { expected: format!("{a:?}"), got: format!("{b:?}") });
    }
    Ok(())
}

/// Interpolation used by [`warp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Bilinear,
    Nearest,
}

fn sample_bilinear(px: &Array2<f64>, x: f64, y: f64) -> f64 {
    let (h, w) = px.dim();
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let mut acc = 0.0;
    for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
        let yy = y0 as i64 + dy;
        if yy < 0 || yy >= h as i64 || wy == 0.0 {
            continue;
        }
        for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
            let xx = x0 as i64 + dx;
            if xx < 0 || xx >= w as i64 || wx == 0.0 {
                continue;
            }
            acc += wy * wx * px[[yy as usize, xx as usize]];
        }
    }
    acc
}

fn sample_nearest(px: &Array2<f64>, x: f64, y: f64) -> f64 {
    let (h, w) = px.dim();
    let xi = x.round() as i64;
    let yi = y.round() as i64;
    if xi < 0 || yi < 0 || xi >= w as i64 || yi >= h as i64 {
        0.0
    } else {
        px[[yi as usize, xi as usize]]
    }
}

/// Inverse-mapping warp: `out(p) = in(A^-1 * p)` with zero fill outside the grid.
pub fn warp(image: &Image2D, a: &AffineTransform, interp: Interp) -> Result<Image2D> {
    let inv = a.inverse()?;
    let m = &inv.matrix;
    let (h, w) = image.pixels.dim();
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        let yf = y as f64;
        for x in 0..w {
            let xf = x as f64;
            let sx = m[0][0] * xf + m[0][1] * yf + m[0][2];
            let sy = m[1][0] * xf + m[1][1] * yf + m[1][2];
            out[[y, x]] = match interp {
                Interp::Bilinear => sample_bilinear(&image.pixels, sx, sy),
                Interp::Nearest => sample_nearest(&image.pixels, sx, sy),
            };
        }
    }
    Ok(Image2D { pixels: out })
}

/// Warps a mask with nearest interpolation and re-binarizes at 0.5.
pub fn warp_mask(mask: &BinaryMask, a: &AffineTransform) -> Result<BinaryMask> {
    let as_img = Image2D {
        pixels: mask.pixels.mapv(|v| v as f64),
    };
    let warped = warp(&as_img, a, Interp::Nearest)?;
    Ok(BinaryMask { pixels: warped.pixels.mapv(|v| u8::from(v > 0.5)) })
}

/// `H(I)`: mask = 1 where intensity > tau. Default tau is 0: generated
/// backgrounds are exactly zero.
pub fn threshold_mask(image: &Image2D, tau: f64) -> BinaryMask {
    BinaryMask { pixels: image.pixels.mapv(|v| u8::from(v > tau)) }
}

/// Training-mode condition: mask the *untransformed* image by the overlap of
/// its FOV with the affine-transformed FOV.
///
/// Returns `(C, M_c)` where `M_c = H(I) AND warp(H(I), A)` and `C = M_c (.) I`.
pub fn condition_train(
    image: &Image2D,
    a: &AffineTransform,
    tau: f64,
) -> Result<(Image2D, BinaryMask)> {
    let m = threshold_mask(image, tau);
    let m_aff = warp_mask(&m, a)?;
    let m_c = m.and(&m_aff)?;
    if m_c.is_empty() {
        return Err(Error::NoOverlap);
    }
    let c = m_c.apply(image)?;
    Ok((c, m_c))
}

/// Inference-mode condition: mask the *affine-transformed* image by the same
/// overlap region.
///
/// Returns `(C_s, M_c, I_aff)` with `I_aff = warp(I, A)` (bilinear),
/// `M_c = H(I) AND warp(H(I), A)` and `C_s = M_c (.) I_aff`.
pub fn condition_infer(
    image: &Image2D,
    a: &AffineTransform,
    tau: f64,
) -> Result<(Image2D, BinaryMask, Image2D)> {
    let i_aff = warp(image, a, Interp::Bilinear)?;
    let m = threshold_mask(image, tau);
    let m_aff = warp_mask(&m, a)?;
    let m_c = m.and(&m_aff)?;
    if m_c.is_empty() {
        return Err(Error::NoOverlap);
    }
    let c_s = m_c.apply(&i_aff)?;
    Ok((c_s, m_c, i_aff))
}

/// `|M_c| / max(|M|, 1)`.
pub fn overlap_fraction(m_c: &BinaryMask, m: &BinaryMask) -> Result<f64> {
    check_same_shape(m_c.pixels.dim(), m.pixels.dim())?;
    Ok(m_c.count() as f64 / (m.count().max(1) as f64))
}

/// Uniform sampling ranges for random affines. Translation in pixels, rotation
/// in radians, scaling unitless and isotropic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineRanges {
    pub t: (f64, f64),
    pub theta: (f64, f64),
    pub s: (f64, f64),
}

impl AffineRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in
            [("t", self.t), ("theta", self.theta), ("s", self.s)]
        {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::InvalidRange(format!("{name}: [{lo}, {hi}]")));
            }
        }
        if self.s.0 <= 0.0 {
            return Err(Error::InvalidRange(format!("s must be positive: [{}, {}]", self.s.0, self.s.1)));
        }
        Ok(())
    }

    /// Scales the translation range by `f`, keeping rotation and scale ranges.
    pub fn scale_translation(&self, f: f64) -> Self {
        AffineRanges { t: (self.t.0 * f, self.t.1 * f), ..*self }
    }
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Draws `tx, ty ~ U(t)`, `theta ~ U(theta)`, `sx = sy ~ U(s)` in that fixed
/// order, so a seeded RNG yields a reproducible transform stream.
pub fn sample_affine<R: Rng>(
    ranges: &AffineRanges,
    center: (f64, f64),
    rng: &mut R,
) -> Result<AffineTransform> {
    ranges.validate()?;
    let tx = uniform(rng, ranges.t.0, ranges.t.1);
    let ty = uniform(rng, ranges.t.0, ranges.t.1);
    let theta = uniform(rng, ranges.theta.0, ranges.theta.1);
    let s = uniform(rng, ranges.s.0, ranges.s.1);
    AffineTransform::from_params(
        &TrsParams { tx, ty, theta, sx: s, sy: s, shear: 0.0 },
        center,
    )
}
