//! Single-channel images and the affine primitives built on them.
//!
//! Coordinates: `x` is the column index and grows rightward, `y` is the row
//! index and grows downward. Pixel `(x, y)` has its centre at integer
//! coordinates, and the image centre is `((W - 1) / 2, (H - 1) / 2)`.
//! Positive rotation angles turn the content counterclockwise as seen on
//! screen in this frame.
//!
//! All geometric transforms use inverse mapping: each output pixel pulls its
//! value from the source location it came from. Samples that land outside the
//! source take the interpolation fill value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SIDE: usize = 8;

/// Closed intensity interval an image declares its pixels to lie in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub lo: f64,
    pub hi: f64,
}

impl ValueRange {
    /// Range networks are trained in.
    pub const TRAINING: ValueRange = ValueRange { lo: -1.0, hi: 1.0 };
    /// Range metrics are computed in.
    pub const METRIC: ValueRange = ValueRange { lo: 0.0, hi: 1.0 };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(Error::invalid(format!("invalid value range [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slice2D {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
    range: ValueRange,
}

impl Slice2D {
    /// Row-major pixels. Fails unless every pixel is finite and inside `range`
    /// and both sides are at least [`MIN_SIDE`].
    pub fn new(height: usize, width: usize, pixels: Vec<f64>, range: ValueRange) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::invalid(format!("image {height}x{width} is smaller than {MIN_SIDE}x{MIN_SIDE}")));
        }
        if pixels.len() != height * width {
            return Err(Error::invalid(format!(
                "{} pixels cannot form a {height}x{width} image",
                pixels.len()
            )));
        }
        if let Some((i, v)) = pixels.iter().enumerate().find(|(_, v)| !v.is_finite() || !range.contains(**v)) {
            return Err(Error::invalid(format!(
                "pixel {i} = {v} is outside [{}, {}] or not finite",
                range.lo, range.hi
            )));
        }
        Ok(Self { height, width, pixels, range })
    }

    pub fn from_fn(height: usize, width: usize, range: ValueRange, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(height, width, pixels, range)
    }

    pub fn filled(height: usize, width: usize, value: f64, range: ValueRange) -> Result<Self> {
        Self::new(height, width, vec![value; height * width], range)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    /// Pixel at column `x`, row `y`.
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn transpose(&self) -> Self {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for x in 0..self.width {
            for y in 0..self.height {
                pixels.push(self.get(x, y));
            }
        }
        Self { height: self.width, width: self.height, pixels, range: self.range }
    }

    fn center(&self) -> (f64, f64) {
        ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Nearest,
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpSpec {
    pub method: Interp,
    pub fill_value: f64,
}

impl InterpSpec {
    pub fn new(method: Interp, fill_value: f64) -> Self {
        Self { method, fill_value }
    }

    /// Fill with the image's background (the bottom of its value range).
    pub fn background(method: Interp, img: &Slice2D) -> Self {
        Self { method, fill_value: img.range.lo }
    }

    fn check(&self, img: &Slice2D) -> Result<()> {
        if !self.fill_value.is_finite() || !img.range.contains(self.fill_value) {
            return Err(Error::invalid(format!(
                "fill value {} outside image range [{}, {}]",
                self.fill_value, img.range.lo, img.range.hi
            )));
        }
        Ok(())
    }
}

/// Rotation, translation, and isotropic rescale, applied in that order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    /// Degrees, counterclockwise.
    pub rotation_deg: f64,
    /// Pixels, positive moves content right.
    pub translate_x: f64,
    /// Pixels, positive moves content down.
    pub translate_y: f64,
    pub scale_ratio: f64,
}

impl Default for AffineParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl AffineParams {
    pub const IDENTITY: AffineParams =
        AffineParams { rotation_deg: 0.0, translate_x: 0.0, translate_y: 0.0, scale_ratio: 1.0 };

    /// Validates and wraps the rotation into `[-180, 180)`.
    pub fn new(rotation_deg: f64, translate_x: f64, translate_y: f64, scale_ratio: f64) -> Result<Self> {
        if !(rotation_deg.is_finite() && translate_x.is_finite() && translate_y.is_finite()) {
            return Err(Error::invalid("affine parameters must be finite"));
        }
        if !(scale_ratio.is_finite() && scale_ratio > 0.0) {
            return Err(Error::invalid(format!("scale ratio must be > 0, got {scale_ratio}")));
        }
        Ok(Self { rotation_deg: wrap_degrees(rotation_deg), translate_x, translate_y, scale_ratio })
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

fn wrap_degrees(d: f64) -> f64 {
    if (-180.0..180.0).contains(&d) {
        d
    } else {
        (d + 180.0).rem_euclid(360.0) - 180.0
    }
}

/// Inverse-maps every output pixel through `source_of` and samples the input.
fn resample(img: &Slice2D, interp: InterpSpec, source_of: impl Fn(f64, f64) -> (f64, f64)) -> Slice2D {
    let (h, w) = img.dims();
    let fill = interp.fill_value;
    let fetch = |xi: i64, yi: i64| -> f64 {
        if xi < 0 || yi < 0 || xi >= w as i64 || yi >= h as i64 {
            fill
        } else {
            img.pixels[yi as usize * w + xi as usize]
        }
    };
    let mut pixels = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = source_of(x as f64, y as f64);
            let v = match interp.method {
                Interp::Nearest => fetch(sx.round() as i64, sy.round() as i64),
                Interp::Bilinear => {
                    let (x0, y0) = (sx.floor(), sy.floor());
                    let (fx, fy) = (sx - x0, sy - y0);
                    let (xi, yi) = (x0 as i64, y0 as i64);
                    let top = fetch(xi, yi) * (1.0 - fx) + fetch(xi + 1, yi) * fx;
                    let bottom = fetch(xi, yi + 1) * (1.0 - fx) + fetch(xi + 1, yi + 1) * fx;
                    top * (1.0 - fy) + bottom * fy
                }
            };
            pixels.push(img.range.clamp(v));
        }
    }
    Slice2D { height: h, width: w, pixels, range: img.range }
}

/// Exact (cos, sin) for quarter turns so they stay pure index permutations.
fn cos_sin(degrees: f64) -> (f64, f64) {
    let d = degrees.rem_euclid(360.0);
    if d == 90.0 {
        (0.0, 1.0)
    } else if d == 180.0 {
        (-1.0, 0.0)
    } else if d == 270.0 {
        (0.0, -1.0)
    } else {
        let r = d.to_radians();
        (r.cos(), r.sin())
    }
}

/// Rotates about the image centre.
pub fn rotate(img: &Slice2D, degrees: f64, interp: InterpSpec) -> Result<Slice2D> {
    if !degrees.is_finite() {
        return Err(Error::invalid(format!("rotation angle must be finite, got {degrees}")));
    }
    interp.check(img)?;
    if degrees.rem_euclid(360.0) == 0.0 {
        return Ok(img.clone());
    }
    let (c, s) = cos_sin(degrees);
    let (cx, cy) = img.center();
    Ok(resample(img, interp, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        (cx + c * dx - s * dy, cy + s * dx + c * dy)
    }))
}

/// Shifts content by `(dx, dy)` pixels.
pub fn translate(img: &Slice2D, dx: f64, dy: f64, interp: InterpSpec) -> Result<Slice2D> {
    if !(dx.is_finite() && dy.is_finite()) {
        return Err(Error::invalid(format!("translation must be finite, got ({dx}, {dy})")));
    }
    interp.check(img)?;
    if dx == 0.0 && dy == 0.0 {
        return Ok(img.clone());
    }
    Ok(resample(img, interp, |x, y| (x - dx, y - dy)))
}

/// Scales content about the centre, keeping the original frame: ratios above
/// one crop the border away, ratios below one pad it with the fill value.
pub fn rescale(img: &Slice2D, ratio: f64, interp: InterpSpec) -> Result<Slice2D> {
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::invalid(format!("scale ratio must be > 0, got {ratio}")));
    }
    interp.check(img)?;
    if ratio == 1.0 {
        return Ok(img.clone());
    }
    let (cx, cy) = img.center();
    Ok(resample(img, interp, |x, y| (cx + (x - cx) / ratio, cy + (y - cy) / ratio)))
}

/// `rescale(translate(rotate(img)))`, each stage resampled separately.
pub fn apply_affine(img: &Slice2D, p: &AffineParams, interp: InterpSpec) -> Result<Slice2D> {
    let p = AffineParams::new(p.rotation_deg, p.translate_x, p.translate_y, p.scale_ratio)?;
    let r = rotate(img, p.rotation_deg, interp)?;
    let t = translate(&r, p.translate_x, p.translate_y, interp)?;
    rescale(&t, p.scale_ratio, interp)
}

/// Central window. With an odd size difference the extra row/column is
/// dropped from the bottom/right, so the window sits toward the top-left.
pub fn center_crop(img: &Slice2D, out_h: usize, out_w: usize) -> Result<Slice2D> {
    let (h, w) = img.dims();
    if out_h > h || out_w > w {
        return Err(Error::invalid(format!("cannot crop {out_h}x{out_w} from {h}x{w}")));
    }
    let top = (h - out_h) / 2;
    let left = (w - out_w) / 2;
    let mut pixels = Vec::with_capacity(out_h * out_w);
    for y in top..top + out_h {
        pixels.extend_from_slice(&img.pixels[y * w + left..y * w + left + out_w]);
    }
    Slice2D::new(out_h, out_w, pixels, img.range)
}

/// Affine intensity remap from `src` onto `dst`; the result declares `dst`.
pub fn normalize(img: &Slice2D, src: ValueRange, dst: ValueRange) -> Result<Slice2D> {
    if src.width().is_nan() || src.width() <= 0.0 {
        return Err(Error::invalid(format!("degenerate source range [{}, {}]", src.lo, src.hi)));
    }
    let k = dst.width() / src.width();
    let pixels = img.pixels.iter().map(|&v| dst.clamp(dst.lo + (v - src.lo) * k)).collect();
    Slice2D::new(img.height, img.width, pixels, dst)
}
