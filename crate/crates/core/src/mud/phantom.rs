//! Synthetic two-modality brain phantoms.
//!
//! Every slice starts from a structure field `s(x, y)` in `[0, 1]`: nested
//! soft-edged ellipses for scalp, CSF, grey matter, white matter, two
//! ventricles, and an optional lesion, with per-subject jitter in position,
//! size, and tilt. Both modalities are rendered from the same field:
//!
//! ```text
//! A = clamp01(s + texture_a)
//! B = clamp01(map(s) + texture_b)
//! ```
//!
//! `map` is the [`ModalityMap`], a smooth increasing function with
//! `map(0) = 0`, so background stays black in both modalities. Textures are
//! low-amplitude separable sinusoids confined to the head. Slices are stored
//! in the training range, quantised to `f32` so they survive an archive
//! round trip bit-exactly.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Volume};
use crate::error::{Error, Result};
use crate::imaging::{normalize, Slice2D, ValueRange};
use crate::seeding;

/// Peak amplitude of either modality's texture, in metric units.
pub const TEXTURE_AMPLITUDE: f64 = 0.02;

/// Tissue levels of the structure field.
pub mod tissue {
    pub const SCALP: f64 = 0.55;
    pub const CSF: f64 = 0.15;
    pub const GREY: f64 = 0.45;
    pub const WHITE: f64 = 0.75;
    pub const VENTRICLE: f64 = 0.12;
    pub const LESION: f64 = 0.95;
}

/// Fixed intensity transfer from modality A structure to modality B.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModalityMap {
    /// `s (2 - s)`: brightens mid-tones, keeps both endpoints.
    #[default]
    Quadratic,
    /// `s^gamma`
    Gamma { gamma: f64 },
}

impl ModalityMap {
    /// Remap a metric-range intensity.
    pub fn apply(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, 1.0);
        match *self {
            ModalityMap::Quadratic => s * (2.0 - s),
            ModalityMap::Gamma { gamma } => s.powf(gamma),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ModalityMap::Gamma { gamma } if !(gamma.is_finite() && gamma > 0.0) => {
                Err(Error::invalid(format!("gamma must be positive, got {gamma}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub n_volumes: usize,
    pub slices_per_volume: usize,
    pub image_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub modality_map: ModalityMap,
    /// Acquisition index of the first generated slice.
    #[serde(default = "default_z_start")]
    pub z_start: usize,
}

fn default_z_start() -> usize {
    50
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            n_volumes: 20,
            slices_per_volume: 8,
            image_size: 64,
            seed: 0,
            modality_map: ModalityMap::default(),
            z_start: default_z_start(),
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_volumes < 2 {
            return Err(Error::invalid(format!(
                "phantom needs at least 2 volumes to form unpaired samples, got {}",
                self.n_volumes
            )));
        }
        if self.slices_per_volume == 0 {
            return Err(Error::invalid("phantom volumes need at least one slice"));
        }
        if self.image_size < crate::imaging::MIN_SIDE {
            return Err(Error::invalid(format!("image size {} is too small", self.image_size)));
        }
        self.modality_map.validate()
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    /// Radians.
    tilt: f64,
}

impl Ellipse {
    /// Soft membership with a one-pixel ramp across the boundary.
    fn membership(&self, x: f64, y: f64) -> f64 {
        let (c, s) = (self.tilt.cos(), self.tilt.sin());
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (c * dx + s * dy) / self.ax;
        let v = (-s * dx + c * dy) / self.ay;
        let rho = (u * u + v * v).sqrt();
        (0.5 + (1.0 - rho) * self.ax.min(self.ay)).clamp(0.0, 1.0)
    }
}

/// Per-subject geometry and texture draws.
#[derive(Debug, Clone)]
struct Subject {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    tilt: f64,
    white_scale: f64,
    ventricle_scale: f64,
    lesion: Option<(f64, f64, f64)>,
    texture_a: [f64; 4],
    texture_b: [f64; 4],
}

impl Subject {
    fn draw(spec: &PhantomSpec, index: usize) -> Self {
        let mut rng = seeding::stream(spec.seed, &["phantom", &index.to_string()]);
        let n = spec.image_size as f64;
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let cx = (n - 1.0) / 2.0 + u(-0.04, 0.04) * n;
        let cy = (n - 1.0) / 2.0 + u(-0.04, 0.04) * n;
        let ax = 0.36 * n * u(0.93, 1.07);
        let ay = 0.44 * n * u(0.93, 1.07);
        let tilt = u(-12.0, 12.0).to_radians();
        let white_scale = u(0.85, 1.0);
        let ventricle_scale = u(0.8, 1.3);
        let has_lesion = u(0.0, 1.0) < 0.5;
        let lesion = (u(-0.3, 0.3), u(-0.3, 0.3), u(0.05, 0.09));
        let texture_a = [u(2.0, 5.0), u(2.0, 5.0), u(0.0, 1.0), u(0.0, 1.0)];
        let texture_b = [u(5.0, 9.0), u(5.0, 9.0), u(0.0, 1.0), u(0.0, 1.0)];
        Self {
            cx,
            cy,
            ax,
            ay,
            tilt,
            white_scale,
            ventricle_scale,
            lesion: has_lesion.then_some(lesion),
            texture_a,
            texture_b,
        }
    }
}

/// Structure field and head mask of one slice, both row-major in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct StructureField {
    pub size: usize,
    pub structure: Vec<f64>,
    pub head_mask: Vec<f64>,
    texture_a: [f64; 4],
    texture_b: [f64; 4],
}

fn texture(params: &[f64; 4], size: usize, x: usize, y: usize) -> f64 {
    let n = size as f64;
    let tau = std::f64::consts::TAU;
    TEXTURE_AMPLITUDE
        * (tau * (params[0] * x as f64 / n + params[2])).sin()
        * (tau * (params[1] * y as f64 / n + params[3])).sin()
}

impl StructureField {
    pub fn texture_a(&self, x: usize, y: usize) -> f64 {
        self.head_mask[y * self.size + x] * texture(&self.texture_a, self.size, x, y)
    }

    pub fn texture_b(&self, x: usize, y: usize) -> f64 {
        self.head_mask[y * self.size + x] * texture(&self.texture_b, self.size, x, y)
    }
}

/// Structure field of volume `volume`, slice offset `slice` (0-based).
pub fn structure_field(spec: &PhantomSpec, volume: usize, slice: usize) -> StructureField {
    let subj = Subject::draw(spec, volume);
    let n = spec.image_size;
    let t = (slice as f64 + 0.5) / spec.slices_per_volume as f64 - 0.5;
    // cross-section widest below mid-volume, ventricles largest above it
    let shrink = (1.0 - (1.1 * (t + 0.15)).powi(2)).max(0.05).sqrt();
    let ellipse = |fx: f64, fy: f64, ox: f64, oy: f64| {
        let (c, s) = (subj.tilt.cos(), subj.tilt.sin());
        let (dx, dy) = (ox * subj.ax * shrink, oy * subj.ay * shrink);
        Ellipse {
            cx: subj.cx + c * dx - s * dy,
            cy: subj.cy + s * dx + c * dy,
            ax: (fx * subj.ax * shrink).max(0.5),
            ay: (fy * subj.ay * shrink).max(0.5),
            tilt: subj.tilt,
        }
    };
    let vent = subj.ventricle_scale * (1.0 - 1.2 * (t - 0.1).abs()).max(0.0);
    let mut layers = vec![
        (ellipse(1.0, 1.0, 0.0, 0.0), tissue::SCALP),
        (ellipse(0.9, 0.9, 0.0, 0.0), tissue::CSF),
        (ellipse(0.84, 0.84, 0.0, 0.0), tissue::GREY),
        (ellipse(0.62 * subj.white_scale, 0.62 * subj.white_scale, 0.0, 0.0), tissue::WHITE),
        (ellipse(0.07 * vent, 0.18 * vent, -0.12, -0.05), tissue::VENTRICLE),
        (ellipse(0.07 * vent, 0.18 * vent, 0.12, -0.05), tissue::VENTRICLE),
    ];
    if let Some((lx, ly, r)) = subj.lesion {
        layers.push((ellipse(r, r * subj.ax / subj.ay, lx, ly), tissue::LESION));
    }
    let mut structure = vec![0.0; n * n];
    let mut head_mask = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let (px, py) = (x as f64, y as f64);
            let mut s = 0.0;
            for (e, level) in &layers {
                let m = e.membership(px, py);
                s += (level - s) * m;
            }
            structure[y * n + x] = s;
            head_mask[y * n + x] = layers[0].0.membership(px, py);
        }
    }
    StructureField { size: n, structure, head_mask, texture_a: subj.texture_a, texture_b: subj.texture_b }
}

fn quantise(v: f64) -> f64 {
    v as f32 as f64
}

fn render(field: &StructureField, f: impl Fn(usize, usize, f64) -> f64) -> Result<Slice2D> {
    let n = field.size;
    let metric = Slice2D::from_fn(n, n, ValueRange::METRIC, |x, y| f(x, y, field.structure[y * n + x]).clamp(0.0, 1.0))?;
    let training = normalize(&metric, ValueRange::METRIC, ValueRange::TRAINING)?;
    let q = training.pixels().iter().map(|&v| quantise(v)).collect();
    Slice2D::new(n, n, q, ValueRange::TRAINING)
}

/// Modality A slice rendered from a structure field, in the training range.
pub fn render_a(field: &StructureField) -> Result<Slice2D> {
    render(field, |x, y, s| s + field.texture_a(x, y))
}

/// Modality B slice rendered from a structure field, in the training range.
pub fn render_b(field: &StructureField, map: ModalityMap) -> Result<Slice2D> {
    render(field, |x, y, s| map.apply(s) + field.texture_b(x, y))
}

pub fn subject_id(index: usize) -> String {
    format!("sub-{index:03}")
}

/// Deterministic two-modality phantom corpus.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut corpus = Corpus::default();
    for v in 0..spec.n_volumes {
        let mut slices_a = Vec::with_capacity(spec.slices_per_volume);
        let mut slices_b = Vec::with_capacity(spec.slices_per_volume);
        for z in 0..spec.slices_per_volume {
            let field = structure_field(spec, v, z);
            slices_a.push(render_a(&field)?);
            slices_b.push(render_b(&field, spec.modality_map)?);
        }
        let subject = subject_id(v);
        corpus.modality_a.push(Volume { subject: subject.clone(), z_start: spec.z_start, slices: slices_a });
        corpus.modality_b.push(Volume { subject, z_start: spec.z_start, slices: slices_b });
    }
    Ok(corpus)
}
