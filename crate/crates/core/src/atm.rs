//! Affine Transform Module: labelled rotated, translated, and rescaled views
//! for the discriminator's auxiliary heads.

use rand::seq::index;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::imaging::{rescale, rotate, translate, Interp, InterpSpec, Slice2D};
use crate::networks::{ROTATION_CLASSES, SCALE_CLASSES, TRANSLATION_CLASSES};
use crate::seeding::Rng;

/// Label alphabets of the three auxiliary tasks, indexed by class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtmClassSets {
    pub rotations: [f64; ROTATION_CLASSES],
    /// `(dx, dy)` in pixels.
    pub translations: [(f64, f64); TRANSLATION_CLASSES],
    pub scales: [f64; SCALE_CLASSES],
}

pub const CLASS_SETS: AtmClassSets = AtmClassSets {
    rotations: [0.0, 90.0, 180.0, 270.0],
    translations: [(-30.0, -30.0), (-30.0, 30.0), (30.0, -30.0), (30.0, 30.0)],
    scales: [0.9, 1.1, 1.2],
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Rotation,
    Translation,
    Scale,
}

impl TransformKind {
    pub const ALL: [TransformKind; 3] = [TransformKind::Rotation, TransformKind::Translation, TransformKind::Scale];

    pub fn classes(self) -> usize {
        match self {
            TransformKind::Rotation => ROTATION_CLASSES,
            TransformKind::Translation => TRANSLATION_CLASSES,
            TransformKind::Scale => SCALE_CLASSES,
        }
    }
}

/// Whether views were cut from real data or from generator output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SourceKind {
    Real,
    Fake,
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub image: Slice2D,
    pub kind: TransformKind,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewBatch {
    pub views: Vec<View>,
    pub k: usize,
    pub source: SourceKind,
}

impl ViewBatch {
    pub fn of_kind(&self, kind: TransformKind) -> impl Iterator<Item = &View> {
        self.views.iter().filter(move |v| v.kind == kind)
    }

    /// Concatenates the views of several batches; all must share `k` and source.
    pub fn merge(batches: Vec<ViewBatch>) -> Result<ViewBatch> {
        let first = batches.first().ok_or_else(|| Error::invalid("no view batches to merge"))?;
        let (k, source) = (first.k, first.source);
        if batches.iter().any(|b| b.k != k || b.source != source) {
            return Err(Error::invalid("view batches differ in k or source"));
        }
        Ok(ViewBatch { views: batches.into_iter().flat_map(|b| b.views).collect(), k, source })
    }
}

pub fn check_views(k: usize) -> Result<()> {
    if matches!(k, 1 | 2 | 4) {
        Ok(())
    } else {
        Err(Error::invalid(format!("views per transform must be 1, 2 or 4, got {k}")))
    }
}

/// `k` distinct labels when the class set allows it. Larger `k` takes every
/// class once and draws the remainder uniformly, so `k = 4` over three scales
/// repeats exactly one of them.
fn draw_labels(classes: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    if k <= classes {
        return index::sample(rng, classes, k).into_vec();
    }
    let mut labels = index::sample(rng, classes, classes).into_vec();
    labels.extend((classes..k).map(|_| rng.random_range(0..classes)));
    labels
}

/// Applies class `label` of `kind` to `img`.
pub fn apply_class(img: &Slice2D, kind: TransformKind, label: usize) -> Result<Slice2D> {
    if label >= kind.classes() {
        return Err(Error::invalid(format!("{kind:?} label {label} out of range")));
    }
    match kind {
        TransformKind::Rotation => rotate(img, CLASS_SETS.rotations[label], InterpSpec::background(Interp::Nearest, img)),
        TransformKind::Translation => {
            let (dx, dy) = CLASS_SETS.translations[label];
            translate(img, dx, dy, InterpSpec::background(Interp::Nearest, img))
        }
        TransformKind::Scale => rescale(img, CLASS_SETS.scales[label], InterpSpec::background(Interp::Bilinear, img)),
    }
}

/// `k` labelled views of `img` per transform kind, `3k` in total.
pub fn atm_sample_views(img: &Slice2D, k: usize, source: SourceKind, rng: &mut Rng) -> Result<ViewBatch> {
    check_views(k)?;
    let mut views = Vec::with_capacity(3 * k);
    for kind in TransformKind::ALL {
        for label in draw_labels(kind.classes(), k, rng) {
            views.push(View { image: apply_class(img, kind, label)?, kind, label });
        }
    }
    Ok(ViewBatch { views, k, source })
}
