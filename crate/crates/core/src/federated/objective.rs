//! Differentiable discriminator and generator objectives for one batch.

use fedmed_autograd::{Graph, Scalar, Tensor, Var};

use crate::atm::{TransformKind, ViewBatch};
use crate::error::{Error, Result};
use crate::losses::{LossComponents, LossWeights};
use crate::networks::{slices_to_tensor, DiscriminatorParams, GeneratorParams, Head};

/// ATM views stacked into one tensor per transform kind.
#[derive(Debug, Clone)]
pub struct ViewTensors<T> {
    pub sets: Vec<(TransformKind, Tensor<T>, Vec<usize>)>,
}

impl<T: Scalar> ViewTensors<T> {
    pub fn from_batch(vb: &ViewBatch) -> Result<Self> {
        let mut sets = Vec::new();
        for kind in TransformKind::ALL {
            let views: Vec<_> = vb.of_kind(kind).collect();
            if views.is_empty() {
                continue;
            }
            let imgs: Vec<_> = views.iter().map(|v| &v.image).collect();
            let labels = views.iter().map(|v| v.label).collect();
            sets.push((kind, slices_to_tensor(&imgs)?, labels));
        }
        Ok(Self { sets })
    }

    fn get(&self, kind: TransformKind) -> Option<(&Tensor<T>, &[usize])> {
        self.sets.iter().find(|(k, _, _)| *k == kind).map(|(_, t, l)| (t, l.as_slice()))
    }
}

fn head_of(kind: TransformKind) -> Head {
    match kind {
        TransformKind::Rotation => Head::Rotation,
        TransformKind::Translation => Head::Translation,
        TransformKind::Scale => Head::Scale,
    }
}

fn weight_of(w: &LossWeights, kind: TransformKind) -> f64 {
    match kind {
        TransformKind::Rotation => w.rot,
        TransformKind::Translation => w.trans,
        TransformKind::Scale => w.scale,
    }
}

fn set_component(c: &mut LossComponents, kind: TransformKind, v: f64) {
    match kind {
        TransformKind::Rotation => c.rot = v,
        TransformKind::Translation => c.trans = v,
        TransformKind::Scale => c.scale = v,
    }
}

fn weighted_sum<T: Scalar>(g: &mut Graph<T>, terms: &[(Var, f64)]) -> Option<Var> {
    let mut acc: Option<Var> = None;
    for &(v, w) in terms {
        if w == 0.0 {
            continue;
        }
        let s = g.scale(v, w);
        acc = Some(match acc {
            Some(a) => g.add(a, s),
            None => s,
        });
    }
    acc
}

/// Loss value, unweighted terms, and flat gradients of one update.
#[derive(Debug, Clone)]
pub struct Objective<T> {
    pub components: LossComponents,
    pub total: f64,
    pub grads: Vec<Vec<T>>,
}

/// `w.adv · L_adv(D) + Σ w_kind · ½ (CE_real + CE_fake)` for one discriminator.
///
/// Auxiliary terms with zero weight are skipped entirely and report 0.
pub fn discriminator_objective<T: Scalar>(
    d: &DiscriminatorParams<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    real_views: Option<&ViewTensors<T>>,
    fake_views: Option<&ViewTensors<T>>,
    w: &LossWeights,
) -> Result<Objective<T>> {
    let mut g = Graph::new();
    let bound = d.params.bind(&mut g, true);
    let mut c = LossComponents::default();
    let mut terms = Vec::new();

    let xr = g.constant(real.clone());
    let fr = d.encoder_graph(&mut g, &bound, xr);
    let lr = d.head_graph(&mut g, &bound, fr, Head::Realness);
    let adv_r = g.sigmoid_nll(lr, true);
    let xf = g.constant(fake.clone());
    let ff = d.encoder_graph(&mut g, &bound, xf);
    let lf = d.head_graph(&mut g, &bound, ff, Head::Realness);
    let adv_f = g.sigmoid_nll(lf, false);
    let adv = g.add(adv_r, adv_f);
    c.adv = g.value(adv).item().as_f64();
    terms.push((adv, w.adv));

    for kind in TransformKind::ALL {
        let wk = weight_of(w, kind);
        if wk == 0.0 {
            continue;
        }
        let (Some(rv), Some(fv)) = (real_views.and_then(|v| v.get(kind)), fake_views.and_then(|v| v.get(kind))) else {
            return Err(Error::InvalidState(format!(
                "discriminator {kind:?} loss needs views from both real and fake samples"
            )));
        };
        let mut ce = Vec::new();
        for (imgs, labels) in [rv, fv] {
            let x = g.constant(imgs.clone());
            let f = d.encoder_graph(&mut g, &bound, x);
            let logits = d.head_graph(&mut g, &bound, f, head_of(kind));
            ce.push(g.cross_entropy(logits, labels));
        }
        let sum = g.add(ce[0], ce[1]);
        let aux = g.scale(sum, 0.5);
        set_component(&mut c, kind, g.value(aux).item().as_f64());
        terms.push((aux, wk));
    }

    let total = weighted_sum(&mut g, &terms).ok_or_else(|| Error::invalid("every discriminator loss weight is zero"))?;
    let grads = g.backward(total);
    Ok(Objective { components: c, total: g.value(total).item().as_f64(), grads: vec![d.params.gradient(&grads, &bound)] })
}

/// Mean cross-entropy of the auxiliary heads on real views, per kind with a
/// non-zero weight. Constant in the generator parameters.
pub fn real_view_aux<T: Scalar>(d: &DiscriminatorParams<T>, views: &ViewTensors<T>, w: &LossWeights) -> LossComponents {
    let mut c = LossComponents::default();
    let mut g = Graph::new();
    let bound = d.params.bind(&mut g, false);
    for kind in TransformKind::ALL {
        if weight_of(w, kind) == 0.0 {
            continue;
        }
        if let Some((imgs, labels)) = views.get(kind) {
            let x = g.constant(imgs.clone());
            let f = d.encoder_graph(&mut g, &bound, x);
            let logits = d.head_graph(&mut g, &bound, f, head_of(kind));
            let ce = g.cross_entropy(logits, labels);
            set_component(&mut c, kind, g.value(ce).item().as_f64());
        }
    }
    c
}

/// Joint objective of both generators:
/// `w.adv · (−log D_B(G(x)) − log D_A(F(y))) + w.cyc · (|F(G(x)) − x| + |G(F(y)) − y|)`.
///
/// `d_b` judges modality B (the output of `g_ab`), `d_a` modality A. The
/// discriminators are frozen. `aux` holds real-view auxiliary terms, which are
/// added to the reported total but carry no gradient.
#[allow(clippy::too_many_arguments)]
pub fn generator_objective<T: Scalar>(
    g_ab: &GeneratorParams<T>,
    g_ba: &GeneratorParams<T>,
    d_b: &DiscriminatorParams<T>,
    d_a: &DiscriminatorParams<T>,
    x: &Tensor<T>,
    y: &Tensor<T>,
    aux: LossComponents,
    w: &LossWeights,
) -> Result<Objective<T>> {
    g_ab.check_input(x.shape())?;
    g_ba.check_input(y.shape())?;
    let mut g = Graph::new();
    let bg = g_ab.params.bind(&mut g, true);
    let bf = g_ba.params.bind(&mut g, true);
    let xv = g.constant(x.clone());
    let yv = g.constant(y.clone());
    let fake_b = g_ab.forward_graph(&mut g, &bg, xv);
    let fake_a = g_ba.forward_graph(&mut g, &bf, yv);

    let mut c = aux;
    let mut terms = Vec::new();
    if w.adv != 0.0 {
        let bdb = d_b.params.bind(&mut g, false);
        let bda = d_a.params.bind(&mut g, false);
        let eb = d_b.encoder_graph(&mut g, &bdb, fake_b);
        let lb = d_b.head_graph(&mut g, &bdb, eb, Head::Realness);
        let ea = d_a.encoder_graph(&mut g, &bda, fake_a);
        let la = d_a.head_graph(&mut g, &bda, ea, Head::Realness);
        let nb = g.sigmoid_nll(lb, true);
        let na = g.sigmoid_nll(la, true);
        let adv = g.add(nb, na);
        c.adv = g.value(adv).item().as_f64();
        terms.push((adv, w.adv));
    }
    if w.cyc != 0.0 {
        let x_cyc = g_ba.forward_graph(&mut g, &bf, fake_b);
        let y_cyc = g_ab.forward_graph(&mut g, &bg, fake_a);
        let lx = g.l1_mean(x_cyc, xv);
        let ly = g.l1_mean(y_cyc, yv);
        let cyc = g.add(lx, ly);
        c.cyc = g.value(cyc).item().as_f64();
        terms.push((cyc, w.cyc));
    }
    let constant = w.rot * c.rot + w.trans * c.trans + w.scale * c.scale;
    let Some(total) = weighted_sum(&mut g, &terms) else {
        let zeros = vec![vec![T::zero(); g_ab.params.len()], vec![T::zero(); g_ba.params.len()]];
        return Ok(Objective { components: c, total: constant, grads: zeros });
    };
    let grads = g.backward(total);
    Ok(Objective {
        components: c,
        total: g.value(total).item().as_f64() + constant,
        grads: vec![g_ab.params.gradient(&grads, &bg), g_ba.params.gradient(&grads, &bf)],
    })
}
