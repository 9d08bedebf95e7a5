//! Misaligned unpaired data (MUD) construction.
//!
//! A corpus is split by volume across virtual hospitals; each hospital then
//! forms paired (same subject) or unpaired (different subject, same slice
//! index) samples and distorts both images of every sample with independently
//! drawn affine parameters.

pub mod phantom;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::imaging::{apply_affine, AffineParams, Interp, InterpSpec, Slice2D};
use crate::seeding::Rng;

pub use phantom::{generate_phantom, ModalityMap, PhantomSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    None,
    Slight,
    Severe,
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseKind::None => "none",
            NoiseKind::Slight => "slight",
            NoiseKind::Severe => "severe",
        })
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(NoiseKind::None),
            "slight" => Ok(NoiseKind::Slight),
            "severe" => Ok(NoiseKind::Severe),
            other => Err(Error::invalid(format!("unknown noise level '{other}'"))),
        }
    }
}

/// Ranges misalignment parameters are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevel {
    pub kind: NoiseKind,
    /// Degrees.
    pub rotation: (f64, f64),
    /// Pixels, applied to each axis independently.
    pub translation: (f64, f64),
    pub scale: (f64, f64),
}

impl NoiseLevel {
    pub const NONE: NoiseLevel =
        NoiseLevel { kind: NoiseKind::None, rotation: (0.0, 0.0), translation: (0.0, 0.0), scale: (1.0, 1.0) };
    pub const SLIGHT: NoiseLevel =
        NoiseLevel { kind: NoiseKind::Slight, rotation: (-3.0, 3.0), translation: (-15.0, 15.0), scale: (0.9, 1.1) };
    pub const SEVERE: NoiseLevel =
        NoiseLevel { kind: NoiseKind::Severe, rotation: (-90.0, 90.0), translation: (-30.0, 30.0), scale: (0.9, 1.2) };

    pub fn from_kind(kind: NoiseKind) -> Self {
        match kind {
            NoiseKind::None => Self::NONE,
            NoiseKind::Slight => Self::SLIGHT,
            NoiseKind::Severe => Self::SEVERE,
        }
    }

    pub fn contains(&self, p: &AffineParams) -> bool {
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        inside(p.rotation_deg, self.rotation)
            && inside(p.translate_x, self.translation)
            && inside(p.translate_y, self.translation)
            && inside(p.scale_ratio, self.scale)
    }
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Independent uniform draw of every component.
pub fn sample_affine(noise: &NoiseLevel, rng: &mut Rng) -> AffineParams {
    let rotation_deg = uniform(rng, noise.rotation);
    let translate_x = uniform(rng, noise.translation);
    let translate_y = uniform(rng, noise.translation);
    let scale_ratio = uniform(rng, noise.scale);
    AffineParams { rotation_deg, translate_x, translate_y, scale_ratio }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    /// Source modality.
    pub img_a: Slice2D,
    /// Target modality.
    pub img_b: Slice2D,
    pub subject_a: String,
    pub subject_b: String,
    pub slice_index: usize,
    pub applied_a: AffineParams,
    pub applied_b: AffineParams,
    pub paired: bool,
    pub distorted: bool,
}

pub fn make_pair(corpus: &Corpus, subject_a: &str, subject_b: &str, slice_index: usize) -> Result<SamplePair> {
    let va = corpus.volume_a(subject_a).ok_or_else(|| Error::NotFound(format!("subject {subject_a} in modality A")))?;
    let vb = corpus.volume_b(subject_b).ok_or_else(|| Error::NotFound(format!("subject {subject_b} in modality B")))?;
    let img_a = va
        .slice(slice_index)
        .ok_or_else(|| Error::NotFound(format!("slice {slice_index} of {subject_a} in modality A")))?;
    let img_b = vb
        .slice(slice_index)
        .ok_or_else(|| Error::NotFound(format!("slice {slice_index} of {subject_b} in modality B")))?;
    Ok(SamplePair {
        img_a: img_a.clone(),
        img_b: img_b.clone(),
        subject_a: subject_a.to_owned(),
        subject_b: subject_b.to_owned(),
        slice_index,
        applied_a: AffineParams::IDENTITY,
        applied_b: AffineParams::IDENTITY,
        paired: subject_a == subject_b,
        distorted: false,
    })
}

/// Warps each image of the pair with its own draw from `noise`.
pub fn distort_pair(pair: &SamplePair, noise: &NoiseLevel, rng: &mut Rng) -> Result<SamplePair> {
    if pair.distorted {
        return Err(Error::InvalidState(format!(
            "pair ({}, {}, z={}) is already distorted",
            pair.subject_a, pair.subject_b, pair.slice_index
        )));
    }
    let applied_a = sample_affine(noise, rng);
    let applied_b = sample_affine(noise, rng);
    let warp = |img: &Slice2D, p: &AffineParams| apply_affine(img, p, InterpSpec::background(Interp::Bilinear, img));
    Ok(SamplePair {
        img_a: warp(&pair.img_a, &applied_a)?,
        img_b: warp(&pair.img_b, &applied_b)?,
        applied_a,
        applied_b,
        distorted: true,
        ..pair.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Pairing {
    Paired,
    Unpaired,
    /// The given fraction of the client's subjects stay paired.
    Mixed { paired_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    pub client_id: u32,
    pub proportion: f64,
    pub pairing: Pairing,
    pub noise: NoiseKind,
}

/// Four hospitals holding 40/30/20/10 % of the volumes; the first has paired
/// data, the rest unpaired, all misaligned at `noise`.
pub fn paper_scenario(noise: NoiseKind) -> Vec<ClientSpec> {
    [0.4, 0.3, 0.2, 0.1]
        .iter()
        .enumerate()
        .map(|(i, &p)| ClientSpec {
            client_id: i as u32 + 1,
            proportion: p,
            pairing: if i == 0 { Pairing::Paired } else { Pairing::Unpaired },
            noise,
        })
        .collect()
}

pub fn check_proportions(proportions: &[f64]) -> Result<()> {
    if proportions.is_empty() {
        return Err(Error::invalid("no client proportions given"));
    }
    if let Some(p) = proportions.iter().find(|p| !(p.is_finite() && **p > 0.0 && **p <= 1.0)) {
        return Err(Error::invalid(format!("client proportion {p} is outside (0, 1]")));
    }
    let total: f64 = proportions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("client proportions sum to {total}, expected 1")));
    }
    Ok(())
}

/// `round(p_i × total)` per client, with any rounding remainder settled on the
/// client holding the largest proportion.
pub fn shard_sizes(total: usize, proportions: &[f64]) -> Result<Vec<usize>> {
    check_proportions(proportions)?;
    if total < proportions.len() {
        return Err(Error::invalid(format!("{total} volumes cannot be split across {} clients", proportions.len())));
    }
    let mut sizes: Vec<i64> = proportions.iter().map(|p| (p * total as f64).round() as i64).collect();
    let diff = total as i64 - sizes.iter().sum::<i64>();
    let largest = proportions
        .iter()
        .enumerate()
        .fold(0, |best, (i, p)| if *p > proportions[best] { i } else { best });
    sizes[largest] += diff;
    if let Some(i) = sizes.iter().position(|&s| s < 1) {
        return Err(Error::invalid(format!(
            "client {} would receive no volumes out of {total}",
            i + 1
        )));
    }
    Ok(sizes.into_iter().map(|s| s as usize).collect())
}

/// Volume-level assignment of subjects to one client.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub spec: ClientSpec,
    pub subjects: Vec<String>,
}

/// Shuffles the corpus subjects and deals them out in contiguous blocks.
pub fn partition_clients(corpus: &Corpus, specs: &[ClientSpec], rng: &mut Rng) -> Result<Vec<ClientShard>> {
    let proportions: Vec<f64> = specs.iter().map(|s| s.proportion).collect();
    let mut subjects = corpus.subjects();
    let sizes = shard_sizes(subjects.len(), &proportions)?;
    subjects.shuffle(rng);
    let mut rest = subjects.as_slice();
    let mut shards = Vec::with_capacity(specs.len());
    for (spec, size) in specs.iter().zip(sizes) {
        let (mine, tail) = rest.split_at(size);
        let mut mine = mine.to_vec();
        mine.sort();
        shards.push(ClientShard { spec: spec.clone(), subjects: mine });
        rest = tail;
    }
    Ok(shards)
}

/// Training data held by one hospital.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: u32,
    /// Share of all training volumes held by this client.
    pub proportion: f64,
    pub noise: NoiseLevel,
    pub subjects: Vec<String>,
    /// Undistorted pairs, kept so misalignment can be redrawn per epoch.
    pub clean: Vec<SamplePair>,
    pub pairs: Vec<SamplePair>,
}

impl ClientDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Fresh misalignment draws for every sample.
    pub fn redistort(&self, rng: &mut Rng) -> Result<Vec<SamplePair>> {
        self.clean.iter().map(|p| distort_pair(p, &self.noise, rng)).collect()
    }
}

/// (subject_a, subject_b) assignments for a shard.
fn subject_pairing(shard: &ClientShard, rng: &mut Rng) -> Result<Vec<(String, String)>> {
    let mut subjects = shard.subjects.clone();
    subjects.shuffle(rng);
    let n = subjects.len();
    let n_paired = match shard.spec.pairing {
        Pairing::Paired => n,
        Pairing::Unpaired => 0,
        Pairing::Mixed { paired_fraction } => {
            if !(0.0..=1.0).contains(&paired_fraction) {
                return Err(Error::invalid(format!("paired fraction {paired_fraction} outside [0, 1]")));
            }
            let k = (paired_fraction * n as f64).round() as usize;
            // a single leftover subject cannot be unpaired with anyone
            match n - k {
                1 if k > 0 => k - 1,
                1 => n,
                _ => k,
            }
        }
    };
    let unpaired = &subjects[n_paired..];
    if unpaired.len() == 1 {
        return Err(Error::invalid(format!(
            "client {} needs at least two volumes for unpaired samples",
            shard.spec.client_id
        )));
    }
    let mut out: Vec<(String, String)> = subjects[..n_paired].iter().map(|s| (s.clone(), s.clone())).collect();
    // cyclic shift of a shuffled list has no fixed points
    for (i, s) in unpaired.iter().enumerate() {
        out.push((s.clone(), unpaired[(i + 1) % unpaired.len()].clone()));
    }
    out.sort();
    Ok(out)
}

/// Forms and distorts every sample of a shard.
pub fn build_client_dataset(corpus: &Corpus, shard: &ClientShard, total_volumes: usize, rng: &mut Rng) -> Result<ClientDataset> {
    let noise = NoiseLevel::from_kind(shard.spec.noise);
    let mut clean = Vec::new();
    for (sa, sb) in subject_pairing(shard, rng)? {
        let va = corpus.volume_a(&sa).ok_or_else(|| Error::NotFound(format!("subject {sa}")))?;
        let vb = corpus.volume_b(&sb).ok_or_else(|| Error::NotFound(format!("subject {sb}")))?;
        for z in va.z_range().filter(|z| vb.slice(*z).is_some()) {
            clean.push(make_pair(corpus, &sa, &sb, z)?);
        }
    }
    let pairs = clean.iter().map(|p| distort_pair(p, &noise, rng)).collect::<Result<Vec<_>>>()?;
    Ok(ClientDataset {
        client_id: shard.spec.client_id,
        proportion: shard.subjects.len() as f64 / total_volumes as f64,
        noise,
        subjects: shard.subjects.clone(),
        clean,
        pairs,
    })
}

/// Partition plus per-client sample construction in one deterministic pass.
pub fn build_clients(corpus: &Corpus, specs: &[ClientSpec], rng: &mut Rng) -> Result<Vec<ClientDataset>> {
    let shards = partition_clients(corpus, specs, rng)?;
    let total = corpus.subjects().len();
    shards.iter().map(|s| build_client_dataset(corpus, s, total, rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from;
    use std::collections::BTreeSet;

    fn corpus(n: usize) -> Corpus {
        generate_phantom(&PhantomSpec { n_volumes: n, slices_per_volume: 2, image_size: 16, seed: 3, ..Default::default() })
            .unwrap()
    }

    #[test]
    fn none_noise_is_identity() {
        let mut rng = rng_from(1);
        for _ in 0..10 {
            assert_eq!(sample_affine(&NoiseLevel::NONE, &mut rng), AffineParams::IDENTITY);
        }
    }

    #[test]
    fn severe_draws_stay_in_range() {
        let mut rng = rng_from(2);
        for _ in 0..1000 {
            let p = sample_affine(&NoiseLevel::SEVERE, &mut rng);
            assert!(NoiseLevel::SEVERE.contains(&p), "{p:?}");
        }
    }

    #[test]
    fn pairing_flags_follow_subjects() {
        let c = corpus(3);
        let p = make_pair(&c, "sub-000", "sub-000", 50).unwrap();
        assert!(p.paired);
        let q = make_pair(&c, "sub-000", "sub-002", 51).unwrap();
        assert!(!q.paired);
        assert_eq!((q.subject_a.as_str(), q.subject_b.as_str(), q.slice_index), ("sub-000", "sub-002", 51));
        assert!(matches!(make_pair(&c, "sub-009", "sub-000", 50), Err(Error::NotFound(_))));
        assert!(matches!(make_pair(&c, "sub-000", "sub-001", 10), Err(Error::NotFound(_))));
    }

    #[test]
    fn distortion_rules() {
        let c = corpus(2);
        let p = make_pair(&c, "sub-000", "sub-001", 50).unwrap();
        let mut rng = rng_from(4);
        let none = distort_pair(&p, &NoiseLevel::NONE, &mut rng).unwrap();
        assert_eq!(none.img_a, p.img_a);
        assert_eq!(none.img_b, p.img_b);
        assert!(none.applied_a.is_identity() && none.applied_b.is_identity());
        let severe = distort_pair(&p, &NoiseLevel::SEVERE, &mut rng).unwrap();
        assert!(NoiseLevel::SEVERE.contains(&severe.applied_a));
        assert!(NoiseLevel::SEVERE.contains(&severe.applied_b));
        assert_ne!(severe.applied_a, severe.applied_b);
        assert!(matches!(distort_pair(&severe, &NoiseLevel::SEVERE, &mut rng), Err(Error::InvalidState(_))));
    }

    #[test]
    fn shard_sizes_follow_proportions() {
        let paper = [0.4, 0.3, 0.2, 0.1];
        assert_eq!(shard_sizes(6000, &paper).unwrap(), vec![2400, 1800, 1200, 600]);
        assert_eq!(shard_sizes(20, &paper).unwrap(), vec![8, 6, 4, 2]);
        assert_eq!(shard_sizes(7, &[1.0]).unwrap(), vec![7]);
        // 3.5 + 3.5 rounds to 8; the largest client gives one back
        assert_eq!(shard_sizes(7, &[0.5, 0.5]).unwrap(), vec![3, 4]);
        assert!(shard_sizes(10, &[0.5, 0.4]).is_err());
        assert!(shard_sizes(3, &paper).is_err());
    }

    #[test]
    fn partition_is_disjoint_and_exhaustive() {
        let c = corpus(10);
        let shards = partition_clients(&c, &paper_scenario(NoiseKind::Severe), &mut rng_from(5)).unwrap();
        let sizes: Vec<_> = shards.iter().map(|s| s.subjects.len()).collect();
        assert_eq!(sizes, vec![4, 3, 2, 1]);
        let all: BTreeSet<_> = shards.iter().flat_map(|s| s.subjects.iter().cloned()).collect();
        assert_eq!(all.len(), 10);
        assert_eq!(all.into_iter().collect::<Vec<_>>(), c.subjects());
    }

    #[test]
    fn unpaired_clients_never_pair_a_subject_with_itself() {
        let c = corpus(10);
        let specs = vec![
            ClientSpec { client_id: 1, proportion: 0.5, pairing: Pairing::Paired, noise: NoiseKind::None },
            ClientSpec { client_id: 2, proportion: 0.5, pairing: Pairing::Unpaired, noise: NoiseKind::Slight },
        ];
        let clients = build_clients(&c, &specs, &mut rng_from(6)).unwrap();
        assert!(clients[0].pairs.iter().all(|p| p.paired && p.subject_a == p.subject_b));
        assert!(clients[0].pairs.iter().all(|p| p.applied_a.is_identity()));
        assert!(clients[1].pairs.iter().all(|p| !p.paired && p.subject_a != p.subject_b));
        assert!(clients[1].pairs.iter().all(|p| NoiseLevel::SLIGHT.contains(&p.applied_a)));
        assert_eq!(clients[1].len(), 10);
        assert!((clients[0].proportion - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mixed_pairing_keeps_a_fraction_paired() {
        let c = corpus(10);
        let specs =
            vec![ClientSpec { client_id: 1, proportion: 1.0, pairing: Pairing::Mixed { paired_fraction: 0.4 }, noise: NoiseKind::None }];
        let d = build_clients(&c, &specs, &mut rng_from(7)).unwrap();
        let paired_subjects: BTreeSet<_> = d[0].pairs.iter().filter(|p| p.paired).map(|p| p.subject_a.clone()).collect();
        assert_eq!(paired_subjects.len(), 4);
        // 0.9 of 10 leaves one subject over, which joins the unpaired pool
        let specs =
            vec![ClientSpec { client_id: 1, proportion: 1.0, pairing: Pairing::Mixed { paired_fraction: 0.9 }, noise: NoiseKind::None }];
        let d = build_clients(&c, &specs, &mut rng_from(7)).unwrap();
        assert_eq!(d[0].pairs.iter().filter(|p| !p.paired).count(), 4);
    }

    #[test]
    fn single_volume_unpaired_client_is_rejected() {
        let c = corpus(4);
        let specs = vec![
            ClientSpec { client_id: 1, proportion: 0.75, pairing: Pairing::Paired, noise: NoiseKind::None },
            ClientSpec { client_id: 2, proportion: 0.25, pairing: Pairing::Unpaired, noise: NoiseKind::None },
        ];
        assert!(build_clients(&c, &specs, &mut rng_from(8)).is_err());
    }
}
