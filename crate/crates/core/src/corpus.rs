use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::imaging::Slice2D;

/// z-ordered stack of slices from one subject in one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub subject: String,
    /// Index of `slices[0]` in the original acquisition.
    pub z_start: usize,
    pub slices: Vec<Slice2D>,
}

impl Volume {
    pub fn slice(&self, z: usize) -> Option<&Slice2D> {
        z.checked_sub(self.z_start).and_then(|i| self.slices.get(i))
    }

    pub fn z_range(&self) -> std::ops::Range<usize> {
        self.z_start..self.z_start + self.slices.len()
    }
}

/// Two-modality slice corpus. Modality A is the translation source, B the target.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub modality_a: Vec<Volume>,
    pub modality_b: Vec<Volume>,
}

impl Corpus {
    pub fn volume_a(&self, subject: &str) -> Option<&Volume> {
        self.modality_a.iter().find(|v| v.subject == subject)
    }

    pub fn volume_b(&self, subject: &str) -> Option<&Volume> {
        self.modality_b.iter().find(|v| v.subject == subject)
    }

    /// Sorted ids of subjects present in both modalities.
    pub fn subjects(&self) -> Vec<String> {
        let a: BTreeSet<&str> = self.modality_a.iter().map(|v| v.subject.as_str()).collect();
        self.modality_b
            .iter()
            .map(|v| v.subject.as_str())
            .filter(|s| a.contains(s))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(str::to_owned)
            .collect()
    }

    pub fn slice_count(&self) -> (usize, usize) {
        let count = |vs: &[Volume]| vs.iter().map(|v| v.slices.len()).sum();
        (count(&self.modality_a), count(&self.modality_b))
    }

    pub fn is_empty(&self) -> bool {
        self.modality_a.is_empty() && self.modality_b.is_empty()
    }

    /// Splits off the listed subjects into a second corpus.
    pub fn split_off(&self, subjects: &[String]) -> (Corpus, Corpus) {
        let keep = |v: &&Volume| !subjects.contains(&v.subject);
        let take = |v: &&Volume| subjects.contains(&v.subject);
        (
            Corpus {
                modality_a: self.modality_a.iter().filter(keep).cloned().collect(),
                modality_b: self.modality_b.iter().filter(keep).cloned().collect(),
            },
            Corpus {
                modality_a: self.modality_a.iter().filter(take).cloned().collect(),
                modality_b: self.modality_b.iter().filter(take).cloned().collect(),
            },
        )
    }

    /// Aligned same-subject pairs of every shared slice, undistorted.
    pub fn aligned_pairs(&self) -> Result<Vec<(Slice2D, Slice2D)>> {
        let mut out = Vec::new();
        for s in self.subjects() {
            let (a, b) = (self.volume_a(&s).unwrap(), self.volume_b(&s).unwrap());
            for z in a.z_range() {
                if let Some(sb) = b.slice(z) {
                    out.push((a.slice(z).unwrap().clone(), sb.clone()));
                }
            }
        }
        if out.is_empty() && !self.is_empty() {
            return Err(Error::NotFound("corpus has no slice shared by both modalities".into()));
        }
        Ok(out)
    }
}
