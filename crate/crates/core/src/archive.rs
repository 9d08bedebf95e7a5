//! On-disk volume archive and sample manifests.
//!
//! # Volume file (`.fmv`)
//!
//! All integers and floats little-endian.
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0 | 8 | magic `FMEDVOL1` |
//! | 8 | 4 | `u32` format version (1) |
//! | 12 | 4 | `u32` height |
//! | 16 | 4 | `u32` width |
//! | 20 | 4 | `u32` depth (slice count) |
//! | 24 | 4 | `u32` z index of the first slice |
//! | 28 | 1 | `u8` dtype, `0` = f32 |
//! | 29 | 4 | `f32` intensity low |
//! | 33 | 4 | `f32` intensity high |
//! | 37 | 2 | `u16` subject id length `n` |
//! | 39 | n | subject id, UTF-8 |
//! | 39+n | 4·h·w·depth | pixels, z-major then row-major |
//!
//! A corpus directory holds `A/<subject>.fmv` and `B/<subject>.fmv`.
//! Loading maps `[low, high]` onto the training range.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Volume};
use crate::error::{Error, Result};
use crate::imaging::{center_crop, AffineParams, Slice2D, ValueRange};
use crate::mud::SamplePair;

pub const MAGIC: &[u8; 8] = b"FMEDVOL1";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
pub const EXTENSION: &str = "fmv";

pub const DEFAULT_SLICE_LO: usize = 50;
pub const DEFAULT_SLICE_HI: usize = 80;
pub const DEFAULT_OUT_SIZE: usize = 256;

/// Serialises a volume, storing its slices' own value range in the header.
pub fn encode_volume(vol: &Volume) -> Result<Vec<u8>> {
    let first = vol.slices.first().ok_or_else(|| Error::invalid(format!("volume {} has no slices", vol.subject)))?;
    let (h, w) = first.dims();
    let range = first.range();
    if vol.slices.iter().any(|s| s.dims() != (h, w) || s.range() != range) {
        return Err(Error::invalid(format!("volume {} mixes slice shapes or ranges", vol.subject)));
    }
    let id = vol.subject.as_bytes();
    let id_len = u16::try_from(id.len()).map_err(|_| Error::invalid("subject id longer than 65535 bytes"))?;
    let u32_of = |v: usize, what: &str| u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} too large")));
    let mut out = Vec::with_capacity(39 + id.len() + 4 * h * w * vol.slices.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32_of(h, "height")?.to_le_bytes());
    out.extend_from_slice(&u32_of(w, "width")?.to_le_bytes());
    out.extend_from_slice(&u32_of(vol.slices.len(), "depth")?.to_le_bytes());
    out.extend_from_slice(&u32_of(vol.z_start, "z start")?.to_le_bytes());
    out.push(DTYPE_F32);
    out.extend_from_slice(&(range.lo as f32).to_le_bytes());
    out.extend_from_slice(&(range.hi as f32).to_le_bytes());
    out.extend_from_slice(&id_len.to_le_bytes());
    out.extend_from_slice(id);
    for s in &vol.slices {
        for &v in s.pixels() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Raw decoded volume: header fields plus pixels as stored.
#[derive(Debug, Clone, PartialEq)]
pub struct RawVolume {
    pub subject: String,
    pub height: usize,
    pub width: usize,
    pub z_start: usize,
    pub range: (f32, f32),
    /// One `height × width` buffer per slice.
    pub slices: Vec<Vec<f32>>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Parse { path: self.path.to_owned(), offset: offset as u64, message: message.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(self.pos, format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_volume(buf: &[u8], path: &Path) -> Result<RawVolume> {
    let mut r = Reader { buf, pos: 0, path };
    if r.take(8, "magic")? != MAGIC {
        return Err(r.err(0, "bad magic, not a volume file"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.err(8, format!("unsupported version {version}")));
    }
    let height = r.u32("height")? as usize;
    let width = r.u32("width")? as usize;
    let depth = r.u32("depth")? as usize;
    let z_start = r.u32("z start")? as usize;
    let dtype = r.take(1, "dtype")?[0];
    if dtype != DTYPE_F32 {
        return Err(r.err(28, format!("unsupported dtype code {dtype}")));
    }
    let lo = r.f32("intensity low")?;
    let hi = r.f32("intensity high")?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(r.err(29, format!("invalid intensity range [{lo}, {hi}]")));
    }
    let id_len = u16::from_le_bytes(r.take(2, "subject length")?.try_into().unwrap()) as usize;
    let id_at = r.pos;
    let subject = std::str::from_utf8(r.take(id_len, "subject id")?)
        .map_err(|_| r.err(id_at, "subject id is not UTF-8"))?
        .to_owned();
    let n = height.checked_mul(width).filter(|n| *n > 0).ok_or_else(|| r.err(12, "zero or overflowing slice size"))?;
    let mut slices = Vec::with_capacity(depth);
    for _ in 0..depth {
        let mut px = Vec::with_capacity(n);
        for _ in 0..n {
            let at = r.pos;
            let v = r.f32("pixel data")?;
            if !v.is_finite() {
                return Err(r.err(at, "non-finite pixel"));
            }
            px.push(v);
        }
        slices.push(px);
    }
    if r.pos != buf.len() {
        return Err(r.err(r.pos, format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(RawVolume { subject, height, width, z_start, range: (lo, hi), slices })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes both modalities under `root/A` and `root/B`.
pub fn write_corpus(corpus: &Corpus, root: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (dir, vols) in [("A", &corpus.modality_a), ("B", &corpus.modality_b)] {
        for v in vols.iter() {
            let path = root.join(dir).join(format!("{}.{EXTENSION}", v.subject));
            write_file(&path, &encode_volume(v)?)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn to_slice(px: &[f32], raw: &RawVolume, out_size: Option<usize>, path: &Path) -> Result<Slice2D> {
    let (lo, hi) = (raw.range.0 as f64, raw.range.1 as f64);
    let t = ValueRange::TRAINING;
    let pixels = if (lo, hi) == (t.lo, t.hi) {
        px.iter().map(|&v| t.clamp(v as f64)).collect()
    } else {
        let k = t.width() / (hi - lo);
        px.iter().map(|&v| t.clamp(t.lo + (v as f64 - lo) * k)).collect()
    };
    let s = Slice2D::new(raw.height, raw.width, pixels, t)?;
    let Some(out_size) = out_size else { return Ok(s) };
    if raw.height < out_size || raw.width < out_size {
        return Err(Error::Parse {
            path: path.to_owned(),
            offset: 12,
            message: format!("{}x{} slices are smaller than the {out_size}x{out_size} crop", raw.height, raw.width),
        });
    }
    center_crop(&s, out_size, out_size)
}

fn load_modality(dir: &Path, slice_lo: usize, slice_hi: usize, out_size: Option<usize>) -> Result<Vec<Volume>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == EXTENSION))
        .collect();
    files.sort();
    let mut out = Vec::with_capacity(files.len());
    for path in files {
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let raw = decode_volume(&bytes, &path)?;
        let z_lo = slice_lo.max(raw.z_start);
        let z_hi = slice_hi.min(raw.z_start + raw.slices.len().saturating_sub(1));
        if raw.slices.is_empty() || z_lo > z_hi {
            continue;
        }
        let slices = (z_lo..=z_hi)
            .map(|z| to_slice(&raw.slices[z - raw.z_start], &raw, out_size, &path))
            .collect::<Result<Vec<_>>>()?;
        out.push(Volume { subject: raw.subject, z_start: z_lo, slices });
    }
    Ok(out)
}

/// Loads slices `slice_lo..=slice_hi` of every volume under `root`,
/// centre-cropped to `out_size` and mapped to the training range. A missing
/// or empty directory gives an empty corpus.
pub fn load_slice_corpus(root: &Path, slice_lo: usize, slice_hi: usize, out_size: usize) -> Result<Corpus> {
    if slice_lo > slice_hi {
        return Err(Error::invalid(format!("slice range {slice_lo}..={slice_hi} is empty")));
    }
    Ok(Corpus {
        modality_a: load_modality(&root.join("A"), slice_lo, slice_hi, Some(out_size))?,
        modality_b: load_modality(&root.join("B"), slice_lo, slice_hi, Some(out_size))?,
    })
}

/// Every slice of every volume under `root`, at its stored size.
pub fn load_corpus(root: &Path) -> Result<Corpus> {
    Ok(Corpus {
        modality_a: load_modality(&root.join("A"), 0, usize::MAX, None)?,
        modality_b: load_modality(&root.join("B"), 0, usize::MAX, None)?,
    })
}

pub const MANIFEST_HEADER: &str =
    "client_id,index,subject_a,subject_b,slice_index,paired,rot_a,tx_a,ty_a,scale_a,rot_b,tx_b,ty_b,scale_b";

/// One manifest row: a sample and the affine parameters applied to each image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub client_id: u32,
    pub index: usize,
    pub subject_a: String,
    pub subject_b: String,
    pub slice_index: usize,
    pub paired: bool,
    pub rot_a: f64,
    pub tx_a: f64,
    pub ty_a: f64,
    pub scale_a: f64,
    pub rot_b: f64,
    pub tx_b: f64,
    pub ty_b: f64,
    pub scale_b: f64,
}

impl ManifestRow {
    pub fn new(client_id: u32, index: usize, p: &SamplePair) -> Self {
        let (a, b) = (&p.applied_a, &p.applied_b);
        Self {
            client_id,
            index,
            subject_a: p.subject_a.clone(),
            subject_b: p.subject_b.clone(),
            slice_index: p.slice_index,
            paired: p.paired,
            rot_a: a.rotation_deg,
            tx_a: a.translate_x,
            ty_a: a.translate_y,
            scale_a: a.scale_ratio,
            rot_b: b.rotation_deg,
            tx_b: b.translate_x,
            ty_b: b.translate_y,
            scale_b: b.scale_ratio,
        }
    }

    pub fn affine_a(&self) -> AffineParams {
        AffineParams { rotation_deg: self.rot_a, translate_x: self.tx_a, translate_y: self.ty_a, scale_ratio: self.scale_a }
    }

    pub fn affine_b(&self) -> AffineParams {
        AffineParams { rotation_deg: self.rot_b, translate_x: self.tx_b, translate_y: self.ty_b, scale_ratio: self.scale_b }
    }
}

/// CSV with [`MANIFEST_HEADER`] and one row per sample.
pub fn manifest_csv(rows: &[(u32, &SamplePair)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (i, (client, p)) in rows.iter().enumerate() {
        w.serialize(ManifestRow::new(*client, i, p)).expect("writing to memory cannot fail");
    }
    if rows.is_empty() {
        return format!("{MANIFEST_HEADER}\n");
    }
    String::from_utf8(w.into_inner().expect("writing to memory cannot fail")).expect("csv output is UTF-8")
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<ManifestRow>> {
    let err = |e: csv::Error| Error::Parse {
        path: path.to_owned(),
        offset: e.position().map(|p| p.byte()).unwrap_or(0),
        message: e.to_string(),
    };
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(err)?.iter().collect::<Vec<_>>().join(",");
    if header != MANIFEST_HEADER {
        return Err(Error::Parse { path: path.to_owned(), offset: 0, message: format!("unexpected manifest header {header:?}") });
    }
    r.deserialize().map(|row| row.map_err(err)).collect()
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol() -> Volume {
        let s = |k: f64| Slice2D::from_fn(8, 10, ValueRange::TRAINING, |x, y| ((x + y) as f64 * 0.1 + k).min(1.0) - 1.0).unwrap();
        Volume { subject: "sub-007".into(), z_start: 50, slices: vec![s(0.0), s(0.25), s(0.5)] }
    }

    #[test]
    fn encode_decode() {
        let bytes = encode_volume(&vol()).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let raw = decode_volume(&bytes, Path::new("x.fmv")).unwrap();
        assert_eq!((raw.height, raw.width, raw.z_start, raw.slices.len()), (8, 10, 50, 3));
        assert_eq!(raw.subject, "sub-007");
        assert_eq!(raw.range, (-1.0, 1.0));
    }

    #[test]
    fn parse_errors_carry_offsets() {
        let bytes = encode_volume(&vol()).unwrap();
        let p = Path::new("bad.fmv");
        match decode_volume(&bytes[..bytes.len() - 2], p).unwrap_err() {
            Error::Parse { path, offset, .. } => {
                assert_eq!(path, p);
                assert_eq!(offset as usize, bytes.len() - 4);
            }
            e => panic!("{e}"),
        }
        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(matches!(decode_volume(&b, p), Err(Error::Parse { offset: 0, .. })));
        let mut b = bytes.clone();
        b[28] = 7;
        assert!(matches!(decode_volume(&b, p), Err(Error::Parse { offset: 28, .. })));
    }

    #[test]
    fn manifest_round_trip() {
        let mut p = crate::mud::SamplePair {
            img_a: vol().slices[0].clone(),
            img_b: vol().slices[1].clone(),
            subject_a: "sub-001".into(),
            subject_b: "sub-002".into(),
            slice_index: 53,
            applied_a: crate::imaging::AffineParams::IDENTITY,
            applied_b: crate::imaging::AffineParams::IDENTITY,
            paired: false,
            distorted: true,
        };
        p.applied_b.rotation_deg = -12.5;
        let text = manifest_csv(&[(2, &p)]);
        let rows = parse_manifest(&text, Path::new("m.csv")).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].affine_b().rotation_deg, -12.5);
        assert_eq!(rows[0].affine_a(), crate::imaging::AffineParams::IDENTITY);
        assert_eq!(rows[0].subject_b, "sub-002");
        assert!(!rows[0].paired);
        assert!(parse_manifest("nope\n", Path::new("m.csv")).is_err());
        let broken = text.replace("53", "fifty-three");
        assert!(matches!(parse_manifest(&broken, Path::new("m.csv")), Err(Error::Parse { offset, .. }) if offset > 0));
    }
}
