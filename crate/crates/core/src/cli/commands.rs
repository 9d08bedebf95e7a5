use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, Variant};
use crate::archive::{
    load_corpus, load_slice_corpus, manifest_csv, parse_manifest, write_corpus, write_text, ManifestRow, EXTENSION,
};
use crate::checkpoint::Checkpoint;
use crate::corpus::{Corpus, Volume};
use crate::error::{Error, Result};
use crate::federated::{run_training, LossRecord, TrainingOutcome};
use crate::imaging::{AffineParams, Slice2D, ValueRange};
use crate::metrics::{evaluate, Identity, MetricsReport, Remap, SsimConstants, Translate};
use crate::mud::{build_clients, check_proportions, generate_phantom, ClientDataset, NoiseKind, NoiseLevel, SamplePair};
use crate::networks::GeneratorParams;
use crate::seeding::stream;

pub const METRICS_HEADER: &str = "experiment,label,variant,views,noise,mae,psnr,ssim,n_images";
pub const PER_IMAGE_HEADER: &str = "index,mae,psnr,ssim";
pub const TRAIN_LOG_HEADER: &str = "round,client,epoch,step,role,adv,cyc,rot,trans,scale,total";
pub const ABLATION_HEADER: &str = "experiment,label,variant,views,noise,mae,psnr,ssim,n_images,status";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    write_text(path, &(text + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_owned(),
        offset: 0,
        message: format!("line {} column {}: {e}", e.line(), e.column()),
    })
}

/// `header` followed by one CSV record per row.
pub fn to_csv<T: Serialize>(header: &str, rows: &[T]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(format!("{header}\n").into_bytes());
    for r in rows {
        w.serialize(r).expect("writing to memory cannot fail");
    }
    String::from_utf8(w.into_inner().expect("writing to memory cannot fail")).expect("csv output is UTF-8")
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Writes the configured phantom under `<out>/corpus` plus `phantom.json`.
pub fn cmd_phantom(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let corpus = generate_phantom(&cfg.phantom)?;
    let root = cfg.out_dir().join("corpus");
    write_corpus(&corpus, &root)?;
    write_json(&root.join("phantom.json"), &cfg.phantom)?;
    log::info!("wrote {} phantom volumes to {}", cfg.phantom.n_volumes, root.display());
    Ok(root)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMeta {
    pub client_id: u32,
    pub proportion: f64,
    pub noise: NoiseLevel,
    pub subjects: Vec<String>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub seed: u64,
    pub config_digest: String,
    pub image_size: usize,
    pub clients: Vec<ClientMeta>,
    pub test_subjects: Vec<String>,
}

/// Client datasets and the held-out aligned test corpus.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub meta: ScenarioMeta,
    pub clients: Vec<ClientDataset>,
    pub test: Corpus,
}

fn source_corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    let dir = cfg.corpus_dir();
    if !dir.join("A").is_dir() || !dir.join("B").is_dir() {
        return Err(Error::NotFound(format!("corpus at {} (run `fedmed phantom` first)", dir.display())));
    }
    load_slice_corpus(&dir, cfg.data.slice_lo, cfg.data.slice_hi, cfg.data.image_size)
}

/// Holds out test volumes and builds every client's misaligned samples.
pub fn prepare_scenario(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<Prepared> {
    check_proportions(&cfg.clients.iter().map(|c| c.proportion).collect::<Vec<_>>())
        .map_err(|e| Error::Config(format!("client proportions: {e}")))?;
    let mut subjects = corpus.subjects();
    if subjects.len() <= cfg.data.test_volumes {
        return Err(Error::invalid(format!(
            "{} volumes cannot spare {} for testing",
            subjects.len(),
            cfg.data.test_volumes
        )));
    }
    subjects.shuffle(&mut stream(cfg.seed, &["holdout"]));
    let mut test_subjects = subjects[..cfg.data.test_volumes].to_vec();
    test_subjects.sort();
    let (train, test) = corpus.split_off(&test_subjects);
    let clients = build_clients(&train, &cfg.clients, &mut stream(cfg.seed, &["mud"]))?;
    let meta = ScenarioMeta {
        seed: cfg.seed,
        config_digest: cfg.digest(),
        image_size: cfg.data.image_size,
        clients: clients
            .iter()
            .map(|c| ClientMeta {
                client_id: c.client_id,
                proportion: c.proportion,
                noise: c.noise,
                subjects: c.subjects.clone(),
                samples: c.len(),
            })
            .collect(),
        test_subjects,
    };
    Ok(Prepared { meta, clients, test })
}

fn stack(name: &str, slices: Vec<Slice2D>) -> Volume {
    Volume { subject: name.to_owned(), z_start: 0, slices }
}

/// Writes a prepared scenario:
///
/// ```text
/// scenario.json               client registry, held-out subjects, digest
/// manifest.csv                one row per sample with both applied affines
/// client<id>/{A,B}.fmv        distorted sample stacks
/// client<id>/clean_{A,B}.fmv  the same samples before distortion
/// test/{A,B}/<subject>.fmv    aligned held-out volumes
/// ```
pub fn write_prepared(p: &Prepared, dir: &Path) -> Result<()> {
    let mut rows = Vec::new();
    for c in &p.clients {
        let cdir = dir.join(format!("client{}", c.client_id));
        let pick = |f: fn(&SamplePair) -> &Slice2D, v: &[SamplePair]| v.iter().map(|s| f(s).clone()).collect::<Vec<_>>();
        let vols = [
            ("A", pick(|s| &s.img_a, &c.pairs)),
            ("B", pick(|s| &s.img_b, &c.pairs)),
            ("clean_A", pick(|s| &s.img_a, &c.clean)),
            ("clean_B", pick(|s| &s.img_b, &c.clean)),
        ];
        for (name, slices) in vols {
            if slices.is_empty() {
                continue;
            }
            let bytes = crate::archive::encode_volume(&stack(name, slices))?;
            let path = cdir.join(format!("{name}.{EXTENSION}"));
            fs::create_dir_all(&cdir).map_err(|e| Error::io(&cdir, e))?;
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        rows.extend(c.pairs.iter().map(|s| (c.client_id, s)));
    }
    write_text(&dir.join("manifest.csv"), &manifest_csv(&rows))?;
    write_corpus(&p.test, &dir.join("test"))?;
    write_json(&dir.join("scenario.json"), &p.meta)
}

/// Loads the configured corpus, prepares the scenario and writes it under
/// [`ExperimentConfig::scenario_dir`].
pub fn cmd_prepare(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let corpus = source_corpus(cfg)?;
    let p = prepare_scenario(cfg, &corpus)?;
    let dir = cfg.scenario_dir();
    write_prepared(&p, &dir)?;
    for c in &p.meta.clients {
        log::info!("client {}: {} volumes, {} samples", c.client_id, c.subjects.len(), c.samples);
    }
    Ok(dir)
}

fn read_stack(path: &Path) -> Result<Vec<Slice2D>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw = crate::archive::decode_volume(&bytes, path)?;
    raw.slices
        .iter()
        .map(|px| Slice2D::new(raw.height, raw.width, px.iter().map(|&v| v as f64).collect(), ValueRange::TRAINING))
        .collect()
}

/// Reads back what [`write_prepared`] wrote.
pub fn load_prepared(dir: &Path) -> Result<Prepared> {
    let meta_path = dir.join("scenario.json");
    if !meta_path.exists() {
        return Err(Error::NotFound(format!("prepared scenario at {} (run `fedmed prepare` first)", dir.display())));
    }
    let meta: ScenarioMeta = read_json(&meta_path)?;
    let manifest_path = dir.join("manifest.csv");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let rows = parse_manifest(&text, &manifest_path)?;
    let mut clients = Vec::with_capacity(meta.clients.len());
    for m in &meta.clients {
        let cdir = dir.join(format!("client{}", m.client_id));
        let [a, b, ca, cb] = ["A", "B", "clean_A", "clean_B"].map(|n| read_stack(&cdir.join(format!("{n}.{EXTENSION}"))));
        let (a, b, ca, cb) = (a?, b?, ca?, cb?);
        let mine: Vec<&ManifestRow> = rows.iter().filter(|r| r.client_id == m.client_id).collect();
        if [a.len(), b.len(), ca.len(), cb.len()].iter().any(|&n| n != mine.len()) || mine.len() != m.samples {
            return Err(Error::InvalidState(format!(
                "client {} in {}: manifest lists {} samples but the stacks hold {}",
                m.client_id,
                dir.display(),
                mine.len(),
                a.len()
            )));
        }
        let mut pairs = Vec::with_capacity(mine.len());
        let mut clean = Vec::with_capacity(mine.len());
        for (i, r) in mine.iter().enumerate() {
            let base = SamplePair {
                img_a: ca[i].clone(),
                img_b: cb[i].clone(),
                subject_a: r.subject_a.clone(),
                subject_b: r.subject_b.clone(),
                slice_index: r.slice_index,
                applied_a: AffineParams::IDENTITY,
                applied_b: AffineParams::IDENTITY,
                paired: r.paired,
                distorted: false,
            };
            pairs.push(SamplePair {
                img_a: a[i].clone(),
                img_b: b[i].clone(),
                applied_a: r.affine_a(),
                applied_b: r.affine_b(),
                distorted: true,
                ..base.clone()
            });
            clean.push(base);
        }
        clients.push(ClientDataset {
            client_id: m.client_id,
            proportion: m.proportion,
            noise: m.noise,
            subjects: m.subjects.clone(),
            clean,
            pairs,
        });
    }
    let test = load_corpus(&dir.join("test"))?;
    Ok(Prepared { meta, clients, test })
}

/// Artifacts of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub checkpoints: Vec<PathBuf>,
    pub metrics_csv: Option<PathBuf>,
    pub train_log: Option<PathBuf>,
    pub montages: Vec<PathBuf>,
    pub config: ExperimentConfig,
}

impl RunManifest {
    fn start(command: &str, cfg: &ExperimentConfig) -> Self {
        Self {
            command: command.into(),
            config_digest: cfg.digest(),
            seed: cfg.seed,
            started_unix: unix_now(),
            finished_unix: 0,
            checkpoints: Vec::new(),
            metrics_csv: None,
            train_log: None,
            montages: Vec::new(),
            config: cfg.clone(),
        }
    }

    fn finish(mut self, path: &Path) -> Result<Self> {
        self.finished_unix = unix_now();
        write_json(path, &self)?;
        Ok(self)
    }
}

pub fn checkpoint_path(out: &Path, round: usize) -> PathBuf {
    out.join("checkpoints").join(format!("round_{round}.ckpt"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub round: usize,
    pub client: u32,
    pub epoch: usize,
    pub step: usize,
    pub role: String,
    pub adv: f64,
    pub cyc: f64,
    pub rot: f64,
    pub trans: f64,
    pub scale: f64,
    pub total: f64,
}

pub fn train_log_csv(records: &[LossRecord]) -> String {
    let rows: Vec<TrainLogRow> = records
        .iter()
        .map(|r| TrainLogRow {
            round: r.round,
            client: r.client,
            epoch: r.epoch,
            step: r.step,
            role: r.role.to_string(),
            adv: r.components.adv,
            cyc: r.components.cyc,
            rot: r.components.rot,
            trans: r.components.trans,
            scale: r.components.scale,
            total: r.total,
        })
        .collect();
    to_csv(TRAIN_LOG_HEADER, &rows)
}

/// Trains on a prepared scenario, calling `on_round` with every checkpoint
/// (round 0 included) before it is dropped.
pub fn train_prepared(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    mut on_round: impl FnMut(Checkpoint) -> Result<()>,
) -> Result<TrainingOutcome> {
    if cfg.variant == Variant::Reggan {
        return Err(Error::NotImplemented("the reggan variant is not implemented".into()));
    }
    let digest = cfg.digest();
    run_training(&cfg.train, &cfg.dp, prepared.clients.clone(), |server, clients, _| {
        on_round(Checkpoint::from_state(server, clients, cfg.seed, &digest, cfg.train.discriminator))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub experiment: String,
    pub label: String,
    pub variant: Variant,
    pub views: usize,
    pub noise: NoiseKind,
    pub mae: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub n_images: Option<usize>,
}

impl MetricsRow {
    fn new(experiment: &str, variant: Variant, views: usize, noise: NoiseKind, r: Option<&MetricsReport>) -> Self {
        Self {
            experiment: experiment.to_owned(),
            label: variant.label(views),
            variant,
            views,
            noise,
            mae: r.map(|r| r.mae),
            psnr: r.map(|r| r.psnr),
            ssim: r.map(|r| r.ssim),
            n_images: r.map(|r| r.n_images),
        }
    }
}

#[derive(Serialize)]
struct PerImageRow {
    index: usize,
    mae: f64,
    psnr: f64,
    ssim: f64,
}

fn write_metrics(path: &Path, cfg: &ExperimentConfig, r: &MetricsReport) -> Result<()> {
    let row = MetricsRow::new(&cfg.experiment_name(), cfg.variant, cfg.train.views_k, cfg.noise, Some(r));
    write_text(path, &to_csv(METRICS_HEADER, &[row]))?;
    let per: Vec<PerImageRow> =
        r.per_image.iter().map(|m| PerImageRow { index: m.index, mae: m.mae, psnr: m.psnr, ssim: m.ssim }).collect();
    write_text(&path.with_file_name("per_image.csv"), &to_csv(PER_IMAGE_HEADER, &per))
}

/// Full training run: a checkpoint per round, the loss log, test metrics of
/// the final generator, a four-row montage and `manifest.json`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let prepared = load_prepared(&cfg.scenario_dir())?;
    let out = cfg.out_dir();
    let mut manifest = RunManifest::start("train", cfg);
    let mut last = None;
    let outcome = train_prepared(cfg, &prepared, |ckpt| {
        let path = checkpoint_path(&out, ckpt.meta.round);
        ckpt.save(&path)?;
        log::info!("round {} checkpoint: {}", ckpt.meta.round, path.display());
        manifest.checkpoints.push(path);
        last = Some(ckpt);
        Ok(())
    })?;
    let log_path = out.join("train_log.csv");
    write_text(&log_path, &train_log_csv(&outcome.records))?;
    manifest.train_log = Some(log_path);
    let pairs = prepared.test.aligned_pairs()?;
    let report = evaluate(&outcome.server.gen_ab, &pairs, SsimConstants::default())?;
    let metrics = out.join("metrics.csv");
    write_metrics(&metrics, cfg, &report)?;
    manifest.metrics_csv = Some(metrics);
    let gen = last.ok_or_else(|| Error::InvalidState("training produced no checkpoint".into()))?.generators()?.0;
    let montage = out.join("montage.png");
    write_montage(&gen, &pairs, 4, cfg.seed, &montage)?;
    manifest.montages.push(montage);
    manifest.finish(&out.join("manifest.json"))
}

/// Model scored by [`cmd_eval`].
#[derive(Debug, Clone, PartialEq)]
pub enum EvalModel {
    Checkpoint(PathBuf),
    /// Output equals input.
    Identity,
    /// The phantom's known intensity relation between the modalities.
    GroundTruthRemap,
}

fn model_from(cfg: &ExperimentConfig, model: &EvalModel) -> Result<Box<dyn Translate>> {
    Ok(match model {
        EvalModel::Checkpoint(p) => {
            if !p.exists() {
                return Err(Error::NotFound(format!("checkpoint {}", p.display())));
            }
            Box::new(Checkpoint::load(p)?.generators()?.0)
        }
        EvalModel::Identity => Box::new(Identity),
        EvalModel::GroundTruthRemap => {
            let map = cfg.phantom.modality_map;
            Box::new(Remap(move |v: f64| 2.0 * map.apply((v + 1.0) / 2.0) - 1.0))
        }
    })
}

/// Scores `model` on the prepared test set and writes `<out>/eval/metrics.csv`
/// and `per_image.csv`.
pub fn cmd_eval(cfg: &ExperimentConfig, model: &EvalModel) -> Result<(MetricsReport, PathBuf)> {
    let prepared = load_prepared(&cfg.scenario_dir())?;
    let m = model_from(cfg, model)?;
    let report = evaluate(m.as_ref(), &prepared.test.aligned_pairs()?, SsimConstants::default())?;
    let path = cfg.out_dir().join("eval").join("metrics.csv");
    write_metrics(&path, cfg, &report)?;
    Ok((report, path))
}

fn to_u8(v: f64) -> u8 {
    (ValueRange::TRAINING.clamp(v) * 127.5 + 127.5).round() as u8
}

/// Grayscale grid with one row per sample: input A, generated B, true B.
pub fn montage_pixels(gen: &dyn Translate, samples: &[(Slice2D, Slice2D)]) -> Result<(usize, usize, Vec<u8>)> {
    let first = samples.first().ok_or_else(|| Error::invalid("montage needs at least one sample"))?;
    let (h, w) = first.0.dims();
    let a: Vec<&Slice2D> = samples.iter().map(|(a, _)| a).collect();
    let fake = gen.translate(&a)?;
    let (width, height) = (3 * w, samples.len() * h);
    let mut px = vec![0u8; width * height];
    for (row, ((a, b), f)) in samples.iter().zip(&fake).enumerate() {
        for (col, tile) in [a, f, b].into_iter().enumerate() {
            if tile.dims() != (h, w) {
                return Err(Error::invalid("montage tiles differ in size"));
            }
            for y in 0..h {
                for x in 0..w {
                    px[(row * h + y) * width + col * w + x] = to_u8(tile.get(x, y));
                }
            }
        }
    }
    Ok((width, height, px))
}

fn write_png(path: &Path, width: usize, height: usize, px: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let io_err = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut w = enc.write_header().map_err(io_err)?;
    w.write_image_data(px).map_err(io_err)?;
    w.finish().map_err(io_err)
}

/// Picks `n` pairs by seed and writes their montage; asks for more than
/// exist and you get all of them.
pub fn write_montage(gen: &dyn Translate, pairs: &[(Slice2D, Slice2D)], n: usize, seed: u64, path: &Path) -> Result<usize> {
    if n > pairs.len() {
        log::warn!("{n} montage samples requested, only {} available; using all", pairs.len());
    }
    let n = n.min(pairs.len());
    let mut idx = index::sample(&mut stream(seed, &["montage"]), pairs.len(), n).into_vec();
    idx.sort_unstable();
    let chosen: Vec<_> = idx.iter().map(|&i| pairs[i].clone()).collect();
    let (w, h, px) = montage_pixels(gen, &chosen)?;
    write_png(path, w, h, &px)?;
    Ok(n)
}

/// Montage of `samples` test pairs through the A→B generator of `checkpoint`.
pub fn cmd_montage(cfg: &ExperimentConfig, checkpoint: &Path, samples: usize, out: Option<&Path>) -> Result<PathBuf> {
    if !checkpoint.exists() {
        return Err(Error::NotFound(format!("checkpoint {}", checkpoint.display())));
    }
    let gen: GeneratorParams = Checkpoint::load(checkpoint)?.generators()?.0;
    let prepared = load_prepared(&cfg.scenario_dir())?;
    let path = out.map(Path::to_owned).unwrap_or_else(|| cfg.out_dir().join("montage.png"));
    write_montage(&gen, &prepared.test.aligned_pairs()?, samples, cfg.seed, &path)?;
    Ok(path)
}

/// The `(variant, views)` rows of the ablation tables.
pub const ABLATION_ROWS: [(Variant, usize); 6] =
    [(Variant::ArOnly, 4), (Variant::AtOnly, 4), (Variant::AsOnly, 4), (Variant::Atl, 1), (Variant::Atl, 2), (Variant::Atl, 4)];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub variant: Variant,
    pub views: usize,
    pub noise: NoiseKind,
    pub label: String,
    pub result: std::result::Result<MetricsReport, String>,
}

fn cell_config(base: &ExperimentConfig, variant: Variant, views: usize, noise: NoiseKind) -> Result<ExperimentConfig> {
    let mut c = base.clone();
    c.variant = variant;
    c.noise = noise;
    c.train.views_k = views;
    c.train.gen_weights = ExperimentConfig::default().train.gen_weights;
    c.train.disc_weights = ExperimentConfig::default().train.disc_weights;
    for s in &mut c.clients {
        s.noise = noise;
    }
    c.resolve(&Default::default())
}

fn run_cell(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<MetricsReport> {
    let outcome = train_prepared(cfg, prepared, |_| Ok(()))?;
    evaluate(&outcome.server.gen_ab, &prepared.test.aligned_pairs()?, SsimConstants::default())
}

/// Runs every ablation row at every configured noise level on `corpus`, all
/// cells sharing the seed. A failing cell is recorded and the sweep goes on.
pub fn run_ablation(base: &ExperimentConfig, corpus: &Corpus) -> Result<Vec<AblationCell>> {
    let mut prepared = Vec::new();
    let mut jobs = Vec::new();
    for &noise in &base.ablation.noises {
        let scenario = cell_config(base, Variant::Atl, base.train.views_k, noise).and_then(|c| prepare_scenario(&c, corpus));
        prepared.push(scenario.map_err(|e| e.to_string()));
        for (variant, views) in ABLATION_ROWS {
            let cfg = cell_config(base, variant, views, noise).map_err(|e| e.to_string());
            jobs.push((variant, views, noise, cfg, prepared.len() - 1));
        }
    }
    let prepared = &prepared;
    let run = |(variant, views, noise, cfg, p): &(Variant, usize, NoiseKind, std::result::Result<ExperimentConfig, String>, usize)| {
        let result = match (cfg, &prepared[*p]) {
            (Ok(c), Ok(p)) => run_cell(c, p).map_err(|e| e.to_string()),
            (Err(e), _) | (_, Err(e)) => Err(e.clone()),
        };
        if let Err(e) = &result {
            log::warn!("ablation cell {} / {noise} failed: {e}", variant.label(*views));
        }
        AblationCell { variant: *variant, views: *views, noise: *noise, label: variant.label(*views), result }
    };
    if base.ablation.parallel {
        Ok(std::thread::scope(|s| {
            let handles: Vec<_> = jobs.iter().map(|j| s.spawn(move || run(j))).collect();
            handles.into_iter().map(|h| h.join().expect("ablation worker panicked")).collect()
        }))
    } else {
        Ok(jobs.iter().map(run).collect())
    }
}

pub fn ablation_csv(experiment: &str, cells: &[AblationCell]) -> String {
    let rows: Vec<(MetricsRow, String)> = cells
        .iter()
        .map(|c| {
            let status = match &c.result {
                Ok(_) => "ok".into(),
                Err(e) => format!("failed: {e}"),
            };
            (MetricsRow::new(experiment, c.variant, c.views, c.noise, c.result.as_ref().ok()), status)
        })
        .collect();
    to_csv(ABLATION_HEADER, &rows)
}

/// Ablation grid over the configured corpus, written to `<out>/ablation.csv`.
pub fn cmd_ablate(cfg: &ExperimentConfig) -> Result<(Vec<AblationCell>, PathBuf)> {
    let corpus = source_corpus(cfg)?;
    let cells = run_ablation(cfg, &corpus)?;
    let path = cfg.out_dir().join("ablation.csv");
    write_text(&path, &ablation_csv(&cfg.experiment_name(), &cells))?;
    Ok((cells, path))
}
