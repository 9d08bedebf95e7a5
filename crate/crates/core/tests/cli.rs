use std::fs;
use std::path::{Path, PathBuf};

use fedmed::archive::{load_slice_corpus, parse_manifest};
use fedmed::checkpoint::Checkpoint;
use fedmed::cli::{
    ablation_csv, checkpoint_path, cmd_ablate, cmd_eval, cmd_montage, cmd_phantom, cmd_prepare, cmd_train, load_prepared,
    montage_pixels, AblationCell, EvalModel, ExperimentConfig, Overrides, Variant, ABLATION_HEADER, METRICS_HEADER,
    TRAIN_LOG_HEADER,
};
use fedmed::metrics::Identity;
use fedmed::mud::{ClientSpec, NoiseKind, NoiseLevel, Pairing};
use fedmed::networks::{DiscriminatorConfig, GeneratorConfig};
use fedmed::Error;

fn tiny(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig { out: Some(out.to_owned()), ..Default::default() };
    c.phantom.n_volumes = 22;
    c.phantom.slices_per_volume = 2;
    c.phantom.image_size = 32;
    c.data.image_size = 32;
    c.data.test_volumes = 2;
    c.train.rounds = 2;
    c.train.local_epochs = 1;
    c.train.generator = GeneratorConfig::new(1, 2);
    c.train.discriminator = DiscriminatorConfig { base_channels: 2, downsamples: 2 };
    c.dp.enabled = false;
    c.resolve(&Overrides { seed: Some(4), ..Default::default() }).unwrap()
}

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_owned()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_owned(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn phantom_is_loadable_and_byte_identical_per_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let root = cmd_phantom(&tiny(a.path())).unwrap();
    cmd_phantom(&tiny(b.path())).unwrap();
    assert_eq!(files_under(&root), files_under(&b.path().join("corpus")));
    let corpus = load_slice_corpus(&root, 50, 80, 32).unwrap();
    assert_eq!(corpus.subjects().len(), 22);
    assert_eq!(corpus.slice_count(), (44, 44));

    let mut one = tiny(a.path());
    one.phantom.n_volumes = 1;
    assert!(cmd_phantom(&one).is_err());
}

#[test]
fn prepare_writes_an_auditable_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    cmd_phantom(&cfg).unwrap();
    let scenario = cmd_prepare(&cfg).unwrap();
    let p = load_prepared(&scenario).unwrap();
    assert_eq!(p.clients.iter().map(|c| c.subjects.len()).collect::<Vec<_>>(), [8, 6, 4, 2]);
    assert!(p.clients[0].pairs.iter().all(|s| s.paired));
    assert!(p.clients[1..].iter().flat_map(|c| &c.pairs).all(|s| !s.paired));
    assert_eq!(p.test.subjects().len(), 2);

    let text = fs::read_to_string(scenario.join("manifest.csv")).unwrap();
    let rows = parse_manifest(&text, Path::new("manifest.csv")).unwrap();
    assert_eq!(rows.len(), p.clients.iter().map(|c| c.len()).sum::<usize>());
    assert!(rows.iter().all(|r| NoiseLevel::SEVERE.contains(&r.affine_a()) && NoiseLevel::SEVERE.contains(&r.affine_b())));

    let before = files_under(&scenario);
    cmd_prepare(&cfg).unwrap();
    assert_eq!(files_under(&scenario), before);
}

#[test]
fn unaligned_free_scenario_keeps_pairs_clean() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.clients = vec![
        ClientSpec { client_id: 1, proportion: 0.5, pairing: Pairing::Paired, noise: NoiseKind::None },
        ClientSpec { client_id: 2, proportion: 0.5, pairing: Pairing::Paired, noise: NoiseKind::None },
    ];
    cmd_phantom(&cfg).unwrap();
    let p = load_prepared(&cmd_prepare(&cfg).unwrap()).unwrap();
    for c in &p.clients {
        for (s, clean) in c.pairs.iter().zip(&c.clean) {
            assert!(s.paired && s.applied_a.is_identity() && s.applied_b.is_identity());
            assert_eq!((&s.img_a, &s.img_b), (&clean.img_a, &clean.img_b));
        }
    }
}

#[test]
fn proportion_mis_sum_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cmd_phantom(&cfg).unwrap();
    cfg.clients[3].proportion = 0.2;
    assert!(matches!(cmd_prepare(&cfg), Err(Error::Config(_))));
    assert!(!cfg.scenario_dir().exists());
}

#[test]
fn train_eval_montage_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    assert!(matches!(cmd_train(&cfg), Err(Error::NotFound(_))));
    cmd_phantom(&cfg).unwrap();
    cmd_prepare(&cfg).unwrap();
    let m = cmd_train(&cfg).unwrap();
    assert_eq!(m.checkpoints, (0..=2).map(|r| checkpoint_path(dir.path(), r)).collect::<Vec<_>>());
    assert_eq!(m.config_digest, cfg.digest());
    let last = Checkpoint::load(&m.checkpoints[2]).unwrap();
    assert_eq!((last.meta.round, last.meta.seed), (2, 4));
    assert_eq!(last.sections.len(), 2 + 2 * 4);

    let log = fs::read_to_string(m.train_log.unwrap()).unwrap();
    assert!(log.starts_with(TRAIN_LOG_HEADER));
    assert!(log.lines().skip(1).all(|l| l.split(',').count() == 11));
    let metrics = fs::read_to_string(m.metrics_csv.unwrap()).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    assert!(lines.next().unwrap().starts_with("phantom,FedMed-C-ATL-4Views,atl,4,severe,"));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 4);

    let (remap, _) = cmd_eval(&cfg, &EvalModel::GroundTruthRemap).unwrap();
    let (ident, _) = cmd_eval(&cfg, &EvalModel::Identity).unwrap();
    assert!(remap.ssim > 0.99, "{}", remap.ssim);
    assert!(remap.beats(&ident));
    let (from_ckpt, _) = cmd_eval(&cfg, &EvalModel::Checkpoint(m.checkpoints[2].clone())).unwrap();
    assert_eq!(from_ckpt.n_images, 4);
    assert!(matches!(cmd_eval(&cfg, &EvalModel::Checkpoint(dir.path().join("nope.ckpt"))), Err(Error::NotFound(_))));

    let png_a = cmd_montage(&cfg, &m.checkpoints[2], 2, Some(&dir.path().join("a.png"))).unwrap();
    let png_b = cmd_montage(&cfg, &m.checkpoints[2], 2, Some(&dir.path().join("b.png"))).unwrap();
    assert_eq!(fs::read(&png_a).unwrap(), fs::read(&png_b).unwrap());
    let info = png::Decoder::new(std::io::BufReader::new(fs::File::open(&png_a).unwrap())).read_info().unwrap().info().clone();
    assert_eq!((info.width, info.height), (3 * 32, 2 * 32));
    let all = cmd_montage(&cfg, &m.checkpoints[2], 99, Some(&dir.path().join("c.png"))).unwrap();
    let info = png::Decoder::new(std::io::BufReader::new(fs::File::open(&all).unwrap())).read_info().unwrap().info().clone();
    assert_eq!(info.height, 4 * 32);
}

#[test]
fn empty_test_set_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    cmd_phantom(&cfg).unwrap();
    let scenario = cmd_prepare(&cfg).unwrap();
    fs::remove_dir_all(scenario.join("test")).unwrap();
    assert!(cmd_eval(&cfg, &EvalModel::Identity).is_err());
}

#[test]
fn montage_layout() {
    let s = fedmed::imaging::Slice2D::from_fn(8, 8, fedmed::imaging::ValueRange::TRAINING, |x, _| x as f64 / 7.0 * 2.0 - 1.0).unwrap();
    let samples = vec![(s.clone(), s.clone()), (s.clone(), s)];
    let (w, h, px) = montage_pixels(&Identity, &samples).unwrap();
    assert_eq!((w, h, px.len()), (24, 16, 24 * 16));
    assert_eq!((px[0], px[7], px[8]), (0, 255, 0));
}

#[test]
fn reggan_is_a_labelled_placeholder() {
    let r = ExperimentConfig::default().resolve(&Overrides { variant: Some(Variant::Reggan), ..Default::default() });
    assert!(matches!(r, Err(Error::NotImplemented(m)) if m.contains("not implemented")));
}

#[test]
fn ablation_csv_records_failures() {
    let cells = vec![
        AblationCell {
            variant: Variant::ArOnly,
            views: 4,
            noise: NoiseKind::Slight,
            label: Variant::ArOnly.label(4),
            result: Err("diverged, badly".into()),
        },
    ];
    let text = ablation_csv("phantom", &cells);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(ABLATION_HEADER));
    assert_eq!(lines.next(), Some("phantom,FedMed-C-AR,ar-only,4,slight,,,,,\"failed: diverged, badly\""));
}

#[test]
fn ablation_grid_has_twelve_labelled_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.train.rounds = 1;
    cmd_phantom(&cfg).unwrap();
    let (cells, path) = cmd_ablate(&cfg).unwrap();
    assert_eq!(cells.len(), 12);
    assert!(cells.iter().all(|c| c.result.is_ok()));
    let text = fs::read_to_string(path).unwrap();
    let labels: Vec<(String, String)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].to_owned(), f[4].to_owned())
        })
        .collect();
    let mut expected = Vec::new();
    for noise in ["slight", "severe"] {
        for l in ["FedMed-C-AR", "FedMed-C-AT", "FedMed-C-AS", "FedMed-C-ATL-1View", "FedMed-C-ATL-2Views", "FedMed-C-ATL-4Views"] {
            expected.push((l.to_owned(), noise.to_owned()));
        }
    }
    assert_eq!(labels, expected);
}
