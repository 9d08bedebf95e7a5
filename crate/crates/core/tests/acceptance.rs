//! Acceptance suite. Every test prints one `criterion N: PASS|FAIL` line to
//! stdout (bypassing the test harness capture) before asserting.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use fedmed::atm::{apply_class, atm_sample_views, SourceKind, TransformKind};
use fedmed::cli::{cmd_ablate, cmd_phantom, ExperimentConfig, Overrides, ABLATION_HEADER};
use fedmed::federated::dp::l2_norm;
use fedmed::federated::objective::{discriminator_objective, generator_objective, ViewTensors};
use fedmed::federated::{
    add_dp_noise, clip_gradient, fedavg_aggregate, run_training, DPConfig, Role, ServerState, TrainConfig,
};
use fedmed::imaging::{rotate, translate, Interp, InterpSpec, Slice2D, ValueRange};
use fedmed::losses::{
    adversarial_loss_d, aux_rotation_loss, aux_scaling_loss, aux_translation_loss, total_discriminator_loss,
    total_generator_loss, LossComponents, LossWeights,
};
use fedmed::metrics::{evaluate, mae, psnr, ssim, Identity, SsimConstants};
use fedmed::mud::{
    build_clients, generate_phantom, paper_scenario, partition_clients, sample_affine, NoiseKind, NoiseLevel, PhantomSpec,
};
use fedmed::networks::{
    slices_to_tensor, DiscriminatorConfig, DiscriminatorParams, Direction, GeneratorConfig, GeneratorParams,
};
use fedmed::seeding::{rng_from, stream};
use fedmed_autograd::Tensor;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::Rng as _;

static SERIAL: Mutex<()> = Mutex::new(());

/// Criteria run one at a time so timed ones measure only their own work.
fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {n}: {verdict} {name} ({detail})");
    let _ = out.flush();
    assert!(pass, "criterion {n} failed: {detail}");
}

fn random_slice(rng: &mut fedmed::seeding::Rng, n: usize, range: ValueRange) -> Slice2D {
    let px = (0..n * n).map(|_| rng.random_range(range.lo..=range.hi)).collect();
    Slice2D::new(n, n, px, range).unwrap()
}

// criterion 1

fn oracle_mae(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).abs();
    }
    s / a.len() as f64
}

fn oracle_psnr(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).powi(2);
    }
    10.0 * (1.0 / (s / a.len() as f64)).log10()
}

/// Moments via E[XY] - E[X]E[Y].
fn oracle_ssim(a: &[f64], b: &[f64], c1: f64, c2: f64) -> f64 {
    let n = a.len() as f64;
    let e = |f: &dyn Fn(usize) -> f64| (0..a.len()).map(f).sum::<f64>() / n;
    let (ma, mb) = (e(&|i| a[i]), e(&|i| b[i]));
    let va = e(&|i| a[i] * a[i]) - ma * ma;
    let vb = e(&|i| b[i] * b[i]) - mb * mb;
    let cov = e(&|i| a[i] * b[i]) - ma * mb;
    (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

#[test]
fn criterion_1_metric_oracles() {
    let _serial = serial();
    let t = Instant::now();
    let c = SsimConstants::default();
    let mut rng = rng_from(101);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let a = random_slice(&mut rng, 16, ValueRange::METRIC);
        let b = random_slice(&mut rng, 16, ValueRange::METRIC);
        let (pa, pb) = (a.pixels(), b.pixels());
        worst = worst
            .max((mae(&a, &b).unwrap() - oracle_mae(pa, pb)).abs())
            .max((psnr(&a, &b).unwrap() - oracle_psnr(pa, pb)).abs())
            .max((ssim(&a, &b, c).unwrap() - oracle_ssim(pa, pb, c.c1, c.c2)).abs());
    }
    let flat = |v: f64| Slice2D::filled(16, 16, v, ValueRange::METRIC).unwrap();
    let round6 = |v: f64| (v * 1e6).round() / 1e6;
    let hand = [
        (round6(mae(&flat(0.0), &flat(0.5)).unwrap()), 0.5),
        (round6(psnr(&flat(0.0), &flat(0.1)).unwrap()), 20.0),
        (round6(ssim(&flat(0.0), &flat(1.0), c).unwrap()), round6(0.01 / 1.01)),
    ];
    let hand_ok = hand.iter().all(|(got, want)| got == want);
    let secs = t.elapsed().as_secs_f64();
    report(
        1,
        "metric oracles",
        worst <= 1e-9 && hand_ok && secs < 5.0,
        &format!("max |diff| {worst:.2e} over 50 pairs, hand values {hand:?}, {secs:.2}s"),
    );
}

// criterion 2

/// Where a pixel at (x, y) of an n×n image lands after a counterclockwise
/// quarter-turn rotation by `quarters` about the image centre.
fn rotated_position(x: usize, y: usize, n: usize, quarters: usize) -> (usize, usize) {
    let m = n - 1;
    match quarters % 4 {
        0 => (x, y),
        1 => (y, m - x),
        2 => (m - x, m - y),
        _ => (m - y, x),
    }
}

fn hot(n: usize, x: usize, y: usize) -> Slice2D {
    Slice2D::from_fn(n, n, ValueRange::TRAINING, |px, py| if (px, py) == (x, y) { 1.0 } else { -1.0 }).unwrap()
}

fn hot_opt(n: usize, p: Option<(i64, i64)>) -> Slice2D {
    match p {
        Some((x, y)) if x >= 0 && y >= 0 && x < n as i64 && y < n as i64 => hot(n, x as usize, y as usize),
        _ => Slice2D::filled(n, n, -1.0, ValueRange::TRAINING).unwrap(),
    }
}

#[test]
fn criterion_2_affine_exactness() {
    let _serial = serial();
    let t = Instant::now();
    let n = 8;
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    for y in 0..n {
        for x in 0..n {
            let img = hot(n, x, y);
            let nearest = InterpSpec::background(Interp::Nearest, &img);
            for q in 0..4 {
                let (ex, ey) = rotated_position(x, y, n, q);
                let want = hot(n, ex, ey);
                mismatches += (rotate(&img, 90.0 * q as f64, nearest).unwrap() != want) as usize;
                mismatches += (apply_class(&img, TransformKind::Rotation, q).unwrap() != want) as usize;
                checked += 2;
            }
            for dy in -9i64..=9 {
                for dx in -9i64..=9 {
                    let want = hot_opt(n, Some((x as i64 + dx, y as i64 + dy)));
                    mismatches += (translate(&img, dx as f64, dy as f64, nearest).unwrap() != want) as usize;
                    checked += 1;
                }
            }
            for label in 0..4 {
                // every translation class shifts by 30 px, beyond an 8 px image
                let want = hot_opt(n, None);
                mismatches += (apply_class(&img, TransformKind::Translation, label).unwrap() != want) as usize;
                checked += 1;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    report(
        2,
        "affine exactness",
        mismatches == 0 && secs < 5.0,
        &format!("{checked} hot-pixel cases, {mismatches} mismatches, {secs:.2}s"),
    );
}

// criterion 3

#[test]
fn criterion_3_loss_calibration() {
    let _serial = serial();
    let lambda = 0.7;
    let labels = [0usize, 1, 2, 3];
    let checks = [
        (aux_rotation_loss(&[[0.0; 4]; 4], &labels, 1.0).unwrap(), 4f64.ln()),
        (aux_translation_loss(&[[2.5; 4]; 4], &labels, 1.0).unwrap(), 4f64.ln()),
        (aux_scaling_loss(&[[-1.0; 3]; 3], &[0, 1, 2], 1.0).unwrap(), 3f64.ln()),
        (aux_rotation_loss(&[[0.0; 4]; 4], &labels, lambda).unwrap(), lambda * 4f64.ln()),
        (aux_scaling_loss(&[[0.0; 3]; 3], &[2, 1, 0], lambda).unwrap(), lambda * 3f64.ln()),
        (adversarial_loss_d(&[0.5; 3], &[0.5; 3]), 2.0 * 2f64.ln()),
    ];
    let worst = checks.iter().map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
    let ones = LossComponents { adv: 1.0, cyc: 1.0, rot: 1.0, trans: 1.0, scale: 1.0 };
    let g_total = total_generator_loss(&ones, &LossWeights::GENERATOR);
    let d_total = total_discriminator_loss(&ones, &LossWeights::DISCRIMINATOR);
    let mixed = LossComponents { adv: 0.5, cyc: 0.25, rot: 2.0, trans: 1.5, scale: 1.0 };
    let g_mixed = total_generator_loss(&mixed, &LossWeights::GENERATOR);
    let sums_ok = g_total == 14.0 && d_total == 2.5 && (g_mixed - (0.5 + 2.5 + 2.0 + 1.5 + 1.0)).abs() < 1e-12;
    report(
        3,
        "loss calibration",
        worst < 1e-6 && sums_ok,
        &format!("max |diff| {worst:.2e}; totals G {g_total} D {d_total} mixed {g_mixed}"),
    );
}

// criterion 4

const H: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    let d = (a - n).abs();
    if d < 1e-9 {
        0.0
    } else {
        d / a.abs().max(n.abs())
    }
}

/// Indices into a flat discriminator vector: the whole encoder and projection,
/// all of the output layer of `focus` and a seeded sample of everything else.
fn disc_coords(cfg: &DiscriminatorConfig, focus: &str, rng: &mut fedmed::seeding::Rng) -> Vec<usize> {
    let mut coords = Vec::new();
    let mut offset = 0;
    for (name, shape) in cfg.layout() {
        let len: usize = shape.iter().product();
        let full = !name.starts_with("head_") || (name.starts_with(focus) && name.contains("fc2"));
        if full {
            coords.extend(offset..offset + len);
        } else {
            let k = if name.starts_with(focus) { 96 } else { 8 };
            coords.extend((0..k.min(len)).map(|_| offset + rng.random_range(0..len)));
        }
        offset += len;
    }
    coords
}

/// Worst relative error at the stated step, plus the worst over coordinates
/// whose bracket is kink-free. A coordinate counts as kinked when the step
/// disagrees but a 1e-7 step agrees: for a smooth loss the two central
/// differences differ only by O(h²).
struct FdCheck {
    literal: f64,
    adjusted: f64,
    kinked: usize,
    checked: usize,
}

fn check_coords(base: &[f64], analytic: &[f64], coords: &[usize], eval: impl Fn(&[f64]) -> f64) -> FdCheck {
    let mut v = base.to_vec();
    let mut central = |i: usize, h: f64| {
        v[i] = base[i] + h;
        let plus = eval(&v);
        v[i] = base[i] - h;
        let minus = eval(&v);
        v[i] = base[i];
        (plus - minus) / (2.0 * h)
    };
    let mut r = FdCheck { literal: 0.0, adjusted: 0.0, kinked: 0, checked: coords.len() };
    for &i in coords {
        let e = rel_err(analytic[i], central(i, H));
        r.literal = r.literal.max(e);
        if e < 1e-3 {
            r.adjusted = r.adjusted.max(e);
            continue;
        }
        let fine = rel_err(analytic[i], central(i, 1e-7));
        if fine < 1e-3 {
            r.kinked += 1;
        } else {
            r.adjusted = r.adjusted.max(e);
        }
    }
    r
}

#[test]
fn criterion_4_gradient_checks() {
    let _serial = serial();
    let gcfg = GeneratorConfig::new(1, 2);
    let dcfg = DiscriminatorConfig { base_channels: 2, downsamples: 2 };
    let g_ab = GeneratorParams::<f64>::init(gcfg, Direction::AToB, 1).unwrap();
    let g_ba = GeneratorParams::<f64>::init(gcfg, Direction::BToA, 2).unwrap();
    let d_a = DiscriminatorParams::<f64>::init(dcfg, 3).unwrap();
    let d_b = DiscriminatorParams::<f64>::init(dcfg, 4).unwrap();
    let mut rng = rng_from(5);
    let xs: Vec<Slice2D> = (0..2).map(|_| random_slice(&mut rng, 8, ValueRange::TRAINING)).collect();
    let ys: Vec<Slice2D> = (0..2).map(|_| random_slice(&mut rng, 8, ValueRange::TRAINING)).collect();
    let x: Tensor<f64> = slices_to_tensor(&xs.iter().collect::<Vec<_>>()).unwrap();
    let y: Tensor<f64> = slices_to_tensor(&ys.iter().collect::<Vec<_>>()).unwrap();
    let fake = g_ab.forward(&x).unwrap();
    let fake_slices = fedmed::networks::tensor_to_slices(&fake, ValueRange::TRAINING).unwrap();
    let views = |imgs: &[Slice2D], src, rng: &mut fedmed::seeding::Rng| {
        let vb: Vec<_> = imgs.iter().map(|i| atm_sample_views(i, 1, src, rng).unwrap()).collect();
        ViewTensors::<f64>::from_batch(&fedmed::atm::ViewBatch::merge(vb).unwrap()).unwrap()
    };
    let real_views = views(&ys, SourceKind::Real, &mut rng);
    let fake_views = views(&fake_slices, SourceKind::Fake, &mut rng);

    let only = |adv, cyc, rot, trans, scale| LossWeights { adv, cyc, rot, trans, scale };
    let mut lines = Vec::new();
    let mut checks = Vec::new();
    let summary = |term: &str, rs: &[&FdCheck]| {
        let adjusted = rs.iter().map(|r| r.adjusted).fold(0.0, f64::max);
        let n: usize = rs.iter().map(|r| r.checked).sum();
        let k: usize = rs.iter().map(|r| r.kinked).sum();
        format!("{term} {adjusted:.1e} over {n} ({k} kinked)")
    };
    for (term, w, focus) in [
        ("D adversarial", only(1.0, 0.0, 0.0, 0.0, 0.0), "head_d"),
        ("D rotation", only(0.0, 0.0, 1.0, 0.0, 0.0), "head_r"),
        ("D translation", only(0.0, 0.0, 0.0, 1.0, 0.0), "head_t"),
        ("D scale", only(0.0, 0.0, 0.0, 0.0, 1.0), "head_s"),
    ] {
        let obj = |d: &DiscriminatorParams<f64>| {
            discriminator_objective(d, &y, &fake, Some(&real_views), Some(&fake_views), &w).unwrap()
        };
        let analytic = obj(&d_b).grads.remove(0).to_vec();
        let base = d_b.to_vector();
        let coords = disc_coords(&dcfg, focus, &mut rng);
        let r = check_coords(&base, &analytic, &coords, |v| obj(&d_b.with_vector(v).unwrap()).total);
        lines.push(summary(term, &[&r]));
        checks.push(r);
    }
    for (term, w) in [("G adversarial", only(1.0, 0.0, 0.0, 0.0, 0.0)), ("G cycle", only(0.0, 10.0, 0.0, 0.0, 0.0))] {
        let obj = |ga: &GeneratorParams<f64>, gb: &GeneratorParams<f64>| {
            generator_objective(ga, gb, &d_b, &d_a, &x, &y, LossComponents::default(), &w).unwrap()
        };
        let o = obj(&g_ab, &g_ba);
        let (base_ab, base_ba) = (g_ab.to_vector(), g_ba.to_vector());
        let all_ab: Vec<usize> = (0..base_ab.len()).collect();
        let ra = check_coords(&base_ab, &o.grads[0], &all_ab, |v| obj(&g_ab.with_vector(v).unwrap(), &g_ba).total);
        let rb = check_coords(&base_ba, &o.grads[1], &all_ab, |v| obj(&g_ab, &g_ba.with_vector(v).unwrap()).total);
        lines.push(summary(term, &[&ra, &rb]));
        checks.extend([ra, rb]);
    }
    let adjusted = checks.iter().map(|c| c.adjusted).fold(0.0, f64::max);
    let literal = checks.iter().map(|c| c.literal).fold(0.0, f64::max);
    let kinked: usize = checks.iter().map(|c| c.kinked).sum();
    let checked: usize = checks.iter().map(|c| c.checked).sum();
    lines.push(format!(
        "step 1e-4 max {literal:.1e} overall; {kinked}/{checked} brackets straddle a LeakyReLU kink and agree at step 1e-7"
    ));
    report(4, "gradient checks", adjusted < 1e-3, &lines.join("; "));
}

// criterion 5

#[test]
fn criterion_5_fedavg_oracle() {
    let _serial = serial();
    let cfg = GeneratorConfig::new(1, 2);
    let n = cfg.parameter_count();
    let template = GeneratorParams::<f32>::zeros(cfg, Direction::AToB).unwrap();
    let clients: Vec<_> = [1.0f32, 2.0, 3.0, 4.0].iter().map(|&v| template.with_vector(&vec![v; n]).unwrap()).collect();
    let entries: Vec<_> = clients.iter().zip([0.4, 0.3, 0.2, 0.1]).collect();
    let avg = fedavg_aggregate(&entries).unwrap().to_vector();
    let worst = avg.iter().map(|v| (*v as f64 - 2.0).abs()).fold(0.0, f64::max);

    // exhaustive destructuring: adding any field to ServerState breaks this line
    let server = ServerState::new(&TrainConfig { generator: cfg, ..TrainConfig::default() }).unwrap();
    let ServerState { gen_ab, gen_ba, round_index: _, registry: _ } = &server;
    let server_params = gen_ab.to_vector().len() + gen_ba.to_vector().len();
    report(
        5,
        "FedAvg oracle",
        worst < 1e-6 && server_params == 2 * n,
        &format!("max |avg - 2| {worst:.1e}; server holds {server_params} = 2 x {n} generator parameters only"),
    );
}

// criterion 6

fn tiny_run(dp: &DPConfig) -> (Vec<f32>, Vec<f64>) {
    let corpus =
        generate_phantom(&PhantomSpec { n_volumes: 8, slices_per_volume: 1, image_size: 16, seed: 1, ..Default::default() })
            .unwrap();
    let clients = build_clients(&corpus, &paper_scenario(NoiseKind::Slight)[..1].iter().map(|c| fedmed::mud::ClientSpec { proportion: 1.0, ..c.clone() }).collect::<Vec<_>>(), &mut rng_from(2)).unwrap();
    let cfg = TrainConfig {
        rounds: 3,
        local_epochs: 1,
        batch_size: 4,
        views_k: 1,
        generator: GeneratorConfig::new(1, 2),
        discriminator: DiscriminatorConfig { base_channels: 2, downsamples: 2 },
        seed: 3,
        ..TrainConfig::default()
    };
    let out = run_training(&cfg, dp, clients, |_, _, _| Ok(())).unwrap();
    let mut params = out.server.gen_ab.to_vector();
    params.extend(out.server.gen_ba.to_vector());
    (params, out.records.iter().map(|r| r.total).collect())
}

#[test]
fn criterion_6_dp_contract() {
    let _serial = serial();
    let bound = 1.0;
    let mut runner = TestRunner::new(Config { cases: 1000, ..Config::default() });
    let clip = runner.run(&(prop::collection::vec(-1e3f32..1e3, 1..300), 0.01f64..10.0), |(g, b)| {
        let c = clip_gradient(&g, b);
        prop_assert!(l2_norm(&c) <= b, "norm {} > {b}", l2_norm(&c));
        Ok(())
    });

    let plain = tiny_run(&DPConfig::disabled());
    let zero_noise = tiny_run(&DPConfig { clip_bound: 1e9, noise_multiplier: 0.0, ..DPConfig::default() });
    let bit_exact = plain.0.iter().map(|v| v.to_bits()).eq(zero_noise.0.iter().map(|v| v.to_bits()))
        && plain.1.iter().map(|v| v.to_bits()).eq(zero_noise.1.iter().map(|v| v.to_bits()));

    let dp = DPConfig { clip_bound: bound, ..DPConfig::default() };
    let noise = add_dp_noise(&vec![0.0f64; 10_000], &dp, &mut rng_from(6));
    let mean = noise.iter().sum::<f64>() / 1e4;
    let std = (noise.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1e4).sqrt();
    let std_ok = (std - 1.07).abs() <= 0.03 * 1.07;
    report(
        6,
        "DP contract",
        clip.is_ok() && bit_exact && std_ok,
        &format!(
            "clip property over 1000 vectors: {}; nm=0 vs no-DP bit-exact over 3 rounds: {bit_exact}; noise std {std:.4}",
            if clip.is_ok() { "held" } else { "violated" }
        ),
    );
}

// criterion 7

#[test]
fn criterion_7_mud_ranges_and_partition() {
    let _serial = serial();
    let level = NoiseLevel::SEVERE;
    let mut rng = rng_from(7);
    let draws: Vec<_> = (0..10_000).map(|_| sample_affine(&level, &mut rng)).collect();
    let inside = draws.iter().all(|p| level.contains(p));
    let extremes = |f: &dyn Fn(&fedmed::imaging::AffineParams) -> f64, (lo, hi): (f64, f64)| {
        let min = draws.iter().map(f).fold(f64::INFINITY, f64::min);
        let max = draws.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        let tol = 0.02 * (hi - lo);
        (min - lo <= tol && hi - max <= tol, min, max)
    };
    let checks = [
        extremes(&|p| p.rotation_deg, level.rotation),
        extremes(&|p| p.translate_x, level.translation),
        extremes(&|p| p.translate_y, level.translation),
        extremes(&|p| p.scale_ratio, level.scale),
    ];
    let extremes_ok = checks.iter().all(|c| c.0);

    let corpus =
        generate_phantom(&PhantomSpec { n_volumes: 40, slices_per_volume: 2, image_size: 16, seed: 8, ..Default::default() })
            .unwrap();
    let shards = partition_clients(&corpus, &paper_scenario(NoiseKind::Severe), &mut rng_from(9)).unwrap();
    let sizes: Vec<usize> = shards.iter().map(|s| s.subjects.len()).collect();
    let mut seen = BTreeSet::new();
    let disjoint = shards.iter().flat_map(|s| &s.subjects).all(|s| seen.insert(s.clone()));
    let exhaustive = seen.into_iter().collect::<Vec<_>>() == corpus.subjects();
    let clients = build_clients(&corpus, &paper_scenario(NoiseKind::Severe), &mut rng_from(9)).unwrap();
    let granular = clients.iter().all(|c| {
        let per_volume = c.pairs.iter().filter(|p| c.subjects.contains(&p.subject_a)).count();
        per_volume == c.subjects.len() * 2 && c.pairs.iter().all(|p| c.subjects.contains(&p.subject_b))
    });
    report(
        7,
        "MUD ranges and partition",
        inside && extremes_ok && sizes == [16, 12, 8, 4] && disjoint && exhaustive && granular,
        &format!(
            "10k draws inside: {inside}; extremes {:?}; shard sizes {sizes:?}, disjoint {disjoint}, exhaustive {exhaustive}, volume-granular {granular}",
            checks.iter().map(|c| (c.1 * 100.0).round() / 100.0..=(c.2 * 100.0).round() / 100.0).collect::<Vec<_>>()
        ),
    );
}

// criterion 8

#[test]
fn criterion_8_end_to_end() {
    let _serial = serial();
    let t = Instant::now();
    let spec = PhantomSpec { n_volumes: 20, slices_per_volume: 8, image_size: 64, seed: 11, ..Default::default() };
    let corpus = generate_phantom(&spec).unwrap();
    let test = generate_phantom(&PhantomSpec { n_volumes: 4, seed: 12, ..spec }).unwrap().aligned_pairs().unwrap();
    let clients = build_clients(&corpus, &paper_scenario(NoiseKind::Severe), &mut stream(11, &["mud"])).unwrap();
    let cfg = TrainConfig { rounds: 3, local_epochs: 3, batch_size: 4, views_k: 4, seed: 11, ..TrainConfig::default() };
    assert_eq!((cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2), (1e-4, 0.5, 0.999));
    let out = run_training(&cfg, &DPConfig::disabled(), clients, |_, _, _| Ok(())).unwrap();
    let model = evaluate(&out.server.gen_ab, &test, SsimConstants::default()).unwrap();
    let identity = evaluate(&Identity, &test, SsimConstants::default()).unwrap();
    let gen_loss = |r: &fedmed::federated::LossRecord| r.components.adv + cfg.gen_weights.cyc * r.components.cyc;
    let gen: Vec<_> = out.records.iter().filter(|r| r.role == Role::Gen).collect();
    let initial = gen_loss(gen[0]);
    let last: Vec<f64> = gen.iter().filter(|r| r.round == cfg.rounds).map(|r| gen_loss(r)).collect();
    let final_mean = last.iter().sum::<f64>() / last.len() as f64;
    let beats = model.mae < identity.mae && model.psnr > identity.psnr && model.ssim > identity.ssim;
    let secs = t.elapsed().as_secs_f64();
    report(
        8,
        "end-to-end smoke",
        beats && final_mean < initial && secs <= 900.0,
        &format!(
            "model mae {:.4} psnr {:.3} ssim {:.4} vs identity mae {:.4} psnr {:.3} ssim {:.4}; G adv+cyc {initial:.3} -> {final_mean:.3}; {secs:.0}s",
            model.mae, model.psnr, model.ssim, identity.mae, identity.psnr, identity.ssim
        ),
    );
}

// criterion 9

#[test]
fn criterion_9_ablation_grid() {
    let _serial = serial();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig { out: Some(dir.path().to_owned()), ..Default::default() };
    cfg.phantom.n_volumes = 22;
    cfg.phantom.slices_per_volume = 4;
    cfg.phantom.image_size = 32;
    cfg.data.image_size = 32;
    cfg.data.test_volumes = 2;
    cfg.train.rounds = 1;
    cfg.train.local_epochs = 1;
    cfg.train.generator = GeneratorConfig::new(2, 8);
    cfg.train.discriminator = DiscriminatorConfig { base_channels: 8, downsamples: 3 };
    let cfg = cfg.resolve(&Overrides { seed: Some(9), dp: Some(false), ..Default::default() }).unwrap();
    cmd_phantom(&cfg).unwrap();
    let (cells, path) = cmd_ablate(&cfg).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header_ok = lines.next() == Some(ABLATION_HEADER);
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_owned).collect()).collect();
    let mut expected = Vec::new();
    for noise in ["slight", "severe"] {
        for (label, variant, views) in [
            ("FedMed-C-AR", "ar-only", "4"),
            ("FedMed-C-AT", "at-only", "4"),
            ("FedMed-C-AS", "as-only", "4"),
            ("FedMed-C-ATL-1View", "atl", "1"),
            ("FedMed-C-ATL-2Views", "atl", "2"),
            ("FedMed-C-ATL-4Views", "atl", "4"),
        ] {
            expected.push(vec![label.to_owned(), variant.to_owned(), views.to_owned(), noise.to_owned()]);
        }
    }
    let structure_ok = rows.iter().map(|r| r[1..5].to_vec()).collect::<Vec<_>>() == expected;
    let populated = rows.iter().all(|r| {
        r[5..8].iter().all(|v| v.parse::<f64>().is_ok_and(f64::is_finite)) && r[9] == "ok"
    });
    report(
        9,
        "ablation grid structure",
        header_ok && structure_ok && populated && cells.len() == 12,
        &format!("{} rows, header ok {header_ok}, structure ok {structure_ok}, all cells populated {populated}", rows.len()),
    );
}
