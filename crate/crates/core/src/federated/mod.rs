//! Federated CycleGAN training with generator-only aggregation.
//!
//! Each round the server broadcasts its two generators, every client trains
//! locally against its own private discriminators, and the server replaces
//! its generators by the proportion-weighted mean of the client copies.
//! Discriminators never leave their client: [`ServerState`] has no field that
//! could hold one.

pub mod dp;
pub mod objective;

use fedmed_autograd::{Adam, Tensor};
use log::debug;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::atm::{atm_sample_views, check_views, SourceKind, ViewBatch};
use crate::error::{Error, Result};
use crate::imaging::ValueRange;
use crate::losses::{LossComponents, LossWeights};
use crate::mud::ClientDataset;
use crate::networks::{
    slices_to_tensor, tensor_to_slices, DiscriminatorConfig, DiscriminatorParams, Direction, GeneratorConfig,
    GeneratorParams,
};
use crate::seeding::{self, derive_seed, Rng};

pub use dp::{add_dp_noise, clip_gradient, DPConfig};
use objective::{discriminator_objective, generator_objective, real_view_aux, ViewTensors};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub views_k: usize,
    pub gen_weights: LossWeights,
    pub disc_weights: LossWeights,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub seed: u64,
    /// Train clients on separate threads between aggregation barriers.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rounds: 3,
            local_epochs: 3,
            batch_size: 4,
            learning_rate: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            views_k: 4,
            gen_weights: LossWeights::GENERATOR,
            disc_weights: LossWeights::DISCRIMINATOR,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            seed: 0,
            parallel: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        for b in [self.adam_beta1, self.adam_beta2] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("Adam betas must lie in [0, 1), got {b}")));
            }
        }
        check_views(self.views_k)?;
        self.gen_weights.validate()?;
        self.disc_weights.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Disc,
    Gen,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Disc => "disc",
            Role::Gen => "gen",
        })
    }
}

/// Losses of one optimisation step. Discriminator records sum both
/// directions; generator records cover the joint update of both generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub round: usize,
    pub client: u32,
    pub epoch: usize,
    pub step: usize,
    pub role: Role,
    pub components: LossComponents,
    pub total: f64,
}

/// Everything one hospital holds.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: u32,
    pub gen_ab: GeneratorParams,
    pub gen_ba: GeneratorParams,
    /// Judges modality B, i.e. the output of `gen_ab`.
    pub disc_ab: DiscriminatorParams,
    /// Judges modality A.
    pub disc_ba: DiscriminatorParams,
    pub dataset: ClientDataset,
    pub proportion: f64,
    pub opt_disc_ab: Adam<f32>,
    pub opt_disc_ba: Adam<f32>,
    pub seed: u64,
}

impl ClientState {
    pub fn new(dataset: ClientDataset, server: &ServerState, cfg: &TrainConfig) -> Result<Self> {
        let id = dataset.client_id;
        let seed = derive_seed(cfg.seed, &["client", &id.to_string()]);
        let disc = |tag: &str| DiscriminatorParams::init(cfg.discriminator, derive_seed(seed, &[tag]));
        let (disc_ab, disc_ba) = (disc("disc_ab")?, disc("disc_ba")?);
        let adam = |d: &DiscriminatorParams| Adam::new(d.params.len(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
        Ok(Self {
            client_id: id,
            gen_ab: server.gen_ab.clone(),
            gen_ba: server.gen_ba.clone(),
            opt_disc_ab: adam(&disc_ab),
            opt_disc_ba: adam(&disc_ba),
            disc_ab,
            disc_ba,
            proportion: dataset.proportion,
            dataset,
            seed,
        })
    }
}

/// Global model held by the aggregator.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub gen_ab: GeneratorParams,
    pub gen_ba: GeneratorParams,
    pub round_index: usize,
    /// `(client_id, proportion)` of every registered client.
    pub registry: Vec<(u32, f64)>,
}

impl ServerState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        Ok(Self {
            gen_ab: GeneratorParams::init(cfg.generator, Direction::AToB, derive_seed(cfg.seed, &["server", "gen_ab"]))?,
            gen_ba: GeneratorParams::init(cfg.generator, Direction::BToA, derive_seed(cfg.seed, &["server", "gen_ba"]))?,
            round_index: 0,
            registry: Vec::new(),
        })
    }

    pub fn register(&mut self, clients: &[ClientState]) -> Result<()> {
        let registry: Vec<(u32, f64)> = clients.iter().map(|c| (c.client_id, c.proportion)).collect();
        let total: f64 = registry.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("registered client proportions sum to {total}, expected 1")));
        }
        self.registry = registry;
        Ok(())
    }
}

/// Coordinate-wise proportion-weighted mean, accumulated in f64.
pub fn fedavg_aggregate(entries: &[(&GeneratorParams, f64)]) -> Result<GeneratorParams> {
    let (first, _) = entries.first().ok_or_else(|| Error::invalid("nothing to aggregate"))?;
    let total: f64 = entries.iter().map(|(_, p)| p).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("aggregation proportions sum to {total}, expected 1")));
    }
    let n = first.params.len();
    let mut acc = vec![0.0f64; n];
    for (g, p) in entries {
        if g.config != first.config || g.direction != first.direction {
            return Err(Error::invalid("aggregated generators differ in architecture or direction"));
        }
        for (a, v) in acc.iter_mut().zip(g.to_vector()) {
            *a += p * v as f64;
        }
    }
    let v: Vec<f32> = acc.into_iter().map(|x| x as f32).collect();
    (*first).with_vector(&v)
}

fn views_for(batch: &[crate::imaging::Slice2D], k: usize, source: SourceKind, rng: &mut Rng) -> Result<ViewBatch> {
    ViewBatch::merge(batch.iter().map(|img| atm_sample_views(img, k, source, rng)).collect::<Result<_>>()?)
}

fn diverged(round: usize, client: u32, step: usize, what: &str) -> Error {
    Error::Divergence { step: format!("round {round}, client {client}, step {step}"), message: format!("non-finite {what}") }
}

/// Broadcast, then `local_epochs` passes of alternating discriminator and
/// generator updates over the client's shuffled samples.
pub fn local_train(
    client: &mut ClientState,
    global: (&GeneratorParams, &GeneratorParams),
    cfg: &TrainConfig,
    dp: &DPConfig,
    round: usize,
) -> Result<Vec<LossRecord>> {
    let (g_ab, g_ba) = global;
    if g_ab.config != client.gen_ab.config || g_ba.config != client.gen_ba.config {
        return Err(Error::invalid("global generators do not match the client architecture"));
    }
    client.gen_ab = g_ab.clone();
    client.gen_ba = g_ba.clone();
    let mut records = Vec::new();
    if cfg.local_epochs == 0 {
        return Ok(records);
    }
    let adam = |g: &GeneratorParams| Adam::new(g.params.len(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
    let mut opt_ab = adam(&client.gen_ab);
    let mut opt_ba = adam(&client.gen_ba);
    let id = client.client_id;
    let tag = |parts: &[&str]| {
        let mut p = vec!["round".to_string(), round.to_string()];
        p.extend(parts.iter().map(|s| s.to_string()));
        p
    };
    let stream = |parts: Vec<String>| {
        let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
        seeding::stream(client.seed, &refs)
    };
    let mut dp_rng = stream(tag(&["dp"]));
    let use_d_atm = cfg.disc_weights.uses_atm();
    let use_g_atm = cfg.gen_weights.uses_atm();
    let mut step = 0;

    for epoch in 0..cfg.local_epochs {
        let mut order: Vec<usize> = (0..client.dataset.pairs.len()).collect();
        order.shuffle(&mut stream(tag(&["epoch", &epoch.to_string(), "shuffle"])));
        let mut view_rng = stream(tag(&["epoch", &epoch.to_string(), "views"]));

        for chunk in order.chunks(cfg.batch_size) {
            let pairs: Vec<_> = chunk.iter().map(|&i| &client.dataset.pairs[i]).collect();
            let real_a: Vec<_> = pairs.iter().map(|p| p.img_a.clone()).collect();
            let real_b: Vec<_> = pairs.iter().map(|p| p.img_b.clone()).collect();
            let x: Tensor<f32> = slices_to_tensor(&real_a.iter().collect::<Vec<_>>())?;
            let y: Tensor<f32> = slices_to_tensor(&real_b.iter().collect::<Vec<_>>())?;

            // discriminator step on detached fakes
            let fake_b = client.gen_ab.forward(&x)?;
            let fake_a = client.gen_ba.forward(&y)?;
            let mut views = None;
            if use_d_atm || use_g_atm {
                let fb = tensor_to_slices(&fake_b, ValueRange::TRAINING)?;
                let fa = tensor_to_slices(&fake_a, ValueRange::TRAINING)?;
                let rb = views_for(&real_b, cfg.views_k, SourceKind::Real, &mut view_rng)?;
                let fbv = views_for(&fb, cfg.views_k, SourceKind::Fake, &mut view_rng)?;
                let ra = views_for(&real_a, cfg.views_k, SourceKind::Real, &mut view_rng)?;
                let fav = views_for(&fa, cfg.views_k, SourceKind::Fake, &mut view_rng)?;
                crate::losses::check_discriminator_views(&[&rb, &fbv, &ra, &fav])?;
                views = Some([
                    ViewTensors::<f32>::from_batch(&rb)?,
                    ViewTensors::from_batch(&fbv)?,
                    ViewTensors::from_batch(&ra)?,
                    ViewTensors::from_batch(&fav)?,
                ]);
            }
            let v = |i: usize| views.as_ref().filter(|_| use_d_atm).map(|vs| &vs[i]);
            let ob = discriminator_objective(&client.disc_ab, &y, &fake_b, v(0), v(1), &cfg.disc_weights)?;
            let oa = discriminator_objective(&client.disc_ba, &x, &fake_a, v(2), v(3), &cfg.disc_weights)?;
            let d_total = ob.total + oa.total;
            if !d_total.is_finite() {
                return Err(diverged(round, id, step, "discriminator loss"));
            }
            let mut w = client.disc_ab.to_vector();
            client.opt_disc_ab.step(&mut w, &ob.grads[0]);
            client.disc_ab = client.disc_ab.with_vector(&w)?;
            let mut w = client.disc_ba.to_vector();
            client.opt_disc_ba.step(&mut w, &oa.grads[0]);
            client.disc_ba = client.disc_ba.with_vector(&w)?;
            records.push(LossRecord {
                round,
                client: id,
                epoch,
                step,
                role: Role::Disc,
                components: sum_components(&ob.components, &oa.components),
                total: d_total,
            });

            // generator step; auxiliary terms see real views only
            let aux = match &views {
                Some(vs) if use_g_atm => sum_components(
                    &real_view_aux(&client.disc_ab, &vs[0], &cfg.gen_weights),
                    &real_view_aux(&client.disc_ba, &vs[2], &cfg.gen_weights),
                ),
                _ => LossComponents::default(),
            };
            let og = generator_objective(
                &client.gen_ab,
                &client.gen_ba,
                &client.disc_ab,
                &client.disc_ba,
                &x,
                &y,
                aux,
                &cfg.gen_weights,
            )?;
            if !og.total.is_finite() || !og.components.all_finite() {
                return Err(diverged(round, id, step, "generator loss"));
            }
            let grad_ab = dp::privatize(&og.grads[0], dp, &mut dp_rng);
            let grad_ba = dp::privatize(&og.grads[1], dp, &mut dp_rng);
            let mut w = client.gen_ab.to_vector();
            opt_ab.step(&mut w, &grad_ab);
            client.gen_ab = client.gen_ab.with_vector(&w)?;
            let mut w = client.gen_ba.to_vector();
            opt_ba.step(&mut w, &grad_ba);
            client.gen_ba = client.gen_ba.with_vector(&w)?;
            if !(client.gen_ab.params.all_finite() && client.gen_ba.params.all_finite()) {
                return Err(diverged(round, id, step, "generator parameters"));
            }
            records.push(LossRecord {
                round,
                client: id,
                epoch,
                step,
                role: Role::Gen,
                components: og.components,
                total: og.total,
            });
            debug!("round {round} client {id} step {step}: D {d_total:.4} G {:.4}", og.total);
            step += 1;
        }
    }
    Ok(records)
}

fn sum_components(a: &LossComponents, b: &LossComponents) -> LossComponents {
    LossComponents {
        adv: a.adv + b.adv,
        cyc: a.cyc + b.cyc,
        rot: a.rot + b.rot,
        trans: a.trans + b.trans,
        scale: a.scale + b.scale,
    }
}

/// One synchronous round over every client, in ascending id order unless
/// `cfg.parallel` is set. Returns the next server state and all loss records.
pub fn run_round(
    server: &ServerState,
    clients: &mut [ClientState],
    cfg: &TrainConfig,
    dp: &DPConfig,
) -> Result<(ServerState, Vec<LossRecord>)> {
    for c in clients.iter() {
        if !server.registry.iter().any(|(id, _)| *id == c.client_id) {
            return Err(Error::InvalidState(format!("client {} is not registered", c.client_id)));
        }
    }
    clients.sort_by_key(|c| c.client_id);
    let round = server.round_index + 1;
    let global = (&server.gen_ab, &server.gen_ba);
    let results: Vec<Result<Vec<LossRecord>>> = if cfg.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> =
                clients.iter_mut().map(|c| s.spawn(move || local_train(c, global, cfg, dp, round))).collect();
            handles.into_iter().map(|h| h.join().expect("client thread panicked")).collect()
        })
    } else {
        clients.iter_mut().map(|c| local_train(c, global, cfg, dp, round)).collect()
    };
    let mut records = Vec::new();
    for r in results {
        records.extend(r?);
    }
    let weight = |id: u32| server.registry.iter().find(|(c, _)| *c == id).map(|(_, p)| *p).unwrap_or(0.0);
    let ab: Vec<_> = clients.iter().map(|c| (&c.gen_ab, weight(c.client_id))).collect();
    let ba: Vec<_> = clients.iter().map(|c| (&c.gen_ba, weight(c.client_id))).collect();
    let next = ServerState {
        gen_ab: fedavg_aggregate(&ab)?,
        gen_ba: fedavg_aggregate(&ba)?,
        round_index: round,
        registry: server.registry.clone(),
    };
    Ok((next, records))
}

/// Result of a whole federated run.
#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub records: Vec<LossRecord>,
}

/// Builds client states from `datasets` and runs `cfg.rounds` rounds.
///
/// `on_round` sees the initial state (round 0) and the state after every
/// round, before the next one starts; checkpoint writers hook in here so a
/// later failure leaves earlier rounds on disk.
pub fn run_training(
    cfg: &TrainConfig,
    dp: &DPConfig,
    datasets: Vec<ClientDataset>,
    mut on_round: impl FnMut(&ServerState, &[ClientState], &[LossRecord]) -> Result<()>,
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    dp.validate()?;
    let mut server = ServerState::new(cfg)?;
    let mut clients = datasets.into_iter().map(|d| ClientState::new(d, &server, cfg)).collect::<Result<Vec<_>>>()?;
    clients.sort_by_key(|c| c.client_id);
    server.register(&clients)?;
    on_round(&server, &clients, &[])?;
    let mut records = Vec::new();
    for _ in 0..cfg.rounds {
        let (next, recs) = run_round(&server, &mut clients, cfg, dp)?;
        server = next;
        on_round(&server, &clients, &recs)?;
        records.extend(recs);
    }
    Ok(TrainingOutcome { server, clients, records })
}
