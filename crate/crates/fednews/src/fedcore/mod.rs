//! One federated round: group sampling, private union-set computation,
//! distribution of the user model and requested representations, local
//! training, weighted gradient aggregation, and the two server-side updates.
//!
//! The server round loop is sequential; every cross-party interaction goes
//! through the simulated transport so the cost ledger sees all of it.

mod checkpoint;
mod optimizer;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use optimizer::{adam_news_step, adam_step, fedadam_step, AdamState, OptimizerConfig};

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::Rng;

use crate::data::{ClientStore, Corpus};
use crate::error::{ExperimentError, ModelError, SecAggError};
use crate::linalg::axpy;
use crate::model::{
    backward_dropout, backward_with_loss, encode_news, news_encoder_backward, ItemId,
    LocalGradients, ModelDims, NewsEncoderParams, Pooling, UserId, UserModelParams,
};
use crate::netsim::{Bus, Message, PartyId, Phase, SERVER};
use crate::rng::Seeder;
use crate::secagg::{
    decode_union, dequantize, encode_union, quantize, run_session, PhaseGroup, SecAggConfig,
};

/// Which protocol the round runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BaselineMode {
    /// Exchange the user model and union-set representations only.
    #[default]
    Efficient,
    /// Exchange the whole model, gradients included, like classic federated
    /// training of the full network.
    WholeModel,
}

/// Round-level configuration.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub opt: OptimizerConfig,
    pub secagg: SecAggConfig,
    pub secure_aggregation: bool,
    pub baseline: BaselineMode,
    /// History-input dropout rate applied during local training.
    pub dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            opt: OptimizerConfig::default(),
            secagg: SecAggConfig::default(),
            secure_aggregation: true,
            baseline: BaselineMode::Efficient,
            dropout: 0.0,
        }
    }
}

/// Server-held state: the item encoder, the inferred item table, the shared
/// user model, and both optimizer moments.
pub struct ServerState {
    pub dims: ModelDims,
    pub encoder: NewsEncoderParams,
    pub user_model: UserModelParams,
    pub news_table: Vec<Vec<f64>>,
    pub user_moments: AdamState,
    pub news_moments: AdamState,
    pub round: u64,
}

impl ServerState {
    /// Seeded uniform(-0.1, 0.1) parameters, zero moments, fresh table.
    pub fn init(
        dims: &ModelDims,
        pooling: Pooling,
        corpus: &Corpus,
        seeder: &Seeder,
    ) -> Result<Self, ModelError> {
        dims.validate()?;
        let mut user_rng = seeder.rng("init-user-model");
        let user_model = UserModelParams::init(dims, &mut user_rng);
        let mut news_rng = seeder.rng("init-news-encoder");
        let mut encoder = NewsEncoderParams::init(dims, &mut news_rng);
        encoder.pooling = pooling;
        let news_table = refresh_news_table(&encoder, corpus)?;
        Ok(ServerState {
            dims: *dims,
            encoder,
            user_model,
            news_table,
            user_moments: AdamState::zeros(dims.user_param_len()),
            news_moments: AdamState::zeros(dims.encoder_param_len()),
            round: 0,
        })
    }
}

/// A client: its private store plus the per-round caches the server sends.
pub struct ClientState {
    pub store: ClientStore,
    pub party: PartyId,
    cached_user_model: Option<UserModelParams>,
    cached_reprs: BTreeMap<ItemId, Vec<f64>>,
}

impl ClientState {
    pub fn new(store: ClientStore, party: PartyId) -> Self {
        ClientState {
            store,
            party,
            cached_user_model: None,
            cached_reprs: BTreeMap::new(),
        }
    }
}

/// Weighted sums received by the server, before normalization.
#[derive(Debug, Clone)]
pub struct AggregatedUpdate {
    pub user_grad_sum: Vec<f64>,
    pub repr_grad_sum: BTreeMap<ItemId, Vec<f64>>,
    pub weight_sum: f64,
    pub loss_sum: f64,
}

impl AggregatedUpdate {
    pub fn zeros(user_len: usize) -> Self {
        AggregatedUpdate {
            user_grad_sum: vec![0.0; user_len],
            repr_grad_sum: BTreeMap::new(),
            weight_sum: 0.0,
            loss_sum: 0.0,
        }
    }

    pub fn add_weighted<'a>(
        &mut self,
        user_grad: &[f64],
        repr_grads: impl Iterator<Item = (ItemId, &'a [f64])>,
        weighted_loss: f64,
        weight: f64,
        repr_dim: usize,
    ) {
        axpy(&mut self.user_grad_sum, 1.0, user_grad);
        for (id, g) in repr_grads {
            let slot = self
                .repr_grad_sum
                .entry(id)
                .or_insert_with(|| vec![0.0; repr_dim]);
            axpy(slot, 1.0, g);
        }
        self.loss_sum += weighted_loss;
        self.weight_sum += weight;
    }

    /// Divide by the total sample weight, exactly once. `None` when no
    /// client contributed weight.
    pub fn normalized(&self) -> Option<(Vec<f64>, BTreeMap<ItemId, Vec<f64>>, f64)> {
        if self.weight_sum <= 0.0 {
            return None;
        }
        let inv = 1.0 / self.weight_sum;
        let user = self.user_grad_sum.iter().map(|x| x * inv).collect();
        let reprs = self
            .repr_grad_sum
            .iter()
            .map(|(id, g)| (*id, g.iter().map(|x| x * inv).collect()))
            .collect();
        Some((user, reprs, self.loss_sum * inv))
    }
}

/// Uniform sample of `group_size` client indices without replacement,
/// returned in ascending order.
pub fn sample_client_group(
    population: usize,
    group_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>, ExperimentError> {
    if group_size > population {
        return Err(ExperimentError::Round {
            round: 0,
            msg: format!("group size {group_size} exceeds population {population}"),
        });
    }
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, population, group_size).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Plaintext union of the clients' local item sets.
pub fn union_of<'a>(stores: impl Iterator<Item = &'a ClientStore>) -> BTreeSet<ItemId> {
    let mut out = BTreeSet::new();
    for s in stores {
        out.extend(s.news_set.iter().copied());
    }
    out
}

/// Full-batch local gradients, pre-multiplied by the sample count, plus the
/// weighted loss. Zero samples upload zeros with weight zero.
pub fn local_train(
    store: &ClientStore,
    user_model: &UserModelParams,
    reprs: &BTreeMap<ItemId, Vec<f64>>,
    dropout: f64,
    rng: &mut impl Rng,
) -> Result<(LocalGradients, f64), ModelError> {
    if store.samples.is_empty() {
        return Ok((LocalGradients::zeros(&user_model.dims), 0.0));
    }
    let (mut grads, mean_loss) = if dropout > 0.0 {
        backward_dropout(&store.samples, user_model, reprs, dropout, rng)?
    } else {
        backward_with_loss(&store.samples, user_model, reprs)?
    };
    let w = store.samples.len() as f64;
    grads.scale(w);
    Ok((grads, mean_loss * w))
}

/// Re-infer the representation table for the whole corpus.
pub fn refresh_news_table(
    encoder: &NewsEncoderParams,
    corpus: &Corpus,
) -> Result<Vec<Vec<f64>>, ModelError> {
    corpus
        .contents()
        .iter()
        .map(|c| encode_news(encoder, c).map(|r| r.vec))
        .collect()
}

/// Per-client uplink/downlink byte counts for one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ByteSplit {
    pub up: u64,
    pub down: u64,
}

impl ByteSplit {
    pub fn total(&self) -> u64 {
        self.up + self.down
    }
}

/// Outcome of one round.
#[derive(Debug, Clone)]
pub struct RoundReport {
    pub round: u64,
    pub group: Vec<UserId>,
    pub union_size: usize,
    pub weight_sum: f64,
    pub mean_loss: Option<f64>,
    pub skipped: bool,
    pub skip_reason: Option<String>,
    /// Bytes moved per group member this round, split by direction.
    pub client_bytes: BTreeMap<UserId, ByteSplit>,
    pub client_train_secs: f64,
    pub server_update_secs: f64,
    pub secagg_secs: f64,
}

/// The whole simulated federation.
pub struct Simulation {
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub corpus: Corpus,
    pub bus: Bus,
    pub cfg: TrainConfig,
    seeder: Seeder,
}

impl Simulation {
    pub fn new(
        corpus: Corpus,
        stores: Vec<ClientStore>,
        dims: &ModelDims,
        pooling: Pooling,
        cfg: TrainConfig,
        bus: Bus,
        seed: u64,
    ) -> Result<Self, ExperimentError> {
        cfg.opt.validate()?;
        cfg.secagg.validate()?;
        let seeder = Seeder::new(seed);
        let server = ServerState::init(dims, pooling, &corpus, &seeder)?;
        let mut bus = bus;
        bus.register(SERVER);
        let clients: Vec<ClientState> = stores
            .into_iter()
            .enumerate()
            .map(|(i, store)| {
                let party = PartyId(i as u32 + 1);
                bus.register(party);
                ClientState::new(store, party)
            })
            .collect();
        Ok(Simulation {
            server,
            clients,
            corpus,
            bus,
            cfg,
            seeder,
        })
    }

    pub fn seeder(&self) -> Seeder {
        self.seeder
    }

    /// Execute the four round steps. Union failure or zero aggregate weight
    /// skips the update but still advances the round counter.
    pub fn run_round(&mut self) -> Result<RoundReport, ExperimentError> {
        let round = self.server.round + 1;
        self.bus.begin_round(round);
        let effective_group = self.cfg.opt.group_size.min(self.clients.len());
        let mut group_rng = self.seeder.rng_at("group-sample", round);
        let group = sample_client_group(self.clients.len(), effective_group, &mut group_rng)?;
        let group_users: Vec<UserId> = group.iter().map(|&i| self.clients[i].store.user).collect();

        let mut report = RoundReport {
            round,
            group: group_users,
            union_size: 0,
            weight_sum: 0.0,
            mean_loss: None,
            skipped: false,
            skip_reason: None,
            client_bytes: BTreeMap::new(),
            client_train_secs: 0.0,
            server_update_secs: 0.0,
            secagg_secs: 0.0,
        };

        let outcome = match self.cfg.baseline {
            BaselineMode::Efficient => self.efficient_round(round, &group, &mut report),
            BaselineMode::WholeModel => self.whole_model_round(round, &group, &mut report),
        };
        match outcome {
            Ok(()) => {}
            Err(RoundAbort::Skip(reason)) => {
                report.skipped = true;
                report.skip_reason = Some(reason);
            }
            Err(RoundAbort::Fatal(e)) => return Err(e),
        }

        self.server.round = round;
        for &i in &group {
            let c = &self.clients[i];
            report.client_bytes.insert(
                c.store.user,
                ByteSplit {
                    up: self
                        .bus
                        .ledger
                        .party_round_dir_bytes(round, c.party, crate::netsim::Direction::Uplink),
                    down: self.bus.ledger.party_round_dir_bytes(
                        round,
                        c.party,
                        crate::netsim::Direction::Downlink,
                    ),
                },
            );
        }
        Ok(report)
    }

    fn efficient_round(
        &mut self,
        round: u64,
        group: &[usize],
        report: &mut RoundReport,
    ) -> Result<(), RoundAbort> {
        let d = self.server.dims.repr_dim;
        let user_len = self.server.dims.user_param_len();

        // Step 1a: the group computes its union news set.
        let secagg_t0 = Instant::now();
        let union: Vec<ItemId> = if self.cfg.secure_aggregation {
            let members: Vec<PartyId> = group.iter().map(|&i| self.clients[i].party).collect();
            let inputs: BTreeMap<PartyId, Vec<u64>> = group
                .iter()
                .map(|&i| {
                    let c = &self.clients[i];
                    let mut rng = self
                        .seeder
                        .rng_at(&format!("union-residues/{round}"), c.party.0 as u64);
                    (
                        c.party,
                        encode_union(&c.store.news_set, self.corpus.len(), &mut rng),
                    )
                })
                .collect();
            let cfg = self.session_cfg(members.len());
            let out = run_session(
                &mut self.bus,
                PhaseGroup::Union,
                &members,
                &inputs,
                self.corpus.len(),
                &cfg,
                round * 2,
                &self.seeder,
            )
            .map_err(|e| RoundAbort::Skip(format!("union aggregation failed: {e}")))?;
            decode_union(&out.sum).into_iter().collect()
        } else {
            self.bus.set_phase(Phase::UnionPlain);
            for &i in group {
                let c = &self.clients[i];
                let items: Vec<ItemId> = c.store.news_set.iter().copied().collect();
                self.bus
                    .send(c.party, SERVER, &Message::UnionUp(items))
                    .map_err(fatal)?;
            }
            let mut union = BTreeSet::new();
            for (_, msg) in self.bus.drain(SERVER) {
                if let Message::UnionUp(items) = msg {
                    union.extend(items);
                }
            }
            union.into_iter().collect()
        };
        report.secagg_secs += secagg_t0.elapsed().as_secs_f64();
        if union.is_empty() {
            return Err(RoundAbort::Skip("empty union set".into()));
        }
        report.union_size = union.len();

        // Step 1b: distribute the user model and the union representations.
        self.bus.set_phase(Phase::Distribute);
        let user_flat = self.server.user_model.flatten();
        let reprs_payload: Vec<(ItemId, Vec<f64>)> = union
            .iter()
            .map(|&id| (id, self.server.news_table[id.index()].clone()))
            .collect();
        for &i in group {
            let party = self.clients[i].party;
            self.bus
                .send(SERVER, party, &Message::UserModelDown(user_flat.clone()))
                .map_err(fatal)?;
            self.bus
                .send(SERVER, party, &Message::ReprsDown(reprs_payload.clone()))
                .map_err(fatal)?;
        }
        for &i in group {
            let c = &mut self.clients[i];
            for (_, msg) in self.bus.drain(c.party) {
                match msg {
                    Message::UserModelDown(flat) => {
                        let m = UserModelParams::from_flat(&self.server.dims, &flat)
                            .map_err(|e| fatal(e))?;
                        c.cached_user_model = Some(m);
                    }
                    Message::ReprsDown(items) => {
                        c.cached_reprs = items.into_iter().collect();
                    }
                    _ => {}
                }
            }
        }

        // Step 2: local training.
        let train_t0 = Instant::now();
        let mut uploads: BTreeMap<PartyId, (LocalGradients, f64)> = BTreeMap::new();
        for &i in group {
            let c = &self.clients[i];
            let (Some(model), reprs) = (&c.cached_user_model, &c.cached_reprs) else {
                continue; // never received this round's state
            };
            let mut drop_rng = self
                .seeder
                .rng_at(&format!("dropout/{round}"), c.party.0 as u64);
            let (grads, wloss) =
                local_train(&c.store, model, reprs, self.cfg.dropout, &mut drop_rng)
                    .map_err(|e| fatal(e))?;
            uploads.insert(c.party, (grads, wloss));
        }
        report.client_train_secs += train_t0.elapsed().as_secs_f64();

        // Step 3: weighted aggregation.
        let mut agg = AggregatedUpdate::zeros(user_len);
        if self.cfg.secure_aggregation {
            let t0 = Instant::now();
            let members: Vec<PartyId> = group.iter().map(|&i| self.clients[i].party).collect();
            let vec_len = union.len() * d + user_len + 2;
            let inputs: BTreeMap<PartyId, Vec<u64>> = uploads
                .iter()
                .map(|(&party, (grads, wloss))| {
                    let flat = flatten_upload(&union, d, &user_flat.len(), grads, *wloss);
                    quantize(&flat, self.cfg.secagg.frac_bits)
                        .map(|q| (party, q))
                        .map_err(RoundAbort::from)
                })
                .collect::<Result<_, _>>()?;
            let cfg = self.session_cfg(members.len());
            let out = run_session(
                &mut self.bus,
                PhaseGroup::Upload,
                &members,
                &inputs,
                vec_len,
                &cfg,
                round * 2 + 1,
                &self.seeder,
            )
            .map_err(|e| RoundAbort::Skip(format!("gradient aggregation failed: {e}")))?;
            report.secagg_secs += t0.elapsed().as_secs_f64();
            let sums = dequantize(&out.sum, self.cfg.secagg.frac_bits);
            let (reprs, user, loss, weight) = split_upload(&sums, &union, d, user_len);
            agg.user_grad_sum = user;
            agg.repr_grad_sum = reprs;
            agg.loss_sum = loss;
            agg.weight_sum = weight;
        } else {
            self.bus.set_phase(Phase::UploadPlain);
            for (&party, (grads, wloss)) in &uploads {
                let msg = Message::GradientUp {
                    user_grad: grads.user_grad.clone(),
                    repr_grads: grads
                        .repr_grads
                        .iter()
                        .map(|(id, g)| (*id, g.clone()))
                        .collect(),
                    weighted_loss: *wloss,
                    weight: grads.sample_count as f64,
                };
                self.bus.send(party, SERVER, &msg).map_err(fatal)?;
            }
            for (_, msg) in self.bus.drain(SERVER) {
                if let Message::GradientUp {
                    user_grad,
                    repr_grads,
                    weighted_loss,
                    weight,
                } = msg
                {
                    agg.add_weighted(
                        &user_grad,
                        repr_grads.iter().map(|(id, g)| (*id, g.as_slice())),
                        weighted_loss,
                        weight,
                        d,
                    );
                }
            }
        }

        // Step 4: global updates.
        let t0 = Instant::now();
        let Some((user_gbar, repr_gbar, mean_loss)) = agg.normalized() else {
            return Err(RoundAbort::Skip("zero aggregate weight".into()));
        };
        report.weight_sum = agg.weight_sum;
        report.mean_loss = Some(mean_loss);
        fedadam_step(
            &mut self.server.user_model,
            &mut self.server.user_moments,
            &user_gbar,
            &self.cfg.opt,
        )
        .map_err(|e| RoundAbort::Skip(format!("user update rejected: {e}")))?;
        let union_contents: Vec<_> = union
            .iter()
            .map(|&id| self.corpus.get(id).clone())
            .collect();
        let news_grad =
            news_encoder_backward(&self.server.encoder, &union_contents, &repr_gbar)
                .map_err(|e| fatal(e))?;
        adam_news_step(
            &mut self.server.encoder,
            &self.server.dims,
            &mut self.server.news_moments,
            &news_grad,
            &self.cfg.opt,
        )
        .map_err(|e| RoundAbort::Skip(format!("news update rejected: {e}")))?;
        self.server.news_table =
            refresh_news_table(&self.server.encoder, &self.corpus).map_err(|e| fatal(e))?;
        report.server_update_secs += t0.elapsed().as_secs_f64();
        Ok(())
    }

    fn whole_model_round(
        &mut self,
        round: u64,
        group: &[usize],
        report: &mut RoundReport,
    ) -> Result<(), RoundAbort> {
        let user_len = self.server.dims.user_param_len();
        let enc_len = self.server.dims.encoder_param_len();

        // Whole model in both directions; item content is assumed already on
        // the device, so it is not metered.
        self.bus.set_phase(Phase::Distribute);
        let user_flat = self.server.user_model.flatten();
        let enc_flat = self.server.encoder.flatten();
        for &i in group {
            let party = self.clients[i].party;
            self.bus
                .send(
                    SERVER,
                    party,
                    &Message::WholeModelDown {
                        encoder: enc_flat.clone(),
                        user: user_flat.clone(),
                    },
                )
                .map_err(fatal)?;
        }

        let train_t0 = Instant::now();
        let pooling = self.server.encoder.pooling;
        let mut uploads: BTreeMap<PartyId, (Vec<f64>, Vec<f64>, f64, f64)> = BTreeMap::new();
        for &i in group {
            let c = &mut self.clients[i];
            let mut got = None;
            for (_, msg) in self.bus.drain(c.party) {
                if let Message::WholeModelDown { encoder, user } = msg {
                    got = Some((encoder, user));
                }
            }
            let Some((enc_vec, user_vec)) = got else {
                continue;
            };
            let encoder = NewsEncoderParams::from_flat(&self.server.dims, pooling, &enc_vec)
                .map_err(|e| fatal(e))?;
            let user_model =
                UserModelParams::from_flat(&self.server.dims, &user_vec).map_err(|e| fatal(e))?;

            // The client encodes its own items locally.
            let own_contents: Vec<_> = c
                .store
                .news_set
                .iter()
                .map(|&id| self.corpus.get(id).clone())
                .collect();
            let mut reprs = BTreeMap::new();
            for content in &own_contents {
                let r = encode_news(&encoder, content).map_err(|e| fatal(e))?;
                reprs.insert(r.id, r.vec);
            }
            let mut drop_rng = self
                .seeder
                .rng_at(&format!("dropout/{round}"), c.party.0 as u64);
            let (grads, wloss) =
                local_train(&c.store, &user_model, &reprs, self.cfg.dropout, &mut drop_rng)
                    .map_err(|e| fatal(e))?;
            // Chain the weighted representation gradients through the
            // encoder to get the client's whole-model gradient.
            let enc_grad = news_encoder_backward(&encoder, &own_contents, &grads.repr_grads)
                .map_err(|e| fatal(e))?;
            uploads.insert(
                c.party,
                (enc_grad, grads.user_grad, wloss, grads.sample_count as f64),
            );
        }
        report.client_train_secs += train_t0.elapsed().as_secs_f64();

        let mut user_sum = vec![0.0; user_len];
        let mut enc_sum = vec![0.0; enc_len];
        let mut loss_sum = 0.0;
        let mut weight_sum = 0.0;
        if self.cfg.secure_aggregation {
            let t0 = Instant::now();
            let members: Vec<PartyId> = group.iter().map(|&i| self.clients[i].party).collect();
            let vec_len = enc_len + user_len + 2;
            let inputs: BTreeMap<PartyId, Vec<u64>> = uploads
                .iter()
                .map(|(&party, (enc, user, wloss, weight))| {
                    let mut flat = Vec::with_capacity(vec_len);
                    flat.extend_from_slice(enc);
                    flat.extend_from_slice(user);
                    flat.push(*wloss);
                    flat.push(*weight);
                    quantize(&flat, self.cfg.secagg.frac_bits)
                        .map(|q| (party, q))
                        .map_err(RoundAbort::from)
                })
                .collect::<Result<_, _>>()?;
            let cfg = self.session_cfg(members.len());
            let out = run_session(
                &mut self.bus,
                PhaseGroup::Upload,
                &members,
                &inputs,
                vec_len,
                &cfg,
                round * 2 + 1,
                &self.seeder,
            )
            .map_err(|e| RoundAbort::Skip(format!("gradient aggregation failed: {e}")))?;
            report.secagg_secs += t0.elapsed().as_secs_f64();
            let sums = dequantize(&out.sum, self.cfg.secagg.frac_bits);
            enc_sum.copy_from_slice(&sums[..enc_len]);
            user_sum.copy_from_slice(&sums[enc_len..enc_len + user_len]);
            loss_sum = sums[enc_len + user_len];
            weight_sum = sums[enc_len + user_len + 1];
        } else {
            self.bus.set_phase(Phase::UploadPlain);
            for (&party, (enc, user, wloss, weight)) in &uploads {
                self.bus
                    .send(
                        party,
                        SERVER,
                        &Message::WholeGradUp {
                            encoder_grad: enc.clone(),
                            user_grad: user.clone(),
                            weighted_loss: *wloss,
                            weight: *weight,
                        },
                    )
                    .map_err(fatal)?;
            }
            for (_, msg) in self.bus.drain(SERVER) {
                if let Message::WholeGradUp {
                    encoder_grad,
                    user_grad,
                    weighted_loss,
                    weight,
                } = msg
                {
                    axpy(&mut enc_sum, 1.0, &encoder_grad);
                    axpy(&mut user_sum, 1.0, &user_grad);
                    loss_sum += weighted_loss;
                    weight_sum += weight;
                }
            }
        }

        let t0 = Instant::now();
        if weight_sum <= 0.0 {
            return Err(RoundAbort::Skip("zero aggregate weight".into()));
        }
        report.weight_sum = weight_sum;
        report.mean_loss = Some(loss_sum / weight_sum);
        let inv = 1.0 / weight_sum;
        let user_gbar: Vec<f64> = user_sum.iter().map(|x| x * inv).collect();
        let enc_gbar: Vec<f64> = enc_sum.iter().map(|x| x * inv).collect();
        fedadam_step(
            &mut self.server.user_model,
            &mut self.server.user_moments,
            &user_gbar,
            &self.cfg.opt,
        )
        .map_err(|e| RoundAbort::Skip(format!("user update rejected: {e}")))?;
        adam_news_step(
            &mut self.server.encoder,
            &self.server.dims,
            &mut self.server.news_moments,
            &enc_gbar,
            &self.cfg.opt,
        )
        .map_err(|e| RoundAbort::Skip(format!("news update rejected: {e}")))?;
        self.server.news_table =
            refresh_news_table(&self.server.encoder, &self.corpus).map_err(|e| fatal(e))?;
        report.server_update_secs += t0.elapsed().as_secs_f64();
        report.union_size = 0;
        Ok(())
    }

    fn session_cfg(&self, members: usize) -> SecAggConfig {
        SecAggConfig {
            participants: members,
            threshold: self.cfg.secagg.threshold.min(members.max(1)),
            ..self.cfg.secagg
        }
    }
}

enum RoundAbort {
    Skip(String),
    Fatal(ExperimentError),
}

impl From<SecAggError> for RoundAbort {
    fn from(e: SecAggError) -> Self {
        RoundAbort::Skip(format!("quantization failed: {e}"))
    }
}

fn fatal<E: Into<ExperimentError>>(e: E) -> RoundAbort {
    RoundAbort::Fatal(e.into())
}

/// Secure upload layout: weighted representation gradients for the union set
/// in ascending item order, the weighted user-model gradient in its flat
/// layout, the weighted loss, and the sample weight.
fn flatten_upload(
    union: &[ItemId],
    d: usize,
    user_len: &usize,
    grads: &LocalGradients,
    weighted_loss: f64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(union.len() * d + user_len + 2);
    let zero = vec![0.0; d];
    for id in union {
        let g = grads.repr_grads.get(id).unwrap_or(&zero);
        out.extend_from_slice(g);
    }
    out.extend_from_slice(&grads.user_grad);
    out.push(weighted_loss);
    out.push(grads.sample_count as f64);
    out
}

fn split_upload(
    sums: &[f64],
    union: &[ItemId],
    d: usize,
    user_len: usize,
) -> (BTreeMap<ItemId, Vec<f64>>, Vec<f64>, f64, f64) {
    let mut reprs = BTreeMap::new();
    for (k, &id) in union.iter().enumerate() {
        reprs.insert(id, sums[k * d..(k + 1) * d].to_vec());
    }
    let base = union.len() * d;
    let user = sums[base..base + user_len].to_vec();
    (reprs, user, sums[base + user_len], sums[base + user_len + 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TrainingSample;
    use rand::SeedableRng;

    fn store(user: u32, items: &[u32]) -> ClientStore {
        ClientStore {
            user: UserId(user),
            history: items.iter().map(|&i| ItemId(i)).collect(),
            samples: Vec::new(),
            news_set: items.iter().map(|&i| ItemId(i)).collect(),
        }
    }

    #[test]
    fn group_sampling_is_deterministic_and_unique() {
        let mut a = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        let mut b = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        let ga = sample_client_group(1000, 50, &mut a).unwrap();
        let gb = sample_client_group(1000, 50, &mut b).unwrap();
        assert_eq!(ga, gb);
        assert_eq!(ga.len(), 50);
        let set: BTreeSet<usize> = ga.iter().copied().collect();
        assert_eq!(set.len(), 50);
        assert!(sample_client_group(10, 11, &mut a).is_err());
        let whole = sample_client_group(5, 5, &mut a).unwrap();
        assert_eq!(whole, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn union_matches_set_union() {
        let s1 = store(0, &[1]);
        let s2 = store(1, &[2]);
        let one = union_of([&s1].into_iter());
        assert_eq!(one, s1.news_set);
        let both = union_of([&s1, &s2].into_iter());
        let expect: BTreeSet<ItemId> = [ItemId(1), ItemId(2)].into();
        assert_eq!(both, expect);
    }

    #[test]
    fn local_train_weights_by_sample_count() {
        let dims = ModelDims {
            vocab_size: 4,
            token_dim: 3,
            repr_dim: 4,
            heads: 2,
            attn_hidden: 3,
        };
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        let model = UserModelParams::init(&dims, &mut rng);
        let mut reprs = BTreeMap::new();
        for i in 0..4u32 {
            reprs.insert(
                ItemId(i),
                (0..4).map(|c| ((i as usize + c) as f64 * 0.31).sin() * 0.3).collect(),
            );
        }
        let sample = TrainingSample {
            history: vec![ItemId(0)],
            candidates: vec![ItemId(1), ItemId(2), ItemId(3)],
            label_index: 0,
        };
        let mut one = store(0, &[0, 1, 2, 3]);
        one.samples = vec![sample.clone()];
        let mut three = store(1, &[0, 1, 2, 3]);
        three.samples = vec![sample.clone(), sample.clone(), sample.clone()];

        let mut rng1 = rand_chacha::ChaCha20Rng::seed_from_u64(0);
        let (g1, l1) = local_train(&one, &model, &reprs, 0.0, &mut rng1).unwrap();
        let (g3, l3) = local_train(&three, &model, &reprs, 0.0, &mut rng1).unwrap();
        // |B| = 1 uploads the raw gradients.
        assert_eq!(g1.sample_count, 1);
        // Triplicating the dataset triples the upload and the weight.
        assert_eq!(g3.sample_count, 3);
        for (a, b) in g1.user_grad.iter().zip(&g3.user_grad) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
        assert!((3.0 * l1 - l3).abs() < 1e-12);

        // The weighted quotient is invariant to replication.
        let mut agg1 = AggregatedUpdate::zeros(dims.user_param_len());
        agg1.add_weighted(
            &g1.user_grad,
            g1.repr_grads.iter().map(|(id, g)| (*id, g.as_slice())),
            l1,
            g1.sample_count as f64,
            4,
        );
        let mut agg3 = AggregatedUpdate::zeros(dims.user_param_len());
        agg3.add_weighted(
            &g3.user_grad,
            g3.repr_grads.iter().map(|(id, g)| (*id, g.as_slice())),
            l3,
            g3.sample_count as f64,
            4,
        );
        let (u1, _, _) = agg1.normalized().unwrap();
        let (u3, _, _) = agg3.normalized().unwrap();
        for (a, b) in u1.iter().zip(&u3) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_store_uploads_zeros_with_zero_weight() {
        let dims = ModelDims {
            vocab_size: 4,
            token_dim: 3,
            repr_dim: 4,
            heads: 2,
            attn_hidden: 3,
        };
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(9);
        let model = UserModelParams::init(&dims, &mut rng);
        let s = store(0, &[1]);
        let (g, l) = local_train(&s, &model, &BTreeMap::new(), 0.0, &mut rng).unwrap();
        assert_eq!(g.sample_count, 0);
        assert_eq!(l, 0.0);
        assert!(g.user_grad.iter().all(|&x| x == 0.0));
        assert!(g.repr_grads.is_empty());
    }

    #[test]
    fn weighted_aggregate_matches_hand_evaluation() {
        // Two clients with |B| = 1 and 3 and gradients g1, g2: the
        // normalized aggregate is (g1 + 3 g2) / 4.
        let g1 = vec![1.0, -2.0];
        let g2 = vec![0.5, 4.0];
        let mut agg = AggregatedUpdate::zeros(2);
        agg.add_weighted(&g1, std::iter::empty(), 0.0, 1.0, 2);
        let weighted: Vec<f64> = g2.iter().map(|x| 3.0 * x).collect();
        agg.add_weighted(&weighted, std::iter::empty(), 0.0, 3.0, 2);
        let (u, _, _) = agg.normalized().unwrap();
        assert!((u[0] - (1.0 + 3.0 * 0.5) / 4.0).abs() < 1e-15);
        assert!((u[1] - (-2.0 + 3.0 * 4.0) / 4.0).abs() < 1e-15);

        // Identical gradients from all clients: the aggregate is that
        // gradient regardless of weights.
        let mut agg = AggregatedUpdate::zeros(2);
        agg.add_weighted(&[2.0, 2.0], std::iter::empty(), 0.0, 2.0, 2);
        agg.add_weighted(&[5.0, 5.0], std::iter::empty(), 0.0, 5.0, 2);
        let (u, _, _) = agg.normalized().unwrap();
        assert!((u[0] - 1.0).abs() < 1e-15);

        // Zero total weight yields no update.
        let agg = AggregatedUpdate::zeros(2);
        assert!(agg.normalized().is_none());
    }

    #[test]
    fn upload_vector_roundtrips_through_the_layout() {
        let union = vec![ItemId(2), ItemId(5), ItemId(9)];
        let d = 3;
        let mut grads = LocalGradients {
            user_grad: vec![0.1, 0.2],
            repr_grads: BTreeMap::new(),
            sample_count: 4,
        };
        grads.repr_grads.insert(ItemId(5), vec![1.0, 2.0, 3.0]);
        let flat = flatten_upload(&union, d, &2, &grads, 7.5);
        assert_eq!(flat.len(), 3 * 3 + 2 + 2);
        let (reprs, user, loss, weight) = split_upload(&flat, &union, d, 2);
        assert_eq!(reprs[&ItemId(2)], vec![0.0; 3]);
        assert_eq!(reprs[&ItemId(5)], vec![1.0, 2.0, 3.0]);
        assert_eq!(user, vec![0.1, 0.2]);
        assert_eq!(loss, 7.5);
        assert_eq!(weight, 4.0);
    }

    #[test]
    fn zero_gradients_leave_every_parameter_fixed() {
        let dims = ModelDims {
            vocab_size: 4,
            token_dim: 3,
            repr_dim: 4,
            heads: 2,
            attn_hidden: 3,
        };
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        let mut model = UserModelParams::init(&dims, &mut rng);
        let before = model.flatten();
        let mut moments = AdamState::zeros(dims.user_param_len());
        for _ in 0..5 {
            fedadam_step(
                &mut model,
                &mut moments,
                &vec![0.0; dims.user_param_len()],
                &OptimizerConfig::default(),
            )
            .unwrap();
        }
        assert_eq!(model.flatten(), before);
    }

    #[test]
    fn refreshed_table_matches_direct_encoding() {
        use crate::data::Corpus;
        use crate::model::NewsContent;
        let dims = ModelDims {
            vocab_size: 6,
            token_dim: 3,
            repr_dim: 4,
            heads: 2,
            attn_hidden: 3,
        };
        let items: Vec<NewsContent> = (0..4u32)
            .map(|i| NewsContent {
                id: ItemId(i),
                tokens: vec![i % 6, (i + 2) % 6],
            })
            .collect();
        let corpus = Corpus::new(
            items.clone(),
            (0..4).map(|i| format!("X{i}")).collect(),
            6,
        );
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(13);
        let enc = NewsEncoderParams::init(&dims, &mut rng);
        let table = refresh_news_table(&enc, &corpus).unwrap();
        for (i, content) in items.iter().enumerate() {
            assert_eq!(table[i], encode_news(&enc, content).unwrap().vec);
        }
        // Zero encoder gives an all-zero table; unchanged encoder, identical
        // table.
        let zero = NewsEncoderParams::zeros(&dims);
        for row in refresh_news_table(&zero, &corpus).unwrap() {
            assert!(row.iter().all(|&x| x == 0.0));
        }
        assert_eq!(table, refresh_news_table(&enc, &corpus).unwrap());
    }
}
