//! Personalized federated training of the anonymization model.
//!
//! A central server holds the global model. Each epoch it selects a random
//! subset of clients; those clients stay selected for every communication
//! round of that epoch. In a round, every selected client clones the global
//! model, adapts it on a small support batch (discriminators first, then
//! encoder/decoder), evaluates the adapted model's losses on a disjoint
//! query batch, and uploads the query-loss gradients. The server averages
//! the gradients and applies one descent step per network. Clients whose
//! losses turn non-finite are skipped and the divisor shrinks accordingly.
//!
//! A FedAvg baseline is included for comparison: clients retrain a copy of
//! the global model for several local passes and upload parameters instead
//! of gradients, which the server averages elementwise.
//!
//! Nothing but gradient or parameter payloads ever crosses the
//! client-to-server boundary; an optional audit hook observes every uplink
//! message.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float; // f32/f64 math methods under no_std
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::anonymizer::{
    Batch, BlinderModel, LossBreakdown, ModelError, ModelGrads, ModelParams,
};
use crate::data::LabeledSegment;
use crate::params::{GradientUpdate, ParamError};
use crate::rng::{normal_tensor, Seeder};
use crate::tensor::{Element, Tensor};

pub type ClientId = u32;

/// Perturbation scale for the finite-difference Hessian-vector products of
/// the second-order meta gradient.
pub const HVP_STEP: f64 = 1e-4;

/// Errors from the federated protocol.
#[derive(Debug, Clone, PartialEq)]
pub enum FedError {
    EmptyClientSet,
    /// Client has too few segments for a support + query draw.
    InsufficientData {
        client: ClientId,
        needed: usize,
        available: usize,
    },
    /// A client's losses or gradients turned NaN/infinite.
    NonFiniteLoss { client: ClientId },
    /// An update arrived from a client that was not selected this epoch.
    UnexpectedClient { client: ClientId },
    Misaligned(ParamError),
    Model(ModelError),
    Config(String),
}

impl fmt::Display for FedError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FedError::EmptyClientSet => write!(f, "no clients available"),
            FedError::InsufficientData {
                client,
                needed,
                available,
            } => write!(
                f,
                "client {client}: needs {needed} segments, has {available}"
            ),
            FedError::NonFiniteLoss { client } => {
                write!(f, "client {client}: non-finite loss")
            }
            FedError::UnexpectedClient { client } => {
                write!(f, "update from unselected client {client}")
            }
            FedError::Misaligned(e) => write!(f, "{e}"),
            FedError::Model(e) => write!(f, "{e}"),
            FedError::Config(msg) => write!(f, "federated config: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for FedError {}

impl From<ModelError> for FedError {
    fn from(e: ModelError) -> Self {
        FedError::Model(e)
    }
}

impl From<ParamError> for FedError {
    fn from(e: ParamError) -> Self {
        FedError::Misaligned(e)
    }
}

/// Gradient aggregation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Aggregation {
    /// Two-step meta optimization on every client, federated SGD on the
    /// query-loss gradients.
    MetaFedSgd,
    /// Clients retrain the model locally and upload parameters for
    /// elementwise averaging.
    FedAvg,
}

/// Federated training configuration.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FedConfig {
    /// Fraction of clients selected each epoch.
    pub selection_fraction: f64,
    /// Server-side (meta) learning rate.
    pub meta_lr: f64,
    /// Client-side adaptation learning rate.
    pub local_lr: f64,
    pub support_size: usize,
    pub query_size: usize,
    /// Communication rounds per epoch; `None` derives `K / (s + q)` from the
    /// smallest selected client.
    pub rounds_per_epoch: Option<usize>,
    pub epochs: usize,
    /// Support-set adaptation steps per round.
    pub local_steps_per_round: usize,
    pub aggregation: Aggregation,
    /// Local passes over the data per round in FedAvg mode.
    pub fedavg_local_rounds: usize,
    /// Mix shadow samples into discriminator adaptation batches.
    pub shadow_samples: bool,
    /// Correct the meta gradient with a Hessian-vector product instead of
    /// the first-order approximation.
    pub second_order: bool,
    pub seed: u64,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            selection_fraction: 0.4,
            meta_lr: 0.02,
            local_lr: 0.02,
            support_size: 1,
            query_size: 15,
            rounds_per_epoch: None,
            epochs: 5,
            local_steps_per_round: 1,
            aggregation: Aggregation::MetaFedSgd,
            fedavg_local_rounds: 5,
            shadow_samples: true,
            second_order: false,
            seed: 0,
        }
    }
}

impl FedConfig {
    pub fn batch_size(&self) -> usize {
        self.support_size + self.query_size
    }

    /// Rounds per epoch: the explicit setting, or `K / b` for sample count `K`.
    pub fn rounds_for(&self, min_client_samples: usize) -> usize {
        self.rounds_per_epoch
            .unwrap_or_else(|| (min_client_samples / self.batch_size()).max(1))
    }

    pub fn validate(&self) -> Result<(), FedError> {
        if !(self.selection_fraction > 0.0 && self.selection_fraction <= 1.0) {
            return Err(FedError::Config("selection_fraction must be in (0, 1]".into()));
        }
        if self.support_size == 0 || self.query_size == 0 {
            return Err(FedError::Config("support and query sizes must be positive".into()));
        }
        if self.local_steps_per_round == 0 {
            return Err(FedError::Config("local_steps_per_round must be positive".into()));
        }
        if self.second_order && self.local_steps_per_round != 1 {
            return Err(FedError::Config(
                "second-order meta gradients require a single local step".into(),
            ));
        }
        Ok(())
    }
}

/// One client's local data plus its epoch sampling state. Support and query
/// sets are consecutive slices of a per-epoch shuffle, so draws within an
/// epoch are disjoint and cycle through the whole dataset.
#[derive(Debug, Clone)]
pub struct ClientDataset {
    pub client_id: ClientId,
    pub segments: Vec<LabeledSegment>,
    order: Vec<usize>,
    cursor: usize,
    rng: Option<ChaCha8Rng>,
}

impl ClientDataset {
    pub fn new(client_id: ClientId, segments: Vec<LabeledSegment>) -> Self {
        let order = (0..segments.len()).collect();
        ClientDataset {
            client_id,
            segments,
            order,
            cursor: 0,
            rng: None,
        }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Starts a new epoch: reshuffles the data order with the given stream.
    pub fn begin_epoch(&mut self, mut rng: ChaCha8Rng) {
        self.order.shuffle(&mut rng);
        self.cursor = 0;
        self.rng = Some(rng);
    }

    /// Draws `s + q` consecutive samples from the shuffle (reshuffling when
    /// exhausted) and splits them into disjoint support and query sets.
    pub fn sample_support_query(
        &mut self,
        s: usize,
        q: usize,
    ) -> Result<(Vec<&LabeledSegment>, Vec<&LabeledSegment>), FedError> {
        let need = s + q;
        if self.segments.len() < need {
            return Err(FedError::InsufficientData {
                client: self.client_id,
                needed: need,
                available: self.segments.len(),
            });
        }
        if self.cursor + need > self.order.len() {
            let rng = self.rng.as_mut().expect("begin_epoch before sampling");
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let picks = &self.order[self.cursor..self.cursor + need];
        self.cursor += need;
        let support = picks[..s].iter().map(|&i| &self.segments[i]).collect();
        let query = picks[s..].iter().map(|&i| &self.segments[i]).collect();
        Ok((support, query))
    }
}

/// Payload crossing the client-to-server boundary. By construction nothing
/// else — no segments, labels, or batch contents — can be transmitted.
#[derive(Debug, Clone)]
pub enum UplinkPayload {
    Gradients(ModelGrads<f32>),
    Parameters(ModelParams<f32>),
}

impl UplinkPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            UplinkPayload::Gradients(_) => "gradients",
            UplinkPayload::Parameters(_) => "parameters",
        }
    }

    /// Serialized size in bytes (the wire cost of the message).
    pub fn byte_len(&self) -> usize {
        match self {
            UplinkPayload::Gradients(g) => {
                g.encoder.to_bytes().len()
                    + g.decoder.to_bytes().len()
                    + g.discriminators.iter().map(|d| d.to_bytes().len()).sum::<usize>()
            }
            UplinkPayload::Parameters(p) => {
                p.encoder.to_bytes().len()
                    + p.decoder.to_bytes().len()
                    + p.discriminators.iter().map(|d| d.to_bytes().len()).sum::<usize>()
            }
        }
    }
}

/// One client-to-server message.
#[derive(Debug, Clone)]
pub struct UplinkMessage {
    pub client: ClientId,
    pub epoch: usize,
    pub round: usize,
    pub payload: UplinkPayload,
}

/// Per-client, per-round log entry.
#[derive(Debug, Clone)]
pub struct ClientRoundStats {
    pub client: ClientId,
    /// Total objective on the support set during adaptation.
    pub support_loss: f64,
    /// Total objective on the query set after adaptation (the meta loss).
    pub meta_loss: f64,
    /// Discriminator cross-entropy on the query set after adaptation, per
    /// attribute.
    pub disc_query: Vec<f64>,
    /// Euclidean norm of the uploaded gradient (zero for FedAvg rounds).
    pub grad_norm: f64,
    pub skipped: bool,
}

/// Append-only record of one communication round.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub epoch: usize,
    pub round: usize,
    pub selected: Vec<ClientId>,
    pub clients: Vec<ClientRoundStats>,
    /// Norm of the aggregated gradient applied to the global model.
    pub aggregate_norm: f64,
}

/// Outcome of a full training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: BlinderModel<f32>,
    pub rounds: Vec<RoundRecord>,
    /// Global parameters at the end of every epoch.
    pub epoch_snapshots: Vec<ModelParams<f32>>,
}

/// Selects `max(1, floor(fraction * N))` distinct clients for an epoch.
pub fn select_clients<R: Rng + ?Sized>(
    all_clients: &[ClientId],
    fraction: f64,
    rng: &mut R,
) -> Result<Vec<ClientId>, FedError> {
    if all_clients.is_empty() {
        return Err(FedError::EmptyClientSet);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(FedError::Config("selection fraction must be in (0, 1]".into()));
    }
    let m = (((all_clients.len() as f64) * fraction) as usize).max(1);
    let mut ids = all_clients.to_vec();
    ids.shuffle(rng);
    ids.truncate(m);
    ids.sort_unstable();
    Ok(ids)
}

/// Client-side meta-step configuration.
#[derive(Debug, Clone, Copy)]
pub struct MetaStep {
    pub local_lr: f64,
    pub local_steps: usize,
    pub shadow: bool,
    pub second_order: bool,
}

/// Result of one client meta step: gradients w.r.t. the global parameters
/// plus the losses observed along the way.
#[derive(Debug, Clone)]
pub struct MetaStepResult<T = f32> {
    pub grads: ModelGrads<T>,
    pub support_loss: LossBreakdown,
    pub query_loss: LossBreakdown,
    /// Query-set discriminator cross-entropy per attribute.
    pub disc_query: Vec<f64>,
}

/// The two-step client optimization: adapt a clone of the global model on
/// the support set (discriminators first, then encoder/decoder), then return
/// the query-set loss gradients.
///
/// With `second_order` off, the query gradients at the adapted parameters
/// stand in for the gradients w.r.t. the originals (first-order rule). With
/// it on, each network's gradient is corrected by `(I - lr * H) g` where the
/// Hessian-vector product of its own adaptation loss is taken by central
/// differences; cross-dependencies between the discriminator and generator
/// adaptations are not tracked.
pub fn client_meta_step<T: Element>(
    global: &BlinderModel<T>,
    support: &Batch<T>,
    query: &Batch<T>,
    step: &MetaStep,
    adapt_rng: &mut ChaCha8Rng,
    query_rng: &mut ChaCha8Rng,
) -> Result<MetaStepResult<T>, ModelError> {
    let weights = global.config().weights;
    let latent = global.latent_dim();
    let mut local = global.clone();

    // Support-set adaptation. The last step's batches are retained for the
    // optional Hessian correction.
    let mut support_loss = LossBreakdown::default();
    let mut last_disc_batch = None;
    let mut last_eps = None;
    for _ in 0..step.local_steps {
        let (z_train, labels) = local.disc_training_batch(support, step.shadow, adapt_rng)?;
        let (_, disc_g) = local.disc_grads(&z_train, &labels)?;
        if step.local_lr != 0.0 {
            local.sgd_discriminators(&disc_g, step.local_lr)?;
        }
        let eps = normal_tensor(&[support.len(), latent], adapt_rng);
        let (losses, enc_g, dec_g) = local.vae_grads(support, &eps, &weights)?;
        if step.local_lr != 0.0 {
            local.sgd_encoder_decoder(&enc_g, &dec_g, step.local_lr)?;
        }
        support_loss = losses;
        last_disc_batch = Some((z_train, labels));
        last_eps = Some(eps);
    }

    // Query-set meta losses and gradients at the adapted parameters.
    let eps_q = normal_tensor(&[query.len(), latent], query_rng);
    let (query_loss, enc_q, dec_q) = local.vae_grads(query, &eps_q, &weights)?;
    let (mu_q, lv_q) = local.encode(&query.x)?;
    let z_q = crate::anonymizer::reparameterize(&mu_q, &lv_q, &eps_q);
    let (disc_query, disc_q) = local.disc_grads(&z_q, &query.privates)?;

    let mut grads = ModelGrads {
        encoder: enc_q,
        decoder: dec_q,
        discriminators: disc_q,
    };

    if step.second_order && step.local_lr != 0.0 {
        // g_meta = (I - lr * H_support) g_query, per network group, with the
        // Hessian-vector products taken at the pre-adaptation parameters.
        let (z_train, labels) = last_disc_batch.expect("at least one local step");
        let eps_s = last_eps.expect("at least one local step");
        let lr = T::from_f64(-step.local_lr);

        let (enc_hv, dec_hv) =
            generator_hvp(global, support, &eps_s, &weights, &grads.encoder, &grads.decoder)?;
        grads.encoder.add_scaled(&enc_hv, lr)?;
        grads.decoder.add_scaled(&dec_hv, lr)?;

        let disc_hv = discriminator_hvp(global, &z_train, &labels, &grads.discriminators)?;
        for (g, hv) in grads.discriminators.iter_mut().zip(&disc_hv) {
            g.add_scaled(hv, lr)?;
        }
    }

    grads.ensure_finite()?;
    Ok(MetaStepResult {
        grads,
        support_loss,
        query_loss,
        disc_query,
    })
}

/// Hessian-vector product of the generator adaptation loss w.r.t. the joint
/// (encoder, decoder) parameters, by central differences of the analytic
/// gradient along `v`.
fn generator_hvp<T: Element>(
    global: &BlinderModel<T>,
    support: &Batch<T>,
    eps: &Tensor<T>,
    weights: &crate::anonymizer::LossWeights,
    v_enc: &GradientUpdate<T>,
    v_dec: &GradientUpdate<T>,
) -> Result<(GradientUpdate<T>, GradientUpdate<T>), ModelError> {
    let norm = (v_enc.norm_l2().powi(2) + v_dec.norm_l2().powi(2)).sqrt();
    if norm == 0.0 {
        return Ok((v_enc.clone(), v_dec.clone()));
    }
    let step = T::from_f64(HVP_STEP / norm.max(1e-12));
    let grads_at = |sign: T| -> Result<(GradientUpdate<T>, GradientUpdate<T>), ModelError> {
        let mut shifted = global.clone();
        let mut params = shifted.params();
        for (p, v) in params.encoder.entries_mut().iter_mut().zip(&v_enc.grads) {
            p.tensor
                .add_scaled(&v.tensor, sign * step)
                .map_err(|_| ParamError::Misaligned(v.name.clone()))?;
        }
        for (p, v) in params.decoder.entries_mut().iter_mut().zip(&v_dec.grads) {
            p.tensor
                .add_scaled(&v.tensor, sign * step)
                .map_err(|_| ParamError::Misaligned(v.name.clone()))?;
        }
        shifted.set_params(&params)?;
        let (_, e, d) = shifted.vae_grads(support, eps, weights)?;
        Ok((e, d))
    };
    let (e_plus, d_plus) = grads_at(T::one())?;
    let (e_minus, d_minus) = grads_at(-T::one())?;
    let scale = T::one() / (T::from_f64(2.0) * step);
    let mut enc_hv = e_plus;
    enc_hv.add_scaled(&e_minus, -T::one())?;
    enc_hv.scale(scale);
    let mut dec_hv = d_plus;
    dec_hv.add_scaled(&d_minus, -T::one())?;
    dec_hv.scale(scale);
    Ok((enc_hv, dec_hv))
}

/// Hessian-vector products of each discriminator's adaptation loss, by
/// central differences along the respective gradient direction.
fn discriminator_hvp<T: Element>(
    global: &BlinderModel<T>,
    z_train: &Tensor<T>,
    labels: &[Vec<usize>],
    v: &[GradientUpdate<T>],
) -> Result<Vec<GradientUpdate<T>>, ModelError> {
    let mut out = Vec::with_capacity(v.len());
    for (j, vj) in v.iter().enumerate() {
        let norm = vj.norm_l2();
        if norm == 0.0 {
            out.push(vj.clone());
            continue;
        }
        let step = T::from_f64(HVP_STEP / norm.max(1e-12));
        let grads_at = |sign: T| -> Result<GradientUpdate<T>, ModelError> {
            let mut shifted = global.clone();
            let mut params = shifted.params();
            for (p, g) in params.discriminators[j]
                .entries_mut()
                .iter_mut()
                .zip(&vj.grads)
            {
                p.tensor
                    .add_scaled(&g.tensor, sign * step)
                    .map_err(|_| ParamError::Misaligned(g.name.clone()))?;
            }
            shifted.set_params(&params)?;
            let (_, mut grads) = shifted.disc_grads(z_train, labels)?;
            Ok(grads.swap_remove(j))
        };
        let plus = grads_at(T::one())?;
        let minus = grads_at(-T::one())?;
        let mut hv = plus;
        hv.add_scaled(&minus, -T::one())?;
        hv.scale(T::one() / (T::from_f64(2.0) * step));
        out.push(hv);
    }
    Ok(out)
}

/// Server-side aggregation: sorts updates by client id, pairwise-sums them
/// in f64, and applies one descent step of `meta_lr / contributors` per
/// network. The fixed order plus wide accumulation makes the result
/// bit-identical under any arrival permutation. Returns the norm of the
/// applied mean gradient.
pub fn aggregate_meta(
    model: &mut BlinderModel<f32>,
    updates: &mut [(ClientId, ModelGrads<f32>)],
    meta_lr: f64,
    selected: &[ClientId],
) -> Result<f64, FedError> {
    if updates.is_empty() {
        return Ok(0.0);
    }
    for (client, _) in updates.iter() {
        if !selected.contains(client) {
            return Err(FedError::UnexpectedClient { client: *client });
        }
    }
    updates.sort_by_key(|(client, _)| *client);
    let grads: Vec<&ModelGrads<f32>> = updates.iter().map(|(_, g)| g).collect();
    let mut sum: ModelGrads<f64> = pairwise_sum(&grads)?;
    sum.scale(1.0 / updates.len() as f64);
    let mean = sum.cast::<f32>();
    let norm = mean.norm_l2();
    model.apply_update(&mean, meta_lr)?;
    Ok(norm)
}

/// Sums gradient bundles pairwise in f64.
fn pairwise_sum(grads: &[&ModelGrads<f32>]) -> Result<ModelGrads<f64>, FedError> {
    match grads.len() {
        0 => Err(FedError::Config("empty gradient set".into())),
        1 => Ok(grads[0].cast()),
        n => {
            let (left, right) = grads.split_at(n / 2);
            let mut a = pairwise_sum(left)?;
            let b = pairwise_sum(right)?;
            a.add_scaled(&b, 1.0)?;
            Ok(a)
        }
    }
}

/// Elementwise mean of parameter snapshots (FedAvg), accumulated in f64 in
/// sorted client order.
fn mean_params(
    mut snapshots: Vec<(ClientId, ModelParams<f32>)>,
) -> Result<ModelParams<f32>, FedError> {
    if snapshots.is_empty() {
        return Err(FedError::Config("no parameter snapshots".into()));
    }
    snapshots.sort_by_key(|(client, _)| *client);
    let count = snapshots.len() as f64;
    let mut iter = snapshots.iter();
    let mut acc: ModelParams<f64> = iter.next().unwrap().1.cast();
    for (_, p) in iter {
        add_params(&mut acc.encoder, &p.encoder)?;
        add_params(&mut acc.decoder, &p.decoder)?;
        for (a, b) in acc.discriminators.iter_mut().zip(&p.discriminators) {
            add_params(a, b)?;
        }
    }
    let rescale = |set: &mut crate::params::ParameterSet<f64>| {
        for i in 0..set.len() {
            set.tensor_mut(i).scale(1.0 / count);
        }
    };
    rescale(&mut acc.encoder);
    rescale(&mut acc.decoder);
    for d in &mut acc.discriminators {
        rescale(d);
    }
    Ok(acc.cast())
}

fn add_params(
    acc: &mut crate::params::ParameterSet<f64>,
    other: &crate::params::ParameterSet<f32>,
) -> Result<(), FedError> {
    if acc.len() != other.len() {
        return Err(FedError::Misaligned(ParamError::Misaligned(
            "parameter count".into(),
        )));
    }
    for i in 0..acc.len() {
        let src = other.tensor(i).cast::<f64>();
        acc.tensor_mut(i)
            .add_scaled(&src, 1.0)
            .map_err(|_| FedError::Misaligned(ParamError::Misaligned("shape".into())))?;
    }
    Ok(())
}

/// One FedAvg communication round: every selected client retrains a copy of
/// the global model for `local_rounds` passes over its data, then the server
/// replaces the global parameters with the elementwise mean. Returns the
/// per-client stats.
#[allow(clippy::too_many_arguments)]
pub fn fedavg_round<F>(
    model: &mut BlinderModel<f32>,
    clients: &mut [ClientDataset],
    selected: &[ClientId],
    local_rounds: usize,
    local_lr: f64,
    shadow: bool,
    batch_size: usize,
    seeder: &Seeder,
    epoch: usize,
    audit: &mut F,
) -> Result<Vec<ClientRoundStats>, FedError>
where
    F: FnMut(&UplinkMessage),
{
    let mut snapshots = Vec::new();
    let mut stats = Vec::new();
    for &cid in selected {
        let client = clients
            .iter_mut()
            .find(|c| c.client_id == cid)
            .ok_or(FedError::UnexpectedClient { client: cid })?;
        let mut local = model.clone();
        let mut rng = seeder
            .derive("fedavg")
            .derive_idx(epoch as u64)
            .derive_idx(cid as u64)
            .rng();
        let mut order: Vec<usize> = (0..client.segments.len()).collect();
        let mut last = LossBreakdown::default();
        let mut failed = false;
        'rounds: for _ in 0..local_rounds {
            order.shuffle(&mut rng);
            for chunk in order.chunks(batch_size) {
                let segs: Vec<&LabeledSegment> =
                    chunk.iter().map(|&i| &client.segments[i]).collect();
                let batch = Batch::from_segments(&segs)?;
                match local.adversarial_step(&batch, local_lr, shadow, &mut rng) {
                    Ok(losses) => last = losses,
                    Err(ModelError::Net(crate::nn::NnError::NonFiniteActivation { .. }))
                    | Err(ModelError::Param(ParamError::NonFinite)) => {
                        log::warn!("fedavg: client {cid} went non-finite, skipping");
                        failed = true;
                        break 'rounds;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
        if failed {
            stats.push(ClientRoundStats {
                client: cid,
                support_loss: f64::NAN,
                meta_loss: f64::NAN,
                disc_query: Vec::new(),
                grad_norm: 0.0,
                skipped: true,
            });
            continue;
        }
        let params = local.params();
        let message = UplinkMessage {
            client: cid,
            epoch,
            round: 0,
            payload: UplinkPayload::Parameters(params.clone()),
        };
        audit(&message);
        snapshots.push((cid, params));
        stats.push(ClientRoundStats {
            client: cid,
            support_loss: last.total,
            meta_loss: last.total,
            disc_query: alloc::vec![last.disc],
            grad_norm: 0.0,
            skipped: false,
        });
    }
    if !snapshots.is_empty() {
        let mean = mean_params(snapshots)?;
        model.set_params(&mean)?;
    }
    Ok(stats)
}

/// Runs the full federated training loop.
pub fn run_training(
    config: &FedConfig,
    clients: &mut [ClientDataset],
    template: &BlinderModel<f32>,
) -> Result<TrainOutcome, FedError> {
    run_training_with_audit(config, clients, template, |_| {})
}

/// [`run_training`] with an audit hook that observes every uplink message.
pub fn run_training_with_audit<F>(
    config: &FedConfig,
    clients: &mut [ClientDataset],
    template: &BlinderModel<f32>,
    mut audit: F,
) -> Result<TrainOutcome, FedError>
where
    F: FnMut(&UplinkMessage),
{
    config.validate()?;
    if clients.is_empty() {
        return Err(FedError::EmptyClientSet);
    }
    let seeder = Seeder::new(config.seed);
    let mut model = template.clone();
    let mut rounds = Vec::new();
    let mut snapshots = Vec::new();
    let mut ids: Vec<ClientId> = clients.iter().map(|c| c.client_id).collect();
    ids.sort_unstable();

    for epoch in 0..config.epochs {
        let mut selection_rng = seeder
            .derive("selection")
            .derive_idx(epoch as u64)
            .rng();
        let selected = select_clients(&ids, config.selection_fraction, &mut selection_rng)?;

        match config.aggregation {
            Aggregation::FedAvg => {
                let stats = fedavg_round(
                    &mut model,
                    clients,
                    &selected,
                    config.fedavg_local_rounds,
                    config.local_lr,
                    config.shadow_samples,
                    config.batch_size(),
                    &seeder,
                    epoch,
                    &mut audit,
                )?;
                rounds.push(RoundRecord {
                    epoch,
                    round: 0,
                    selected: selected.clone(),
                    clients: stats,
                    aggregate_norm: 0.0,
                });
            }
            Aggregation::MetaFedSgd => {
                let mut min_samples = usize::MAX;
                for &cid in &selected {
                    let client = clients
                        .iter_mut()
                        .find(|c| c.client_id == cid)
                        .ok_or(FedError::UnexpectedClient { client: cid })?;
                    if client.len() < config.batch_size() {
                        return Err(FedError::InsufficientData {
                            client: cid,
                            needed: config.batch_size(),
                            available: client.len(),
                        });
                    }
                    min_samples = min_samples.min(client.len());
                    client.begin_epoch(
                        seeder
                            .derive("data")
                            .derive_idx(epoch as u64)
                            .derive_idx(cid as u64)
                            .rng(),
                    );
                }
                let t = config.rounds_for(min_samples);
                let step = MetaStep {
                    local_lr: config.local_lr,
                    local_steps: config.local_steps_per_round,
                    shadow: config.shadow_samples,
                    second_order: config.second_order,
                };
                for round in 0..t {
                    let mut updates = Vec::new();
                    let mut stats = Vec::new();
                    for &cid in &selected {
                        let client = clients
                            .iter_mut()
                            .find(|c| c.client_id == cid)
                            .expect("validated above");
                        let (support, query) =
                            client.sample_support_query(config.support_size, config.query_size)?;
                        let support = Batch::from_segments(&support)?;
                        let query = Batch::from_segments(&query)?;
                        let mut adapt_rng = seeder
                            .derive("adapt")
                            .derive_idx(epoch as u64)
                            .derive_idx(round as u64)
                            .derive_idx(cid as u64)
                            .rng();
                        let mut query_rng = seeder
                            .derive("query")
                            .derive_idx(epoch as u64)
                            .derive_idx(round as u64)
                            .derive_idx(cid as u64)
                            .rng();
                        let result = client_meta_step(
                            &model, &support, &query, &step, &mut adapt_rng, &mut query_rng,
                        );
                        match result {
                            Ok(res) => {
                                let grad_norm = res.grads.norm_l2();
                                let message = UplinkMessage {
                                    client: cid,
                                    epoch,
                                    round,
                                    payload: UplinkPayload::Gradients(res.grads.clone()),
                                };
                                audit(&message);
                                let UplinkPayload::Gradients(grads) = message.payload else {
                                    unreachable!()
                                };
                                updates.push((cid, grads));
                                stats.push(ClientRoundStats {
                                    client: cid,
                                    support_loss: res.support_loss.total,
                                    meta_loss: res.query_loss.total,
                                    disc_query: res.disc_query,
                                    grad_norm,
                                    skipped: false,
                                });
                            }
                            Err(ModelError::Param(ParamError::NonFinite))
                            | Err(ModelError::Net(crate::nn::NnError::NonFiniteActivation {
                                ..
                            })) => {
                                log::warn!(
                                    "meta round {epoch}/{round}: client {cid} non-finite, skipped"
                                );
                                stats.push(ClientRoundStats {
                                    client: cid,
                                    support_loss: f64::NAN,
                                    meta_loss: f64::NAN,
                                    disc_query: Vec::new(),
                                    grad_norm: 0.0,
                                    skipped: true,
                                });
                            }
                            Err(e) => return Err(e.into()),
                        }
                    }
                    let aggregate_norm =
                        aggregate_meta(&mut model, &mut updates, config.meta_lr, &selected)?;
                    rounds.push(RoundRecord {
                        epoch,
                        round,
                        selected: selected.clone(),
                        clients: stats,
                        aggregate_norm,
                    });
                }
            }
        }
        snapshots.push(model.params());
    }

    Ok(TrainOutcome {
        model,
        rounds,
        epoch_snapshots: snapshots,
    })
}

/// How a trained model is adapted to one client's local data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PersonalizeOptions {
    pub iterations: usize,
    pub local_lr: f64,
    pub shadow: bool,
    pub batch_size: usize,
    /// Keep the decoder fixed and adapt only the encoder and
    /// discriminators. Adaptation sets carry a single private class, and
    /// finetuning the decoder on them erodes its label conditioning — the
    /// very thing stochastic anonymization relies on.
    pub freeze_decoder: bool,
}

impl Default for PersonalizeOptions {
    fn default() -> Self {
        PersonalizeOptions {
            iterations: 80,
            local_lr: 0.08,
            shadow: true,
            batch_size: 16,
            freeze_decoder: true,
        }
    }
}

/// Adapts a copy of a trained model to one client's data with local
/// adversarial training; the source model is untouched.
pub fn personalize(
    model: &BlinderModel<f32>,
    adaptation_set: &[LabeledSegment],
    options: &PersonalizeOptions,
    rng: &mut ChaCha8Rng,
) -> Result<BlinderModel<f32>, FedError> {
    if adaptation_set.is_empty() {
        return Err(FedError::Model(ModelError::EmptyBatch));
    }
    let mut local = model.clone();
    let mut order: Vec<usize> = (0..adaptation_set.len()).collect();
    order.shuffle(rng);
    let mut cursor = 0;
    let size = options.batch_size.min(adaptation_set.len());
    let weights = model.config().weights;
    let latent = model.latent_dim();
    for _ in 0..options.iterations {
        if cursor + size > order.len() {
            order.shuffle(rng);
            cursor = 0;
        }
        let segs: Vec<&LabeledSegment> = order[cursor..cursor + size]
            .iter()
            .map(|&i| &adaptation_set[i])
            .collect();
        cursor += size;
        let batch = Batch::from_segments(&segs)?;
        if options.freeze_decoder {
            local.discriminator_step(&batch, options.local_lr, options.shadow, rng)?;
            let eps = normal_tensor(&[batch.len(), latent], rng);
            let (_, enc_g, mut dec_g) = local.vae_grads(&batch, &eps, &weights)?;
            dec_g.scale(0.0);
            local.sgd_encoder_decoder(&enc_g, &dec_g, options.local_lr)?;
        } else {
            local.adversarial_step(&batch, options.local_lr, options.shadow, rng)?;
        }
    }
    Ok(local)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anonymizer::ModelConfig;
    use crate::data::{DatasetSchema, PrivateAttribute};
    use alloc::vec;

    fn schema() -> DatasetSchema {
        DatasetSchema {
            channels: 1,
            window: 8,
            stride: 4,
            public_classes: 2,
            private_attributes: vec![PrivateAttribute {
                name: "attr".into(),
                classes: 2,
            }],
            magnitude_mode: false,
        }
    }

    fn config() -> ModelConfig {
        ModelConfig {
            latent_dim: 3,
            hidden: vec![10, 6],
            disc_hidden: vec![6],
            weights: Default::default(),
            conv_frontend: None,
        }
    }

    fn segments(client: ClientId, n: usize, seed: u64) -> Vec<LabeledSegment> {
        let mut rng = Seeder::new(seed).derive("segments").rng();
        (0..n)
            .map(|i| LabeledSegment {
                x: (0..8).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
                public_label: i % 2,
                private_labels: vec![(client as usize) % 2],
                client_id: client,
            })
            .collect()
    }

    fn population(n_clients: usize, per_client: usize) -> Vec<ClientDataset> {
        (0..n_clients as u32)
            .map(|c| ClientDataset::new(c, segments(c, per_client, 40 + c as u64)))
            .collect()
    }

    fn model(seed: u64) -> BlinderModel<f32> {
        BlinderModel::build(&schema(), &config(), seed).unwrap()
    }

    #[test]
    fn selection_size_and_determinism() {
        let ids: Vec<ClientId> = (0..36).collect();
        let mut rng = Seeder::new(5).derive("sel").rng();
        let picked = select_clients(&ids, 0.4, &mut rng).unwrap();
        assert_eq!(picked.len(), 14); // floor(0.4 * 36)
        let mut rng2 = Seeder::new(5).derive("sel").rng();
        assert_eq!(picked, select_clients(&ids, 0.4, &mut rng2).unwrap());

        let mut rng3 = Seeder::new(6).derive("sel").rng();
        let all = select_clients(&ids, 1.0, &mut rng3).unwrap();
        assert_eq!(all, ids);

        assert!(matches!(
            select_clients(&[], 0.4, &mut rng3),
            Err(FedError::EmptyClientSet)
        ));
    }

    #[test]
    fn support_query_draws_are_disjoint_and_partition_16() {
        let mut client = ClientDataset::new(0, segments(0, 16, 7));
        client.begin_epoch(Seeder::new(8).derive("epoch").rng());
        let (support, query) = client.sample_support_query(1, 15).unwrap();
        assert_eq!(support.len(), 1);
        assert_eq!(query.len(), 15);
        let mut seen: Vec<Vec<f32>> = support
            .iter()
            .chain(query.iter())
            .map(|s| s.x.clone())
            .collect();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        seen.dedup();
        assert_eq!(seen.len(), 16, "every segment used exactly once");
    }

    #[test]
    fn insufficient_data_is_reported() {
        let mut client = ClientDataset::new(3, segments(3, 10, 9));
        client.begin_epoch(Seeder::new(9).derive("epoch").rng());
        assert!(matches!(
            client.sample_support_query(1, 15),
            Err(FedError::InsufficientData {
                client: 3,
                needed: 16,
                available: 10
            })
        ));
    }

    fn batches(client: &mut ClientDataset, s: usize, q: usize) -> (Batch<f32>, Batch<f32>) {
        let (support, query) = client.sample_support_query(s, q).unwrap();
        (
            Batch::from_segments(&support).unwrap(),
            Batch::from_segments(&query).unwrap(),
        )
    }

    #[test]
    fn zero_local_lr_returns_plain_query_gradients() {
        let global = model(10);
        let mut client = ClientDataset::new(0, segments(0, 32, 11));
        client.begin_epoch(Seeder::new(12).derive("epoch").rng());
        let (support, query) = batches(&mut client, 2, 8);

        let step = MetaStep {
            local_lr: 0.0,
            local_steps: 1,
            shadow: true,
            second_order: false,
        };
        let mut adapt = Seeder::new(13).derive("adapt").rng();
        let mut qrng = Seeder::new(13).derive("query").rng();
        let res = client_meta_step(&global, &support, &query, &step, &mut adapt, &mut qrng)
            .unwrap();

        // Reference: gradients of the query losses at the unmodified global
        // parameters, with the same noise stream.
        let mut reference = global.clone();
        let mut qrng2 = Seeder::new(13).derive("query").rng();
        let eps_q = normal_tensor::<f32, _>(&[query.len(), 3], &mut qrng2);
        let weights = global.config().weights;
        let (_, enc_g, dec_g) = reference.vae_grads(&query, &eps_q, &weights).unwrap();
        let (mu, lv) = reference.encode(&query.x).unwrap();
        let z = crate::anonymizer::reparameterize(&mu, &lv, &eps_q);
        let (_, disc_g) = reference.disc_grads(&z, &query.privates).unwrap();

        assert_eq!(res.grads.encoder, enc_g);
        assert_eq!(res.grads.decoder, dec_g);
        assert_eq!(res.grads.discriminators, disc_g);
    }

    #[test]
    fn meta_gradients_align_with_global_parameters() {
        let global = model(14);
        let mut client = ClientDataset::new(1, segments(1, 32, 15));
        client.begin_epoch(Seeder::new(16).derive("epoch").rng());
        let (support, query) = batches(&mut client, 1, 15);
        let step = MetaStep {
            local_lr: 0.05,
            local_steps: 1,
            shadow: true,
            second_order: false,
        };
        let mut adapt = Seeder::new(17).derive("adapt").rng();
        let mut qrng = Seeder::new(17).derive("query").rng();
        let res =
            client_meta_step(&global, &support, &query, &step, &mut adapt, &mut qrng).unwrap();
        global
            .params()
            .encoder
            .check_aligned(&res.grads.encoder)
            .unwrap();
        global
            .params()
            .decoder
            .check_aligned(&res.grads.decoder)
            .unwrap();
        for (p, g) in global
            .params()
            .discriminators
            .iter()
            .zip(&res.grads.discriminators)
        {
            p.check_aligned(g).unwrap();
        }
    }

    #[test]
    fn aggregation_of_identical_gradients_equals_single_step() {
        // all clients send g: update must be -lr * g (mean = g)
        let mut model_a = model(18);
        let mut model_b = model_a.clone();
        let mut client = ClientDataset::new(0, segments(0, 32, 19));
        client.begin_epoch(Seeder::new(20).derive("epoch").rng());
        let (support, query) = batches(&mut client, 1, 7);
        let step = MetaStep {
            local_lr: 0.05,
            local_steps: 1,
            shadow: false,
            second_order: false,
        };
        let mut adapt = Seeder::new(21).derive("adapt").rng();
        let mut qrng = Seeder::new(21).derive("query").rng();
        let res =
            client_meta_step(&model_a, &support, &query, &step, &mut adapt, &mut qrng).unwrap();

        let mut updates = vec![
            (0u32, res.grads.clone()),
            (1u32, res.grads.clone()),
            (2u32, res.grads.clone()),
        ];
        aggregate_meta(&mut model_a, &mut updates, 0.1, &[0, 1, 2]).unwrap();
        model_b.apply_update(&res.grads, 0.1).unwrap();
        assert_eq!(model_a.params().checksum(), model_b.params().checksum());
    }

    #[test]
    fn aggregation_is_permutation_invariant() {
        let base = model(22);
        let mut client = ClientDataset::new(0, segments(0, 64, 23));
        client.begin_epoch(Seeder::new(24).derive("epoch").rng());
        let step = MetaStep {
            local_lr: 0.05,
            local_steps: 1,
            shadow: false,
            second_order: false,
        };
        let mut grads = Vec::new();
        for cid in 0..5u32 {
            let (support, query) = batches(&mut client, 1, 7);
            let mut adapt = Seeder::new(30 + cid as u64).derive("adapt").rng();
            let mut qrng = Seeder::new(30 + cid as u64).derive("query").rng();
            let res =
                client_meta_step(&base, &support, &query, &step, &mut adapt, &mut qrng).unwrap();
            grads.push((cid, res.grads));
        }
        let selected: Vec<ClientId> = (0..5).collect();

        let mut forward = base.clone();
        let mut updates = grads.clone();
        aggregate_meta(&mut forward, &mut updates, 0.1, &selected).unwrap();

        let mut reversed = base.clone();
        let mut updates_rev: Vec<_> = grads.clone().into_iter().rev().collect();
        aggregate_meta(&mut reversed, &mut updates_rev, 0.1, &selected).unwrap();

        assert_eq!(forward.params().checksum(), reversed.params().checksum());
    }

    #[test]
    fn aggregation_rejects_unselected_clients() {
        let mut m = model(25);
        let zero = m.zero_grads();
        let mut updates = vec![(9u32, zero)];
        assert!(matches!(
            aggregate_meta(&mut m, &mut updates, 0.1, &[0, 1]),
            Err(FedError::UnexpectedClient { client: 9 })
        ));
    }

    #[test]
    fn fedavg_zero_rounds_keeps_global_unchanged() {
        let mut m = model(26);
        let before = m.params().checksum();
        let mut clients = population(3, 20);
        let seeder = Seeder::new(27);
        let stats = fedavg_round(
            &mut m,
            &mut clients,
            &[0, 1, 2],
            0,
            0.05,
            false,
            8,
            &seeder,
            0,
            &mut |_| {},
        )
        .unwrap();
        assert_eq!(stats.len(), 3);
        assert_eq!(m.params().checksum(), before);
    }

    #[test]
    fn fedavg_single_client_adopts_that_clients_params() {
        let mut m = model(28);
        let mut clients = population(1, 24);
        let seeder = Seeder::new(29);

        // reference: run the same local training by hand
        let mut expected = m.clone();
        {
            let client = &clients[0];
            let mut rng = seeder
                .derive("fedavg")
                .derive_idx(0)
                .derive_idx(0)
                .rng();
            let mut order: Vec<usize> = (0..client.segments.len()).collect();
            for _ in 0..2 {
                order.shuffle(&mut rng);
                for chunk in order.chunks(8) {
                    let segs: Vec<&LabeledSegment> =
                        chunk.iter().map(|&i| &client.segments[i]).collect();
                    let batch = Batch::from_segments(&segs).unwrap();
                    expected
                        .adversarial_step(&batch, 0.05, false, &mut rng)
                        .unwrap();
                }
            }
        }

        fedavg_round(
            &mut m,
            &mut clients,
            &[0],
            2,
            0.05,
            false,
            8,
            &seeder,
            0,
            &mut |_| {},
        )
        .unwrap();
        assert_eq!(m.params().checksum(), expected.params().checksum());
    }

    #[test]
    fn fedavg_of_opposite_params_is_zero() {
        let m = model(30);
        let mut plus = m.params();
        let mut minus = m.params();
        for set in [&mut plus, &mut minus] {
            for i in 0..set.encoder.len() {
                set.encoder.tensor_mut(i).data_mut().fill(0.0);
            }
        }
        plus.encoder.tensor_mut(0).data_mut().fill(1.5);
        minus.encoder.tensor_mut(0).data_mut().fill(-1.5);
        let mean = mean_params(vec![(0, plus), (1, minus)]).unwrap();
        assert!(mean.encoder.tensor(0).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn training_is_deterministic_under_a_seed() {
        let template = model(31);
        let cfg = FedConfig {
            selection_fraction: 0.5,
            meta_lr: 0.02,
            local_lr: 0.02,
            support_size: 1,
            query_size: 7,
            rounds_per_epoch: Some(3),
            epochs: 2,
            seed: 99,
            ..FedConfig::default()
        };
        let mut clients_a = population(4, 24);
        let mut clients_b = population(4, 24);
        let out_a = run_training(&cfg, &mut clients_a, &template).unwrap();
        let out_b = run_training(&cfg, &mut clients_b, &template).unwrap();
        assert_eq!(
            out_a.model.params().checksum(),
            out_b.model.params().checksum()
        );
        assert_eq!(out_a.rounds.len(), 6);
        assert_eq!(out_a.epoch_snapshots.len(), 2);
    }

    #[test]
    fn rounds_per_epoch_follows_sample_count_over_batch() {
        let cfg = FedConfig {
            support_size: 1,
            query_size: 15,
            ..FedConfig::default()
        };
        assert_eq!(cfg.rounds_for(16_000), 1_000);
        let big = FedConfig {
            support_size: 16,
            query_size: 240,
            ..FedConfig::default()
        };
        assert_eq!(big.rounds_for(16_000), 62); // floor(16000 / 256)
    }

    #[test]
    fn uplink_carries_only_gradients_and_counts_match() {
        let template = model(32);
        let cfg = FedConfig {
            selection_fraction: 0.5,
            query_size: 7,
            rounds_per_epoch: Some(4),
            epochs: 2,
            seed: 7,
            ..FedConfig::default()
        };
        let mut clients = population(4, 24);
        let mut messages = Vec::new();
        run_training_with_audit(&cfg, &mut clients, &template, |msg| {
            messages.push((msg.epoch, msg.round, msg.client, msg.payload.kind()));
        })
        .unwrap();
        // m = max(1, floor(0.5 * 4)) = 2 clients; 4 rounds; 2 epochs
        assert_eq!(messages.len(), 2 * 4 * 2);
        assert!(messages.iter().all(|(_, _, _, kind)| *kind == "gradients"));
        for epoch in 0..2 {
            let count = messages.iter().filter(|(e, _, _, _)| *e == epoch).count();
            assert_eq!(count, 8, "m * t messages per epoch");
        }
    }

    #[test]
    fn skipped_client_shrinks_the_divisor() {
        // Two updates, one comes from a skipped client (never sent): the
        // aggregate must divide by the actual contributor count. Simulated
        // directly through aggregate_meta.
        let mut m1 = model(33);
        let mut m2 = m1.clone();
        let mut g = m1.zero_grads();
        g.encoder.grads[0].tensor.data_mut().fill(1.0);

        // one contributor
        let mut one = vec![(0u32, g.clone())];
        aggregate_meta(&mut m1, &mut one, 0.1, &[0, 1]).unwrap();
        // two contributors with the same gradient: mean unchanged
        let mut two = vec![(0u32, g.clone()), (1u32, g.clone())];
        aggregate_meta(&mut m2, &mut two, 0.1, &[0, 1]).unwrap();
        assert_eq!(m1.params().checksum(), m2.params().checksum());
    }

    #[test]
    fn personalize_leaves_the_source_model_untouched() {
        let m = model(34);
        let before = m.params().checksum();
        let data = segments(0, 20, 35);
        let mut rng = Seeder::new(36).derive("pers").rng();
        let opts = PersonalizeOptions {
            iterations: 5,
            local_lr: 0.05,
            batch_size: 8,
            ..PersonalizeOptions::default()
        };
        let adapted = personalize(&m, &data, &opts, &mut rng).unwrap();
        assert_eq!(m.params().checksum(), before);
        assert_ne!(adapted.params().checksum(), before);

        let mut rng = Seeder::new(37).derive("pers").rng();
        let none = PersonalizeOptions {
            iterations: 0,
            ..opts
        };
        let unchanged = personalize(&m, &data, &none, &mut rng).unwrap();
        assert_eq!(unchanged.params().checksum(), before);
    }

    #[test]
    fn personalization_reduces_the_adaptation_loss() {
        let m = model(38);
        let data = segments(0, 24, 39);
        let batch =
            Batch::from_segments(&data.iter().collect::<Vec<_>>()).unwrap();
        let eps = normal_tensor::<f32, _>(
            &[batch.len(), 3],
            &mut Seeder::new(40).derive("eval").rng(),
        );
        let weights = m.config().weights;
        let before = m.evaluate_losses(&batch, &eps, &weights).unwrap().total;
        let mut rng = Seeder::new(41).derive("pers").rng();
        let opts = PersonalizeOptions {
            iterations: 80,
            local_lr: 0.02,
            batch_size: 8,
            freeze_decoder: false,
            ..PersonalizeOptions::default()
        };
        let adapted = personalize(&m, &data, &opts, &mut rng).unwrap();
        let after = adapted.evaluate_losses(&batch, &eps, &weights).unwrap().total;
        assert!(
            after <= before + 1e-3,
            "adaptation loss should not increase: {before} -> {after}"
        );
    }
}
