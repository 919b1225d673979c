//! Alternating optimisation of the discriminators, the pixel generators and
//! the feature path, plus learning-rate schedule, checkpoints and loss log.
//!
//! Each iteration draws one PK batch, generates fake images once, then runs
//! the discriminator step, the pixel-generator step and the feature step in
//! that order. Every random draw inside an iteration comes from a stream keyed
//! by `(seed, tag, iteration)`; the batch stream state is checkpointed, so a
//! resumed run continues bit for bit.

mod ablation;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use ablation::{run_ablation, sweep, AblationRow, AblationTable};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::losses::{
    classification_loss, cycle_loss, discriminator_loss, feature_identity_losses, gan_loss, gan_loss_feat,
    gan_loss_pix, triplet_loss, Labeled, LossReport, LossWeights, Mining, PairLabel,
};
use crate::nets::{init_models, load_checkpoint, save_checkpoint, Ctx, ModelBundle, NetConfig, ParamGroup, ParamId, ParamStore, Variant};
use crate::optim::{Optimizer, OptimizerKind};
use crate::sampling::{
    build_discriminator_pairs, build_generator_pairs, pk_batch_stream, GeneratorTarget, LabeledPair, Member,
    PairCounts, PkBatch, PkShape, PkState, PkStream,
};
use crate::seed;
use crate::syndata::Dataset;
use crate::tensor::Tensor;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_LOG_FILE: &str = "losses.jsonl";

/// Fields that may differ between a checkpoint and the config resuming it.
const RESUMABLE_FIELDS: [&str; 2] = ["total_iters", "checkpoint_every"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub seed: u64,
    pub total_iters: usize,
    pub decay_iter: usize,
    pub decay_factor: f64,
    pub lr_heads: f64,
    pub lr_backbone: f64,
    pub lr_gan: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub p: usize,
    pub k_rgb: usize,
    pub k_ir: usize,
    pub lambda_cyc: f64,
    pub lambda_id_pix: f64,
    pub lambda_gan_feat: f64,
    pub margin: f64,
    pub mining: Mining,
    /// Discriminator pairs per FAKE sub-kind; generator pairs per kind.
    pub pairs_per_kind: usize,
    pub horizontal_flip: bool,
    pub checkpoint_every: usize,
    pub feature_channels: usize,
    pub embed_dim: usize,
    pub classifier_hidden: usize,
    pub dropout: f64,
    pub gen_width: usize,
    pub gen_res_blocks: usize,
    pub disc_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let net = NetConfig::default();
        let w = LossWeights::default();
        TrainConfig {
            variant: Variant::AlignGan,
            seed: 0,
            total_iters: 2000,
            decay_iter: 1000,
            decay_factor: 0.1,
            lr_heads: 0.2,
            lr_backbone: 0.02,
            lr_gan: 0.0002,
            momentum: 0.9,
            weight_decay: 5e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            p: 8,
            k_rgb: 4,
            k_ir: 4,
            lambda_cyc: w.lambda_cyc,
            lambda_id_pix: w.lambda_id_pix,
            lambda_gan_feat: w.lambda_gan_feat,
            margin: w.margin,
            mining: Mining::BatchHard,
            pairs_per_kind: 8,
            horizontal_flip: true,
            checkpoint_every: 500,
            feature_channels: net.feature_channels,
            embed_dim: net.embed_dim,
            classifier_hidden: net.classifier_hidden,
            dropout: net.dropout,
            gen_width: net.gen_width,
            gen_res_blocks: net.gen_res_blocks,
            disc_width: net.disc_width,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_cyc: self.lambda_cyc,
            lambda_id_pix: self.lambda_id_pix,
            lambda_gan_feat: self.lambda_gan_feat,
            margin: self.margin,
        }
    }

    pub fn shape(&self) -> PkShape {
        PkShape {
            p: self.p,
            k_rgb: self.k_rgb,
            k_ir: self.k_ir,
        }
    }

    pub fn net_config(&self, num_classes: usize, image_size: usize) -> NetConfig {
        NetConfig {
            variant: self.variant,
            num_classes,
            image_size,
            feature_channels: self.feature_channels,
            embed_dim: self.embed_dim,
            classifier_hidden: self.classifier_hidden,
            dropout: self.dropout,
            gen_width: self.gen_width,
            gen_res_blocks: self.gen_res_blocks,
            disc_width: self.disc_width,
            ..NetConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_iters == 0 {
            return Err(Error::config("total_iters", "must be positive"));
        }
        if self.decay_iter >= self.total_iters {
            return Err(Error::config("decay_iter", "must be below total_iters"));
        }
        for (field, v) in [("lr_heads", self.lr_heads), ("lr_backbone", self.lr_backbone), ("lr_gan", self.lr_gan)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(field, "learning rates must be positive"));
            }
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::config("decay_factor", "must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay", "must be nonnegative"));
        }
        for (field, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(field, "must lie in [0, 1)"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        if self.p < 2 {
            return Err(Error::config("p", "a batch needs at least 2 identities"));
        }
        if self.k_rgb == 0 {
            return Err(Error::config("k_rgb", "must be positive"));
        }
        if self.k_ir < 2 {
            return Err(Error::config("k_ir", "REAL pairs need 2 IR images per identity"));
        }
        if self.pairs_per_kind == 0 {
            return Err(Error::config("pairs_per_kind", "must be positive"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::config("checkpoint_every", "must be positive"));
        }
        self.weights().validate()
    }

    /// Set one field from its textual value, as in `key=value` overrides.
    pub fn apply_override(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut doc = serde_json::to_value(&*self)?;
        let Value::Object(map) = &mut doc else { unreachable!() };
        let Some(slot) = map.get_mut(key) else {
            return Err(Error::config(key, "unknown config key"));
        };
        *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        *self = serde_json::from_value(doc).map_err(|e| Error::config(key, format!("bad value {raw:?}: {e}")))?;
        Ok(())
    }

    /// Learning rate for `base` at 1-based `iteration`.
    pub fn lr_at(&self, base: f64, iteration: usize) -> f64 {
        if iteration > self.decay_iter {
            base * self.decay_factor
        } else {
            base
        }
    }

    /// Names of the fields that differ, ignoring those a resume may change.
    pub fn mismatched_fields(&self, other: &TrainConfig) -> Vec<String> {
        let (Ok(Value::Object(a)), Ok(Value::Object(b))) = (serde_json::to_value(self), serde_json::to_value(other))
        else {
            unreachable!()
        };
        a.iter()
            .filter(|(k, v)| !RESUMABLE_FIELDS.contains(&k.as_str()) && b.get(*k) != Some(*v))
            .map(|(k, _)| k.clone())
            .collect()
    }
}

/// Which sub-step just finished, for [`Trainer::train_step_observed`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubStep {
    Discriminator,
    Pixel,
    Feature,
}

impl SubStep {
    /// The parameter groups this sub-step may change.
    pub fn groups(self) -> &'static [ParamGroup] {
        match self {
            SubStep::Discriminator => &[ParamGroup::Disc],
            SubStep::Pixel => &[ParamGroup::PixelGen],
            SubStep::Feature => &[ParamGroup::Backbone, ParamGroup::Heads],
        }
    }
}

/// Batch images after augmentation, with ids and classifier labels.
pub struct BatchImages {
    pub rgb: Tensor,
    pub ir: Tensor,
    pub rgb_ids: Vec<u32>,
    pub ir_ids: Vec<u32>,
    pub rgb_labels: Vec<usize>,
    pub ir_labels: Vec<usize>,
}

fn flip_horizontal(t: &mut Tensor, n: usize) {
    let s = t.shape().to_vec();
    let w = s[3];
    let per = s[1] * s[2] * w;
    for row in t.data_mut()[n * per..(n + 1) * per].chunks_mut(w) {
        row.reverse();
    }
}

fn finite(term: &str, v: f64, iteration: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            term: term.to_string(),
            iteration,
        })
    }
}

fn range(start: usize, len: usize) -> Vec<usize> {
    (start..start + len).collect()
}

/// Row of `m` in `concat(real IR, fake IR)`.
fn member_row(m: Member, n_ir: usize) -> usize {
    match m {
        Member::Real(i) => i,
        Member::Fake(i) => n_ir + i,
    }
}

fn pair_rows(pairs: &[LabeledPair], n_ir: usize) -> (Vec<usize>, Vec<usize>) {
    pairs
        .iter()
        .map(|p| (member_row(p.image, n_ir), member_row(p.feature_map, n_ir)))
        .unzip()
}

#[derive(Default)]
struct DTerms {
    real: f64,
    fake: f64,
    rev: f64,
}

/// Discriminator losses on one batch and their gradients; generators and the
/// feature path are constants here.
fn discriminator_terms(
    bundle: &ModelBundle,
    cfg: &TrainConfig,
    batch: &PkBatch,
    x: &BatchImages,
    fakes: Option<(&Tensor, &Tensor)>,
    iteration: usize,
) -> Result<(DTerms, Vec<(ParamId, Tensor)>)> {
    let v = bundle.variant();
    if !v.has_discriminator() {
        return Ok((DTerms::default(), Vec::new()));
    }
    let g = Graph::new();
    let ctx = Ctx::new(&g, &bundle.store, &[ParamGroup::Disc], true, false, seed::derive(cfg.seed, "dropout-d", iteration as u64));
    let n_ir = x.ir_ids.len();
    let n_rgb = x.rgb_ids.len();
    let ir = g.constant(x.ir.clone());
    let rgb = g.constant(x.rgb.clone());
    let fake_ir = fakes.map(|(f, _)| g.constant(f.clone()));
    let mut parts: Vec<(Var, Var, Var)> = Vec::new();
    match v {
        Variant::AlignGan => {
            let images = g.concat_rows(&[ir, fake_ir.expect("pixel variant")]);
            let (maps, _) = bundle.feature_forward(&ctx, images)?;
            let codes = bundle.joint_encode(&ctx, images)?;
            let mut rng = seed::rng(cfg.seed, "pairs-d", iteration as u64);
            let pairs = build_discriminator_pairs(batch, PairCounts { per_fake_kind: cfg.pairs_per_kind }, &mut rng)?;
            if pairs.iter().any(|p| p.label == PairLabel::Unsampled) {
                return Err(Error::PairTaxonomy("UNSAMPLED pair reached the discriminator".into()));
            }
            let (real, fake): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|p| p.label == PairLabel::Real);
            let (ri, rm) = pair_rows(&real, n_ir);
            let (fi, fm) = pair_rows(&fake, n_ir);
            let real_logits = bundle.joint_logits(&ctx, codes, maps, &ri, &rm)?;
            let fake_logits = bundle.joint_logits(&ctx, codes, maps, &fi, &fm)?;
            parts.push(discriminator_loss(real_logits, fake_logits)?);
        }
        Variant::PixAlign | Variant::AlignGanMinus => {
            let fake_ir = fake_ir.expect("pixel variant");
            parts.push(discriminator_loss(
                bundle.pixel_disc_logits(&ctx, ir)?,
                bundle.pixel_disc_logits(&ctx, fake_ir)?,
            )?);
            if v == Variant::AlignGanMinus {
                let (maps, _) = bundle.feature_forward(&ctx, g.concat_rows(&[ir, fake_ir]))?;
                parts.push(discriminator_loss(
                    bundle.feature_disc_logits(&ctx, maps.select_rows(&range(0, n_ir)))?,
                    bundle.feature_disc_logits(&ctx, maps.select_rows(&range(n_ir, n_rgb)))?,
                )?);
            }
        }
        Variant::FeatAlign => {
            let adapted = bundle.adapt_rgb(&ctx, rgb)?;
            let (maps, _) = bundle.feature_forward(&ctx, g.concat_rows(&[ir, adapted]))?;
            parts.push(discriminator_loss(
                bundle.feature_disc_logits(&ctx, maps.select_rows(&range(0, n_ir)))?,
                bundle.feature_disc_logits(&ctx, maps.select_rows(&range(n_ir, n_rgb)))?,
            )?);
        }
        Variant::Basel => unreachable!(),
    }
    let real = parts[1..].iter().fold(parts[0].0, |a, p| a.add(p.0));
    let fake = parts[1..].iter().fold(parts[0].1, |a, p| a.add(p.1));
    let mut objective = real.add(fake);
    let mut terms = DTerms {
        real: finite("l_d_real", real.item(), iteration)?,
        fake: finite("l_d_fake", fake.item(), iteration)?,
        rev: 0.0,
    };
    if let Some((_, fake_rgb)) = fakes {
        let (_, _, rev) = discriminator_loss(
            bundle.reverse_disc_logits(&ctx, rgb)?,
            bundle.reverse_disc_logits(&ctx, g.constant(fake_rgb.clone()))?,
        )?;
        terms.rev = finite("l_d_rev", rev.item(), iteration)?;
        objective = objective.add(rev);
    }
    let grads = g.backward(objective);
    Ok((terms, ctx.param_grads(&grads)))
}

/// Optimisation state of one training run.
pub struct Trainer<'d> {
    pub config: TrainConfig,
    pub bundle: ModelBundle,
    dataset: &'d Dataset,
    sgd: Optimizer,
    adam: Optimizer,
    stream: PkStream,
    iteration: usize,
    labels: BTreeMap<u32, usize>,
}

impl<'d> Trainer<'d> {
    pub fn new(config: TrainConfig, dataset: &'d Dataset) -> Result<Self> {
        config.validate()?;
        let labels: BTreeMap<u32, usize> = dataset.train_labels().into_iter().enumerate().map(|(i, id)| (id, i)).collect();
        let net = config.net_config(labels.len(), dataset.manifest.config.image_size);
        let bundle = init_models(&net, config.seed)?;
        let stream = pk_batch_stream(dataset, config.shape(), seed::derive(config.seed, "batches", 0))?;
        Ok(Trainer {
            sgd: Optimizer::new(OptimizerKind::Sgd {
                momentum: config.momentum,
                weight_decay: config.weight_decay,
            }),
            adam: Optimizer::new(OptimizerKind::Adam {
                beta1: config.adam_beta1,
                beta2: config.adam_beta2,
                eps: 1e-8,
            }),
            config,
            bundle,
            dataset,
            stream,
            iteration: 0,
            labels,
        })
    }

    /// Continue from a checkpoint written by [`Trainer::save`].
    pub fn resume(config: TrainConfig, dataset: &'d Dataset, path: &Path) -> Result<Self> {
        let ckpt = load_checkpoint(path)?;
        let saved: TrainConfig = serde_json::from_value(ckpt.meta["train_config"].clone())
            .map_err(|e| Error::Checkpoint(format!("{}: train_config: {e}", path.display())))?;
        let fields = config.mismatched_fields(&saved);
        if !fields.is_empty() {
            return Err(Error::ResumeMismatch { fields });
        }
        let mut t = Trainer::new(config, dataset)?;
        if ckpt.bundle.config != t.bundle.config {
            return Err(Error::ResumeMismatch {
                fields: vec!["net_config".into()],
            });
        }
        let state: PkState = serde_json::from_value(ckpt.meta["stream"].clone())
            .map_err(|e| Error::Checkpoint(format!("{}: stream state: {e}", path.display())))?;
        t.iteration = ckpt.meta["iteration"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint(format!("{}: missing iteration", path.display())))? as usize;
        t.stream.restore(state);
        t.sgd.load_state("sgd", &ckpt.extra)?;
        t.adam.load_state("adam", &ckpt.extra)?;
        t.bundle = ckpt.bundle;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let meta = serde_json::json!({
            "train_config": self.config,
            "iteration": self.iteration,
            "stream": self.stream.state(),
            "dataset_seed": self.dataset.manifest.generation_seed,
        });
        let mut extra = self.sgd.state_arrays("sgd");
        extra.extend(self.adam.state_arrays("adam"));
        save_checkpoint(path, &self.bundle, &meta, &extra)
    }

    /// Completed iterations.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Draw the next batch and run one iteration.
    pub fn step(&mut self) -> Result<LossReport> {
        let batch = self.stream.next_batch();
        let it = self.iteration + 1;
        let report = self.train_step(&batch, it)?;
        self.iteration = it;
        Ok(report)
    }

    pub fn next_batch(&mut self) -> PkBatch {
        self.stream.next_batch()
    }

    /// Stack and augment the batch images.
    pub fn batch_images(&self, batch: &PkBatch, iteration: usize) -> BatchImages {
        let samples = &self.dataset.samples;
        let stack = |rows: &[usize]| Tensor::stack(&rows.iter().map(|&r| &samples[r].image).collect::<Vec<_>>());
        let mut rgb = stack(&batch.rgb);
        let mut ir = stack(&batch.ir);
        if self.config.horizontal_flip {
            let mut rng = seed::rng(self.config.seed, "flip", iteration as u64);
            for i in 0..batch.rgb.len() {
                if rng.random_bool(0.5) {
                    flip_horizontal(&mut rgb, i);
                }
            }
            for i in 0..batch.ir.len() {
                if rng.random_bool(0.5) {
                    flip_horizontal(&mut ir, i);
                }
            }
        }
        let (rgb_ids, ir_ids) = (batch.rgb_ids(), batch.ir_ids());
        let label = |ids: &[u32]| ids.iter().map(|id| self.labels[id]).collect::<Vec<_>>();
        BatchImages {
            rgb_labels: label(&rgb_ids),
            ir_labels: label(&ir_ids),
            rgb,
            ir,
            rgb_ids,
            ir_ids,
        }
    }

    /// Discriminator objective `(L_D_total, L_D_rev)` on a batch without updating anything.
    pub fn discriminator_objective(&self, batch: &PkBatch, iteration: usize) -> Result<(f64, f64)> {
        let x = self.batch_images(batch, iteration);
        let fakes = self.make_fakes(&x)?;
        let (d, _) = discriminator_terms(
            &self.bundle,
            &self.config,
            batch,
            &x,
            fakes.as_ref().map(|(a, b)| (a, b)),
            iteration,
        )?;
        Ok((d.real + d.fake, d.rev))
    }

    /// Only the discriminator update of an iteration.
    pub fn discriminator_step(&mut self, batch: &PkBatch, iteration: usize) -> Result<()> {
        let x = self.batch_images(batch, iteration);
        let fakes = self.make_fakes(&x)?;
        let (_, grads) = discriminator_terms(
            &self.bundle,
            &self.config,
            batch,
            &x,
            fakes.as_ref().map(|(a, b)| (a, b)),
            iteration,
        )?;
        let lr = self.config.lr_at(self.config.lr_gan, iteration);
        self.adam.step(&mut self.bundle.store, &grads, lr);
        Ok(())
    }

    fn make_fakes(&self, x: &BatchImages) -> Result<Option<(Tensor, Tensor)>> {
        if !self.bundle.variant().has_pixel_module() {
            return Ok(None);
        }
        let g = Graph::new();
        let ctx = Ctx::new(&g, &self.bundle.store, &[], true, false, 0);
        let fake_ir = self.bundle.pixel_forward(&ctx, g.constant(x.rgb.clone()))?;
        let fake_rgb = self.bundle.pixel_backward(&ctx, g.constant(x.ir.clone()))?;
        Ok(Some(((*fake_ir.value()).clone(), (*fake_rgb.value()).clone())))
    }

    pub fn train_step(&mut self, batch: &PkBatch, iteration: usize) -> Result<LossReport> {
        self.train_step_observed(batch, iteration, &mut |_, _| {})
    }

    /// One iteration; `observe` sees the parameters after each sub-step.
    pub fn train_step_observed(
        &mut self,
        batch: &PkBatch,
        iteration: usize,
        observe: &mut dyn FnMut(SubStep, &ParamStore),
    ) -> Result<LossReport> {
        let cfg = self.config.clone();
        let w = cfg.weights();
        let v = self.bundle.variant();
        let x = self.batch_images(batch, iteration);
        let n_ir = x.ir_ids.len();
        let n_rgb = x.rgb_ids.len();
        let lr_gan = cfg.lr_at(cfg.lr_gan, iteration);
        let mut report = LossReport {
            iteration,
            ..LossReport::default()
        };

        // Fakes are generated once in a graph that the pixel step differentiates later.
        let before = self.bundle.store.clone();
        let gp = Graph::new();
        let ctx_gen = Ctx::new(&gp, &before, &[ParamGroup::PixelGen], true, false, 0);
        let rgb_p = gp.constant(x.rgb.clone());
        let ir_p = gp.constant(x.ir.clone());
        let fakes = if v.has_pixel_module() {
            Some((self.bundle.pixel_forward(&ctx_gen, rgb_p)?, self.bundle.pixel_backward(&ctx_gen, ir_p)?))
        } else {
            None
        };
        let fake_values = fakes.map(|(a, b)| ((*a.value()).clone(), (*b.value()).clone()));

        // discriminator step
        let (d, grads) = discriminator_terms(
            &self.bundle,
            &cfg,
            batch,
            &x,
            fake_values.as_ref().map(|(a, b)| (a, b)),
            iteration,
        )?;
        report.l_d_real = d.real;
        report.l_d_fake = d.fake;
        report.l_d_total = d.real + d.fake;
        report.l_d_rev = d.rev;
        self.adam.step(&mut self.bundle.store, &grads, lr_gan);
        observe(SubStep::Discriminator, &self.bundle.store);

        // pixel step: gradients reach only the generator leaves of `ctx_gen`
        if let Some((fake_ir, fake_rgb)) = fakes {
            let after_d = self.bundle.store.clone();
            let ctx = Ctx::new(&gp, &after_d, &[], true, false, seed::derive(cfg.seed, "dropout-p", iteration as u64));
            let b = &self.bundle;
            let images = gp.concat_rows(&[ir_p, fake_ir]);
            let (maps, vecs) = b.feature_forward(&ctx, images)?;
            let logits = b.classify(&ctx, vecs).select_rows(&range(n_ir, n_rgb));
            let emb = b.embed(&ctx, vecs);
            let cls = classification_loss(logits, &x.rgb_labels)?;
            let fake = Labeled {
                emb: emb.select_rows(&range(n_ir, n_rgb)),
                ids: &x.rgb_ids,
            };
            let real = Labeled {
                emb: emb.select_rows(&range(0, n_ir)),
                ids: &x.ir_ids,
            };
            let tri = triplet_loss(fake, real, real, cfg.margin, cfg.mining)?
                .add(triplet_loss(real, fake, fake, cfg.margin, cfg.mining)?)
                .scale(0.5);
            let gan = if v == Variant::AlignGan {
                let mut rng = seed::rng(cfg.seed, "pairs-p", iteration as u64);
                let pairs = build_generator_pairs(batch, GeneratorTarget::Pixel, cfg.pairs_per_kind, &mut rng)?;
                let (ii, mi) = pair_rows(&pairs, n_ir);
                let codes = b.joint_encode(&ctx, images)?;
                let cats: Vec<_> = pairs.iter().map(|p| p.category).collect();
                gan_loss_pix(b.joint_logits(&ctx, codes, maps, &ii, &mi)?, &cats)?
            } else {
                gan_loss(b.pixel_disc_logits(&ctx, fake_ir)?)?
            };
            let rec_rgb = b.pixel_backward(&ctx_gen, fake_ir)?;
            let rec_ir = b.pixel_forward(&ctx_gen, fake_rgb)?;
            let cyc = cycle_loss(rgb_p, rec_rgb, ir_p, rec_ir)?;
            let rev = gan_loss(b.reverse_disc_logits(&ctx, fake_rgb)?)?;

            report.l_gan_pix = finite("l_gan_pix", gan.item(), iteration)?;
            report.l_cyc = finite("l_cyc", cyc.item(), iteration)?;
            report.l_cls_pix = finite("l_cls_pix", cls.item(), iteration)?;
            report.l_tri_pix = finite("l_tri_pix", tri.item(), iteration)?;
            report.l_gan_rev = finite("l_gan_rev", rev.item(), iteration)?;
            report.l_pix_total = w.pixel_total(report.l_gan_pix, report.l_cyc, report.l_cls_pix, report.l_tri_pix);
            let objective = gan
                .add(cyc.scale(w.lambda_cyc))
                .add(cls.add(tri).scale(w.lambda_id_pix))
                .add(rev);
            let grads = ctx_gen.param_grads(&gp.backward(objective));
            drop(ctx);
            self.adam.step(&mut self.bundle.store, &grads, lr_gan);
        }
        drop(ctx_gen);
        observe(SubStep::Pixel, &self.bundle.store);

        // feature step
        let (grads, stats) = {
            let g = Graph::new();
            let b = &self.bundle;
            let ctx = Ctx::new(
                &g,
                &b.store,
                &[ParamGroup::Backbone, ParamGroup::Heads],
                true,
                true,
                seed::derive(cfg.seed, "dropout-f", iteration as u64),
            );
            let ir = g.constant(x.ir.clone());
            let other = match &fake_values {
                Some((fake_ir, _)) => g.constant(fake_ir.clone()),
                None => b.adapt_rgb(&ctx, g.constant(x.rgb.clone()))?,
            };
            let images = g.concat_rows(&[ir, other]);
            let (maps, vecs) = b.feature_forward(&ctx, images)?;
            let logits = b.classify(&ctx, vecs);
            let emb = b.embed(&ctx, vecs);
            let labels: Vec<usize> = x.ir_labels.iter().chain(&x.rgb_labels).copied().collect();
            let real = Labeled {
                emb: emb.select_rows(&range(0, n_ir)),
                ids: &x.ir_ids,
            };
            let fake = Labeled {
                emb: emb.select_rows(&range(n_ir, n_rgb)),
                ids: &x.rgb_ids,
            };
            let (cls, tri) = feature_identity_losses(logits, &labels, real, fake, cfg.margin, cfg.mining)?;
            let gan = match v {
                Variant::AlignGan => {
                    let mut rng = seed::rng(cfg.seed, "pairs-f", iteration as u64);
                    let pairs = build_generator_pairs(batch, GeneratorTarget::Feature, cfg.pairs_per_kind, &mut rng)?;
                    let (ii, mi) = pair_rows(&pairs, n_ir);
                    let codes = b.joint_encode(&ctx, images)?;
                    let cats: Vec<_> = pairs.iter().map(|p| p.category).collect();
                    Some(gan_loss_feat(b.joint_logits(&ctx, codes, maps, &ii, &mi)?, &cats)?)
                }
                Variant::FeatAlign | Variant::AlignGanMinus => {
                    Some(gan_loss(b.feature_disc_logits(&ctx, maps.select_rows(&range(n_ir, n_rgb)))?)?)
                }
                Variant::Basel | Variant::PixAlign => None,
            };
            report.l_cls_feat = finite("l_cls_feat", cls.item(), iteration)?;
            report.l_tri_feat = finite("l_tri_feat", tri.item(), iteration)?;
            let mut objective = cls.add(tri);
            if let Some(gan) = gan {
                report.l_gan_feat = finite("l_gan_feat", gan.item(), iteration)?;
                objective = objective.add(gan.scale(w.lambda_gan_feat));
            }
            report.l_feat_total = w.feature_total(report.l_cls_feat, report.l_tri_feat, report.l_gan_feat);
            let grads = ctx.param_grads(&g.backward(objective));
            (grads, ctx.take_stat_updates())
        };
        let (backbone, heads): (Vec<_>, Vec<_>) = grads
            .into_iter()
            .partition(|(id, _)| self.bundle.store.entry(*id).group == ParamGroup::Backbone);
        self.sgd.step(&mut self.bundle.store, &backbone, cfg.lr_at(cfg.lr_backbone, iteration));
        self.sgd.step(&mut self.bundle.store, &heads, cfg.lr_at(cfg.lr_heads, iteration));
        for (id, t) in stats {
            self.bundle.store.set(id, t);
        }
        observe(SubStep::Feature, &self.bundle.store);
        Ok(report)
    }
}

/// A finished run.
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub log: Vec<LossReport>,
}

fn read_log(path: &Path, upto: usize) -> Result<Vec<LossReport>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: LossReport = serde_json::from_str(&line)?;
        if r.iteration <= upto {
            out.push(r);
        }
    }
    Ok(out)
}

/// Train for `config.total_iters` iterations.
///
/// With a run directory, the loss log goes to `losses.jsonl` and checkpoints
/// to `checkpoint.bin` every `checkpoint_every` iterations and at the end.
/// `resume` continues from that checkpoint and truncates the log to it.
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
    run_dir: Option<&Path>,
    resume: bool,
    on_step: &mut dyn FnMut(&LossReport),
) -> Result<TrainOutcome> {
    config.validate()?;
    let ckpt_path = run_dir.map(|d| d.join(CHECKPOINT_FILE));
    let log_path = run_dir.map(|d| d.join(LOSS_LOG_FILE));
    let (mut trainer, mut log) = match (&ckpt_path, resume) {
        (Some(ckpt), true) => {
            let t = Trainer::resume(config.clone(), dataset, ckpt)?;
            let log_path = log_path.as_ref().expect("run dir");
            let log = if log_path.exists() { read_log(log_path, t.iteration())? } else { Vec::new() };
            (t, log)
        }
        (None, true) => return Err(Error::config("resume", "resuming needs a run directory")),
        _ => (Trainer::new(config.clone(), dataset)?, Vec::new()),
    };
    let mut writer = match (run_dir, &log_path) {
        (Some(dir), Some(path)) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
            for r in &log {
                writeln!(w, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(path, e))?;
            }
            Some(w)
        }
        _ => None,
    };
    while trainer.iteration() < config.total_iters {
        let report = trainer.step();
        let report = match report {
            Ok(r) => r,
            Err(e) => {
                if let Some(w) = writer.as_mut() {
                    let _ = w.flush();
                }
                return Err(e);
            }
        };
        on_step(&report);
        if let (Some(w), Some(path)) = (writer.as_mut(), &log_path) {
            writeln!(w, "{}", serde_json::to_string(&report)?).map_err(|e| Error::io(path, e))?;
        }
        log.push(report);
        let it = trainer.iteration();
        if let (Some(ckpt), Some(path)) = (&ckpt_path, &log_path) {
            if it % config.checkpoint_every == 0 || it == config.total_iters {
                writer.as_mut().expect("log").flush().map_err(|e| Error::io(path, e))?;
                trainer.save(ckpt)?;
            }
        }
    }
    Ok(TrainOutcome {
        bundle: trainer.bundle,
        log,
    })
}

#[cfg(test)]
mod tests;
