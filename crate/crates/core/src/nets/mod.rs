//! Parametric functions: pixel generators, feature generator (backbone),
//! classifier, embedder and the discriminators of every model variant.
//!
//! Parameters live in a flat [`ParamStore`]; modules hold ids into it. A
//! forward pass runs inside a [`Ctx`] that decides which groups are leaves
//! with gradients and whether normalization uses batch or running statistics.

mod checkpoint;
mod layers;
mod params;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use layers::{dropout, BatchNorm, Conv, InstanceNorm, Linear};
pub use params::{Ctx, ParamEntry, ParamGroup, ParamId, ParamStore};

use layers::Builder;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "basel")]
    Basel,
    #[serde(rename = "pixalign")]
    PixAlign,
    #[serde(rename = "featalign")]
    FeatAlign,
    #[serde(rename = "aligngan-minus")]
    AlignGanMinus,
    #[serde(rename = "aligngan")]
    AlignGan,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::Basel, Variant::PixAlign, Variant::FeatAlign, Variant::AlignGanMinus, Variant::AlignGan];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Basel => "basel",
            Variant::PixAlign => "pixalign",
            Variant::FeatAlign => "featalign",
            Variant::AlignGanMinus => "aligngan-minus",
            Variant::AlignGan => "aligngan",
        }
    }

    /// Display label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Basel => "Basel.",
            Variant::PixAlign => "PixAlign",
            Variant::FeatAlign => "FeatAlign",
            Variant::AlignGanMinus => "AlignGAN-",
            Variant::AlignGan => "AlignGAN",
        }
    }

    pub fn has_pixel_module(self) -> bool {
        matches!(self, Variant::PixAlign | Variant::AlignGanMinus | Variant::AlignGan)
    }

    /// Variants without a pixel module feed RGB straight into the backbone.
    pub fn has_rgb_adapter(self) -> bool {
        !self.has_pixel_module()
    }

    pub fn has_joint_disc(self) -> bool {
        self == Variant::AlignGan
    }

    pub fn has_pixel_disc(self) -> bool {
        matches!(self, Variant::PixAlign | Variant::AlignGanMinus)
    }

    pub fn has_feature_disc(self) -> bool {
        matches!(self, Variant::FeatAlign | Variant::AlignGanMinus)
    }

    pub fn has_discriminator(self) -> bool {
        self != Variant::Basel
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "basel" | "basel." | "baseline" => Variant::Basel,
            "pixalign" => Variant::PixAlign,
            "featalign" => Variant::FeatAlign,
            "aligngan-minus" | "aligngan-" | "alignganminus" => Variant::AlignGanMinus,
            "aligngan" => Variant::AlignGan,
            _ => return Err(Error::config("variant", format!("unknown variant {s:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub variant: Variant,
    /// Number of training identities (classifier outputs).
    pub num_classes: usize,
    pub image_size: usize,
    /// Widths of the three stride-2 backbone blocks.
    pub backbone_widths: [usize; 3],
    /// `C_m`, channels of the feature map produced by the final block.
    pub feature_channels: usize,
    pub classifier_hidden: usize,
    pub dropout: f64,
    /// `d_e`
    pub embed_dim: usize,
    pub gen_width: usize,
    pub gen_res_blocks: usize,
    pub disc_width: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            variant: Variant::AlignGan,
            num_classes: 40,
            image_size: 32,
            backbone_widths: [16, 32, 64],
            feature_channels: 64,
            classifier_hidden: 64,
            dropout: 0.5,
            embed_dim: 64,
            gen_width: 8,
            gen_res_blocks: 1,
            disc_width: 16,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes <= 1 {
            return Err(Error::config("num_classes", "need at least 2 training identities"));
        }
        if self.image_size < 8 || self.image_size % 8 != 0 {
            return Err(Error::config("image_size", "must be a positive multiple of 8"));
        }
        for (field, v) in [
            ("backbone_widths", self.backbone_widths.iter().copied().min().unwrap_or(0)),
            ("feature_channels", self.feature_channels),
            ("classifier_hidden", self.classifier_hidden),
            ("embed_dim", self.embed_dim),
            ("gen_width", self.gen_width),
            ("disc_width", self.disc_width),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Spatial side of the feature map `M`.
    pub fn map_size(&self) -> usize {
        self.image_size / 8
    }

    pub fn map_shape(&self) -> [usize; 3] {
        [self.feature_channels, self.map_size(), self.map_size()]
    }
}

/// `G_f`: three stride-2 blocks and one stride-1 block, each conv + BN + ReLU.
#[derive(Clone, Debug)]
struct Backbone {
    blocks: Vec<(Conv, BatchNorm)>,
}

impl Backbone {
    fn new(b: &mut Builder, cfg: &NetConfig) -> Self {
        let [w1, w2, w3] = cfg.backbone_widths;
        let plan = [(1, w1, 2), (w1, w2, 2), (w2, w3, 2), (w3, cfg.feature_channels, 1)];
        let blocks = plan
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout, stride))| {
                (
                    Conv::new(b, &format!("backbone.block{i}.conv"), cin, cout, 3, stride),
                    BatchNorm::new(b, &format!("backbone.block{i}.bn"), cout),
                )
            })
            .collect();
        Backbone { blocks }
    }

    fn forward<'g>(&self, ctx: &Ctx<'g>, mut x: Var<'g>) -> Var<'g> {
        for (conv, bn) in &self.blocks {
            x = bn.forward(ctx, conv.forward(ctx, x)).relu();
        }
        x
    }
}

/// FC -> BN -> dropout -> ReLU -> FC.
#[derive(Clone, Debug)]
struct Classifier {
    fc1: Linear,
    bn: BatchNorm,
    fc2: Linear,
    dropout: f64,
}

/// Encoder / residual / decoder image translator with a tanh output.
#[derive(Clone, Debug)]
struct Generator {
    stem: (Conv, InstanceNorm),
    down: (Conv, InstanceNorm),
    res: Vec<[(Conv, InstanceNorm); 2]>,
    up: (Conv, InstanceNorm),
    out: Conv,
}

impl Generator {
    fn new(b: &mut Builder, name: &str, cin: usize, cout: usize, cfg: &NetConfig) -> Self {
        let w = cfg.gen_width;
        let block = |b: &mut Builder, tag: &str, ci: usize, co: usize, stride: usize| {
            (
                Conv::new(b, &format!("{name}.{tag}.conv"), ci, co, 3, stride),
                InstanceNorm::new(b, &format!("{name}.{tag}.norm"), co),
            )
        };
        let stem = block(b, "stem", cin, w, 1);
        let down = block(b, "down", w, 2 * w, 2);
        let res = (0..cfg.gen_res_blocks)
            .map(|i| [block(b, &format!("res{i}a"), 2 * w, 2 * w, 1), block(b, &format!("res{i}b"), 2 * w, 2 * w, 1)])
            .collect();
        let up = block(b, "up", 2 * w, w, 1);
        let out = Conv::new(b, &format!("{name}.out"), w, cout, 3, 1);
        Generator { stem, down, res, up, out }
    }

    fn forward<'g>(&self, ctx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        let step = |(conv, norm): &(Conv, InstanceNorm), x: Var<'g>| norm.forward(ctx, conv.forward(ctx, x));
        let mut h = step(&self.stem, x).relu();
        h = step(&self.down, h).relu();
        for [a, b] in &self.res {
            let r = step(b, step(a, h).relu());
            h = h.add(r);
        }
        h = step(&self.up, h).relu().upsample2x();
        self.out.forward(ctx, h).tanh()
    }
}

/// Stride-2 convolutional encoder taking an image down to the spatial size of `M`.
#[derive(Clone, Debug)]
struct ImageEncoder {
    convs: Vec<Conv>,
}

impl ImageEncoder {
    fn new(b: &mut Builder, name: &str, cin: usize, cfg: &NetConfig) -> Self {
        let d = cfg.disc_width;
        let convs = vec![
            Conv::new(b, &format!("{name}.enc0"), cin, d, 3, 2),
            Conv::new(b, &format!("{name}.enc1"), d, 2 * d, 3, 2),
            Conv::new(b, &format!("{name}.enc2"), 2 * d, 2 * d, 3, 2),
        ];
        ImageEncoder { convs }
    }

    fn forward<'g>(&self, ctx: &Ctx<'g>, mut x: Var<'g>) -> Var<'g> {
        for c in &self.convs {
            x = c.forward(ctx, x).leaky_relu(0.2);
        }
        x
    }

    fn out_channels(&self, cfg: &NetConfig) -> usize {
        2 * cfg.disc_width
    }
}

/// Conv + LReLU then a 1x1 conv to one channel, averaged into one logit per row.
#[derive(Clone, Debug)]
struct LogitHead {
    conv: Conv,
    out: Conv,
}

impl LogitHead {
    fn new(b: &mut Builder, name: &str, cin: usize, width: usize) -> Self {
        LogitHead {
            conv: Conv::new(b, &format!("{name}.head"), cin, width, 3, 1),
            out: Conv::new(b, &format!("{name}.logit"), width, 1, 1, 1),
        }
    }

    fn forward<'g>(&self, ctx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        let h = self.conv.forward(ctx, x).leaky_relu(0.2);
        let n = h.shape()[0];
        self.out.forward(ctx, h).spatial_mean().reshape(&[n])
    }
}

#[derive(Clone, Debug)]
struct ImageDisc {
    enc: ImageEncoder,
    head: LogitHead,
}

#[derive(Clone, Debug)]
struct JointDisc {
    enc: ImageEncoder,
    head: LogitHead,
}

#[derive(Clone)]
pub struct ModelBundle {
    pub config: NetConfig,
    pub store: ParamStore,
    adapter: Option<Conv>,
    backbone: Backbone,
    classifier: Classifier,
    embedder: Linear,
    gen_p: Option<Generator>,
    gen_p_rev: Option<Generator>,
    d_joint: Option<JointDisc>,
    d_pix: Option<ImageDisc>,
    d_feat: Option<LogitHead>,
    d_rev: Option<ImageDisc>,
}

impl std::fmt::Debug for ModelBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelBundle")
            .field("variant", &self.config.variant)
            .field("params", &self.store.num_trainable())
            .finish()
    }
}

/// Build every module of `config.variant` with deterministic initial values.
///
/// Each array is drawn from its own stream keyed by its name, so modules
/// shared between variants start from identical values under one seed.
pub fn init_models(config: &NetConfig, seed: u64) -> Result<ModelBundle> {
    config.validate()?;
    let v = config.variant;
    let mut store = ParamStore::default();
    let cm = config.feature_channels;

    let mut b = Builder { store: &mut store, group: ParamGroup::Backbone, seed };
    let adapter = v.has_rgb_adapter().then(|| Conv::new(&mut b, "backbone.rgb_adapter", 3, 1, 1, 1));
    let backbone = Backbone::new(&mut b, config);

    b.group = ParamGroup::Heads;
    let classifier = Classifier {
        fc1: Linear::new(&mut b, "classifier.fc1", cm, config.classifier_hidden),
        bn: BatchNorm::new(&mut b, "classifier.bn", config.classifier_hidden),
        fc2: Linear::new(&mut b, "classifier.fc2", config.classifier_hidden, config.num_classes),
        dropout: config.dropout,
    };
    let embedder = Linear::new(&mut b, "embedder", cm, config.embed_dim);

    b.group = ParamGroup::PixelGen;
    let (gen_p, gen_p_rev) = if v.has_pixel_module() {
        (Some(Generator::new(&mut b, "gen_p", 3, 1, config)), Some(Generator::new(&mut b, "gen_p_rev", 1, 3, config)))
    } else {
        (None, None)
    };

    b.group = ParamGroup::Disc;
    let d2 = 2 * config.disc_width;
    let d_joint = v.has_joint_disc().then(|| {
        let enc = ImageEncoder::new(&mut b, "d_joint", 1, config);
        let head = LogitHead::new(&mut b, "d_joint", enc.out_channels(config) + cm, d2);
        JointDisc { enc, head }
    });
    let image_disc = |b: &mut Builder, name: &str, cin: usize| {
        let enc = ImageEncoder::new(b, name, cin, config);
        let head = LogitHead::new(b, name, enc.out_channels(config), d2);
        ImageDisc { enc, head }
    };
    let d_pix = v.has_pixel_disc().then(|| image_disc(&mut b, "d_pix", 1));
    let d_feat = v.has_feature_disc().then(|| LogitHead::new(&mut b, "d_feat", cm, d2));
    let d_rev = v.has_pixel_module().then(|| image_disc(&mut b, "d_rev", 3));

    Ok(ModelBundle {
        config: config.clone(),
        store,
        adapter,
        backbone,
        classifier,
        embedder,
        gen_p,
        gen_p_rev,
        d_joint,
        d_pix,
        d_feat,
        d_rev,
    })
}

fn expect_channels(x: &Var, channels: usize, what: &str) -> Result<()> {
    let s = x.shape();
    if s.len() != 4 || s[1] != channels {
        return Err(Error::Input(format!("{what} expects [N, {channels}, H, W], got {s:?}")));
    }
    Ok(())
}

fn missing(module: &str, variant: Variant) -> Error {
    Error::Input(format!("variant {variant} has no {module}"))
}

impl ModelBundle {
    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    fn check_spatial(&self, x: &Var, what: &str) -> Result<()> {
        let s = x.shape();
        let n = self.config.image_size;
        if s.len() != 4 || s[2] != n || s[3] != n {
            return Err(Error::Input(format!("{what} expects {n}x{n} images, got {s:?}")));
        }
        Ok(())
    }

    /// `G_f`: images to `(M, V)` with `V` the spatial mean of `M`.
    ///
    /// Accepts 1-channel images always, and 3-channel images only for
    /// variants with an RGB input adapter.
    pub fn feature_forward<'g>(&self, ctx: &Ctx<'g>, images: Var<'g>) -> Result<(Var<'g>, Var<'g>)> {
        self.check_spatial(&images, "feature_forward")?;
        let x = match (images.shape()[1], &self.adapter) {
            (1, _) => images,
            (3, Some(adapter)) => adapter.forward(ctx, images),
            (c, _) => {
                return Err(Error::Input(format!(
                    "feature_forward: {c}-channel input not accepted by variant {}",
                    self.variant()
                )))
            }
        };
        let m = self.backbone.forward(ctx, x);
        let v = m.spatial_mean();
        Ok((m, v))
    }

    /// RGB images through the input adapter, giving 1-channel backbone input.
    pub fn adapt_rgb<'g>(&self, ctx: &Ctx<'g>, rgb: Var<'g>) -> Result<Var<'g>> {
        let a = self.adapter.as_ref().ok_or_else(|| missing("RGB input adapter", self.variant()))?;
        expect_channels(&rgb, 3, "adapt_rgb")?;
        Ok(a.forward(ctx, rgb))
    }

    /// `G_p`: RGB to fake IR.
    pub fn pixel_forward<'g>(&self, ctx: &Ctx<'g>, rgb: Var<'g>) -> Result<Var<'g>> {
        let g = self.gen_p.as_ref().ok_or_else(|| missing("pixel generator", self.variant()))?;
        expect_channels(&rgb, 3, "pixel_forward")?;
        self.check_spatial(&rgb, "pixel_forward")?;
        Ok(g.forward(ctx, rgb))
    }

    /// `G_p'`: IR to fake RGB.
    pub fn pixel_backward<'g>(&self, ctx: &Ctx<'g>, ir: Var<'g>) -> Result<Var<'g>> {
        let g = self.gen_p_rev.as_ref().ok_or_else(|| missing("reverse pixel generator", self.variant()))?;
        expect_channels(&ir, 1, "pixel_backward")?;
        self.check_spatial(&ir, "pixel_backward")?;
        Ok(g.forward(ctx, ir))
    }

    /// Classifier logits over training identities.
    pub fn classify<'g>(&self, ctx: &Ctx<'g>, v: Var<'g>) -> Var<'g> {
        let c = &self.classifier;
        let h = c.bn.forward(ctx, c.fc1.forward(ctx, v));
        let h = dropout(ctx, h, c.dropout).relu();
        c.fc2.forward(ctx, h)
    }

    pub fn embed<'g>(&self, ctx: &Ctx<'g>, v: Var<'g>) -> Var<'g> {
        self.embedder.forward(ctx, v)
    }

    fn check_map(&self, m: &Var, what: &str) -> Result<()> {
        let s = m.shape();
        if s.len() != 4 || s[1..] != self.config.map_shape() {
            return Err(Error::Input(format!("{what} expects feature maps {:?}, got {s:?}", self.config.map_shape())));
        }
        Ok(())
    }

    /// Image branch of `D_j`, computed once per distinct image.
    pub fn joint_encode<'g>(&self, ctx: &Ctx<'g>, images: Var<'g>) -> Result<Var<'g>> {
        let d = self.d_joint.as_ref().ok_or_else(|| missing("joint discriminator", self.variant()))?;
        expect_channels(&images, 1, "joint discriminator")?;
        self.check_spatial(&images, "joint discriminator")?;
        Ok(d.enc.forward(ctx, images))
    }

    /// `D_j` logits for pairs `(codes[image_idx[k]], maps[map_idx[k]])`.
    pub fn joint_logits<'g>(
        &self,
        ctx: &Ctx<'g>,
        codes: Var<'g>,
        maps: Var<'g>,
        image_idx: &[usize],
        map_idx: &[usize],
    ) -> Result<Var<'g>> {
        let d = self.d_joint.as_ref().ok_or_else(|| missing("joint discriminator", self.variant()))?;
        self.check_map(&maps, "joint discriminator")?;
        if image_idx.len() != map_idx.len() {
            return Err(Error::Input("joint discriminator: pair index lengths differ".into()));
        }
        let x = codes.select_rows(image_idx).concat_channels(maps.select_rows(map_idx));
        Ok(d.head.forward(ctx, x))
    }

    /// `D_j(x, m)` for index-aligned pairs, as probabilities.
    pub fn joint_discriminate<'g>(&self, ctx: &Ctx<'g>, images: Var<'g>, maps: Var<'g>) -> Result<Var<'g>> {
        let n = images.shape()[0];
        if maps.shape()[0] != n {
            return Err(Error::Input(format!("joint discriminator: {n} images but {} maps", maps.shape()[0])));
        }
        let codes = self.joint_encode(ctx, images)?;
        let idx: Vec<usize> = (0..n).collect();
        Ok(self.joint_logits(ctx, codes, maps, &idx, &idx)?.sigmoid())
    }

    /// `D_p` logits on 1-channel images.
    pub fn pixel_disc_logits<'g>(&self, ctx: &Ctx<'g>, images: Var<'g>) -> Result<Var<'g>> {
        let d = self.d_pix.as_ref().ok_or_else(|| missing("pixel discriminator", self.variant()))?;
        expect_channels(&images, 1, "pixel discriminator")?;
        Ok(d.head.forward(ctx, d.enc.forward(ctx, images)))
    }

    /// `D_f` logits on feature maps.
    pub fn feature_disc_logits<'g>(&self, ctx: &Ctx<'g>, maps: Var<'g>) -> Result<Var<'g>> {
        let d = self.d_feat.as_ref().ok_or_else(|| missing("feature discriminator", self.variant()))?;
        self.check_map(&maps, "feature discriminator")?;
        Ok(d.forward(ctx, maps))
    }

    /// Reverse-direction discriminator on 3-channel images (trains `G_p'`).
    pub fn reverse_disc_logits<'g>(&self, ctx: &Ctx<'g>, images: Var<'g>) -> Result<Var<'g>> {
        let d = self.d_rev.as_ref().ok_or_else(|| missing("reverse discriminator", self.variant()))?;
        expect_channels(&images, 3, "reverse discriminator")?;
        Ok(d.head.forward(ctx, d.enc.forward(ctx, images)))
    }

    /// Inference-mode `(M, V)` for a batch tensor.
    pub fn infer_features(&self, images: &Tensor) -> Result<(Tensor, Tensor)> {
        let g = Graph::new();
        let ctx = Ctx::eval(&g, &self.store);
        let (m, v) = self.feature_forward(&ctx, g.constant(images.clone()))?;
        Ok(((*m.value()).clone(), (*v.value()).clone()))
    }

    /// Inference-mode `G_p`.
    pub fn infer_fake_ir(&self, rgb: &Tensor) -> Result<Tensor> {
        let g = Graph::new();
        let ctx = Ctx::eval(&g, &self.store);
        Ok((*self.pixel_forward(&ctx, g.constant(rgb.clone()))?.value()).clone())
    }

    /// Inference-mode `G_p'`.
    pub fn infer_fake_rgb(&self, ir: &Tensor) -> Result<Tensor> {
        let g = Graph::new();
        let ctx = Ctx::eval(&g, &self.store);
        Ok((*self.pixel_backward(&ctx, g.constant(ir.clone()))?.value()).clone())
    }

    /// Names of the parameter arrays that exist in this bundle.
    pub fn param_names(&self) -> Vec<&str> {
        self.store.entries().iter().map(|e| e.name.as_str()).collect()
    }
}
