//! Training objectives.
//!
//! Adversarial terms use the binary cross-entropy convention on logits: the
//! discriminator minimises `-log D(real) - log(1 - D(fake))` and generators
//! minimise the non-saturating `-log D(fake)`. Triplet terms compare
//! embeddings by cosine similarity, `[m - S(a, p) + S(a, n)]_+`.

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_cyc: f64,
    pub lambda_id_pix: f64,
    pub lambda_gan_feat: f64,
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_cyc: 10.0,
            lambda_id_pix: 1.0,
            lambda_gan_feat: 0.1,
            margin: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("lambda_cyc", self.lambda_cyc),
            ("lambda_id_pix", self.lambda_id_pix),
            ("lambda_gan_feat", self.lambda_gan_feat),
            ("margin", self.margin),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(field, "must be finite and nonnegative"));
            }
        }
        Ok(())
    }

    /// `gan + lambda_cyc * cyc + lambda_id_pix * (cls + tri)`
    pub fn pixel_total(&self, gan: f64, cyc: f64, cls: f64, tri: f64) -> f64 {
        gan + self.lambda_cyc * cyc + self.lambda_id_pix * (cls + tri)
    }

    /// `cls + tri + lambda_gan_feat * gan`
    pub fn feature_total(&self, cls: f64, tri: f64, gan: f64) -> f64 {
        cls + tri + self.lambda_gan_feat * gan
    }
}

/// Scalar value of every objective term for one iteration.
///
/// `l_gan_rev` and `l_d_rev` belong to the reverse translator `G_p'` and its
/// image discriminator; they are optimised alongside but kept out of the totals.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: usize,
    pub l_gan_pix: f64,
    pub l_cyc: f64,
    pub l_cls_pix: f64,
    pub l_tri_pix: f64,
    pub l_pix_total: f64,
    pub l_cls_feat: f64,
    pub l_tri_feat: f64,
    pub l_gan_feat: f64,
    pub l_feat_total: f64,
    pub l_d_real: f64,
    pub l_d_fake: f64,
    pub l_d_total: f64,
    pub l_gan_rev: f64,
    pub l_d_rev: f64,
}

impl LossReport {
    pub fn terms(&self) -> [(&'static str, f64); 14] {
        [
            ("l_gan_pix", self.l_gan_pix),
            ("l_cyc", self.l_cyc),
            ("l_cls_pix", self.l_cls_pix),
            ("l_tri_pix", self.l_tri_pix),
            ("l_pix_total", self.l_pix_total),
            ("l_cls_feat", self.l_cls_feat),
            ("l_tri_feat", self.l_tri_feat),
            ("l_gan_feat", self.l_gan_feat),
            ("l_feat_total", self.l_feat_total),
            ("l_d_real", self.l_d_real),
            ("l_d_fake", self.l_d_fake),
            ("l_d_total", self.l_d_total),
            ("l_gan_rev", self.l_gan_rev),
            ("l_d_rev", self.l_d_rev),
        ]
    }

    /// Largest relative violation of the three weighted-sum identities.
    pub fn total_identity_error(&self, w: &LossWeights) -> f64 {
        let rel = |total: f64, expect: f64| (total - expect).abs() / expect.abs().max(1e-300).max(1.0);
        rel(self.l_pix_total, w.pixel_total(self.l_gan_pix, self.l_cyc, self.l_cls_pix, self.l_tri_pix))
            .max(rel(self.l_feat_total, w.feature_total(self.l_cls_feat, self.l_tri_feat, self.l_gan_feat)))
            .max(rel(self.l_d_total, self.l_d_real + self.l_d_fake))
    }
}

/// Mean of `-log softmax(logits)[label]` over rows.
pub fn classification_loss<'g>(logits: Var<'g>, labels: &[usize]) -> Result<Var<'g>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() || labels.is_empty() {
        return Err(Error::Input(format!("classification: {} labels for logits {shape:?}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= shape[1]) {
        return Err(Error::Input(format!("classification: label {bad} out of range for {} classes", shape[1])));
    }
    if !logits.value().all_finite() {
        return Err(Error::Numeric("classification: non-finite logits".into()));
    }
    Ok(logits.cross_entropy(labels))
}

/// `<a, b> / (|a| |b|)`; zero-norm inputs are rejected.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Input(format!("cosine: lengths {} and {}", a.len(), b.len())));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numeric("cosine similarity of a zero-norm vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mining {
    /// Mean over every valid `(a, p, n)`.
    BatchAll,
    /// Per anchor: least similar positive and most similar negative.
    #[default]
    BatchHard,
}

/// An embedding batch `[N, d]` with one identity per row.
#[derive(Clone, Copy)]
pub struct Labeled<'g, 'a> {
    pub emb: Var<'g>,
    pub ids: &'a [u32],
}

fn unit_rows<'g>(x: Labeled<'g, '_>, what: &str) -> Result<Var<'g>> {
    let s = x.emb.shape();
    if s.len() != 2 || s[0] != x.ids.len() {
        return Err(Error::Input(format!("triplet {what}: {} ids for embeddings {s:?}", x.ids.len())));
    }
    let v = x.emb.value();
    if v.data().chunks(s[1]).any(|r| r.iter().all(|&e| e == 0.0)) {
        return Err(Error::Numeric(format!("triplet {what}: zero-norm embedding")));
    }
    Ok(x.emb.l2_normalize_rows())
}

/// Triplet loss with anchors from `anchors`, positives from `positives` (same
/// identity) and negatives from `negatives` (different identity).
pub fn triplet_loss<'g>(
    anchors: Labeled<'g, '_>,
    positives: Labeled<'g, '_>,
    negatives: Labeled<'g, '_>,
    margin: f64,
    mining: Mining,
) -> Result<Var<'g>> {
    let a = unit_rows(anchors, "anchors")?;
    let p = unit_rows(positives, "positives")?;
    let n = unit_rows(negatives, "negatives")?;
    let (np, nn) = (positives.ids.len(), negatives.ids.len());
    let sp = a.matmul_nt(p).reshape(&[anchors.ids.len() * np]);
    let sn = a.matmul_nt(n).reshape(&[anchors.ids.len() * nn]);
    let spv = sp.value();
    let snv = sn.value();
    let mut pos_idx = Vec::new();
    let mut neg_idx = Vec::new();
    for (i, &id) in anchors.ids.iter().enumerate() {
        let ps: Vec<usize> = (0..np).filter(|&j| positives.ids[j] == id).map(|j| i * np + j).collect();
        let ns: Vec<usize> = (0..nn).filter(|&k| negatives.ids[k] != id).map(|k| i * nn + k).collect();
        if ps.is_empty() || ns.is_empty() {
            return Err(Error::Sampling(format!(
                "triplet anchor {i} (identity {id}) has {} positives and {} negatives",
                ps.len(),
                ns.len()
            )));
        }
        match mining {
            Mining::BatchAll => {
                for &pj in &ps {
                    for &nk in &ns {
                        pos_idx.push(pj);
                        neg_idx.push(nk);
                    }
                }
            }
            Mining::BatchHard => {
                // first index wins ties, keeping the choice deterministic
                let hardest_p = *ps.iter().min_by(|x, y| spv.data()[**x].total_cmp(&spv.data()[**y])).unwrap();
                let hardest_n =
                    *ns.iter().rev().max_by(|x, y| snv.data()[**x].total_cmp(&snv.data()[**y])).unwrap();
                pos_idx.push(hardest_p);
                neg_idx.push(hardest_n);
            }
        }
    }
    Ok(sn.take(&neg_idx).sub(sp.take(&pos_idx)).add_scalar(margin).relu().mean())
}

/// `(L_cls_pix, L_tri_pix)` from fake-IR logits/embeddings and real-IR embeddings.
///
/// `L_tri_pix = (L_tri(fake, real, real) + L_tri(real, fake, fake)) / 2`.
pub fn pixel_identity_losses<'g>(
    fake_logits: Var<'g>,
    fake_labels: &[usize],
    fake: Labeled<'g, '_>,
    real: Labeled<'g, '_>,
    margin: f64,
    mining: Mining,
) -> Result<(Var<'g>, Var<'g>)> {
    let cls = classification_loss(fake_logits, fake_labels)?;
    let t1 = triplet_loss(fake, real, real, margin, mining)?;
    let t2 = triplet_loss(real, fake, fake, margin, mining)?;
    Ok((cls, t1.add(t2).scale(0.5)))
}

/// `(L_cls_feat, L_tri_feat)` over the union of real and fake IR.
///
/// `L_tri_feat = L_tri(real, fake, fake) + L_tri(fake, real, real)`.
pub fn feature_identity_losses<'g>(
    logits: Var<'g>,
    labels: &[usize],
    real: Labeled<'g, '_>,
    fake: Labeled<'g, '_>,
    margin: f64,
    mining: Mining,
) -> Result<(Var<'g>, Var<'g>)> {
    let cls = classification_loss(logits, labels)?;
    let t1 = triplet_loss(real, fake, fake, margin, mining)?;
    let t2 = triplet_loss(fake, real, real, margin, mining)?;
    Ok((cls, t1.add(t2)))
}

/// Mean absolute error of a tensor against its reconstruction.
pub fn mean_l1<'g>(reconstructed: Var<'g>, original: Var<'g>) -> Result<Var<'g>> {
    if reconstructed.shape() != original.shape() {
        return Err(Error::Input(format!(
            "l1: shapes {:?} and {:?}",
            reconstructed.shape(),
            original.shape()
        )));
    }
    Ok(reconstructed.sub(original).abs().mean())
}

/// `mean|G_p'(G_p(x_rgb)) - x_rgb| + mean|G_p(G_p'(x_ir)) - x_ir|` given both round trips.
pub fn cycle_loss<'g>(
    x_rgb: Var<'g>,
    rgb_round_trip: Var<'g>,
    x_ir: Var<'g>,
    ir_round_trip: Var<'g>,
) -> Result<Var<'g>> {
    Ok(mean_l1(rgb_round_trip, x_rgb)?.add(mean_l1(ir_round_trip, x_ir)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLabel {
    Real,
    Fake,
    Unsampled,
}

/// Label of an image-feature pair from its real/fake members and identity match.
pub fn pair_label(image_is_real: bool, feature_is_real: bool, same_identity: bool) -> PairLabel {
    match (image_is_real && feature_is_real, same_identity) {
        (true, true) => PairLabel::Real,
        (true, false) => PairLabel::Fake,
        (false, true) => PairLabel::Fake,
        (false, false) => PairLabel::Unsampled,
    }
}

/// Where a labeled pair came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairCategory {
    /// Real image, real map of another instance, same identity.
    RrSame,
    /// Same identity, at least one fake member.
    FakeMemberSame,
    /// Real image, real map, different identities.
    RrDiff,
    GenPixFakeImgRealFeat,
    GenPixFakeImgFakeFeat,
    GenFeatRealImgFakeFeat,
    GenFeatFakeImgFakeFeat,
}

/// `(image_is_real, feature_is_real, same_identity)`
pub type PairSignature = (bool, bool, bool);

impl PairCategory {
    /// Signatures a pair of this category may carry.
    pub fn signatures(self) -> &'static [PairSignature] {
        match self {
            PairCategory::RrSame => &[(true, true, true)],
            PairCategory::FakeMemberSame => &[(false, true, true), (true, false, true), (false, false, true)],
            PairCategory::RrDiff => &[(true, true, false)],
            PairCategory::GenPixFakeImgRealFeat => &[(false, true, true)],
            PairCategory::GenPixFakeImgFakeFeat => &[(false, false, true)],
            PairCategory::GenFeatRealImgFakeFeat => &[(true, false, true)],
            PairCategory::GenFeatFakeImgFakeFeat => &[(false, false, true)],
        }
    }

    pub fn is_pixel_generator(self) -> bool {
        matches!(self, PairCategory::GenPixFakeImgRealFeat | PairCategory::GenPixFakeImgFakeFeat)
    }

    pub fn is_feature_generator(self) -> bool {
        matches!(self, PairCategory::GenFeatRealImgFakeFeat | PairCategory::GenFeatFakeImgFakeFeat)
    }
}

/// `(L_D_real, L_D_fake, L_D_total)` from discriminator logits on REAL and FAKE pairs.
pub fn discriminator_loss<'g>(real_logits: Var<'g>, fake_logits: Var<'g>) -> Result<(Var<'g>, Var<'g>, Var<'g>)> {
    if real_logits.value().is_empty() || fake_logits.value().is_empty() {
        return Err(Error::BatchComposition("discriminator loss needs REAL and FAKE pairs".into()));
    }
    let real = real_logits.neg().softplus().mean();
    let fake = fake_logits.softplus().mean();
    Ok((real, fake, real.add(fake)))
}

/// Non-saturating generator loss `mean(-log D)` on logits.
pub fn gan_loss(logits: Var<'_>) -> Result<Var<'_>> {
    if logits.value().is_empty() {
        return Err(Error::BatchComposition("generator loss over an empty pair set".into()));
    }
    Ok(logits.neg().softplus().mean())
}

fn check_categories(
    logits: &Var,
    categories: &[PairCategory],
    allowed: fn(PairCategory) -> bool,
    what: &str,
) -> Result<()> {
    if logits.shape() != [categories.len()] {
        return Err(Error::Input(format!("{what} GAN loss: {} categories for logits {:?}", categories.len(), logits.shape())));
    }
    if let Some(bad) = categories.iter().find(|c| !allowed(**c)) {
        return Err(Error::PairTaxonomy(format!("{what} GAN loss got a {bad:?} pair")));
    }
    Ok(())
}

/// Pixel-module GAN loss over `(fake image, real map)` and `(fake image, fake map)` pairs.
pub fn gan_loss_pix<'g>(logits: Var<'g>, categories: &[PairCategory]) -> Result<Var<'g>> {
    check_categories(&logits, categories, PairCategory::is_pixel_generator, "pixel")?;
    gan_loss(logits)
}

/// Feature-module GAN loss over `(real image, fake map)` and `(fake image, fake map)` pairs.
pub fn gan_loss_feat<'g>(logits: Var<'g>, categories: &[PairCategory]) -> Result<Var<'g>> {
    check_categories(&logits, categories, PairCategory::is_feature_generator, "feature")?;
    gan_loss(logits)
}

#[cfg(test)]
mod tests;
