//! Identity-balanced batches and the labeled image-feature pairs fed to the
//! joint discriminator.
//!
//! Pairs never copy images or feature maps; they reference rows of the
//! batch's real IR images (and their maps) and of the fake IR images
//! translated from the batch's RGB rows (and their maps).

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{pair_label, PairCategory, PairLabel, PairSignature};
use crate::seed;
use crate::syndata::{Dataset, Modality, Split};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PkShape {
    pub p: usize,
    pub k_rgb: usize,
    pub k_ir: usize,
}

impl PkShape {
    pub fn batch_len(&self) -> usize {
        self.p * (self.k_rgb + self.k_ir)
    }
}

/// `P` identities with `K_rgb` RGB and `K_ir` IR rows each, identity-major.
///
/// `rgb[i * k_rgb + k]` and `ir[i * k_ir + k]` belong to `identities[i]`;
/// entries are indices into `Dataset::samples`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PkBatch {
    pub identities: Vec<u32>,
    pub rgb: Vec<usize>,
    pub ir: Vec<usize>,
    pub shape: PkShape,
}

impl PkBatch {
    pub fn rgb_ids(&self) -> Vec<u32> {
        self.identities.iter().flat_map(|&id| std::iter::repeat_n(id, self.shape.k_rgb)).collect()
    }

    pub fn ir_ids(&self) -> Vec<u32> {
        self.identities.iter().flat_map(|&id| std::iter::repeat_n(id, self.shape.k_ir)).collect()
    }
}

/// Resumable position of a [`PkStream`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PkState {
    pub rng: ChaCha8Rng,
    pub order: Vec<u32>,
    pub cursor: usize,
    pub epoch: usize,
}

/// Deterministic endless sequence of [`PkBatch`]es.
///
/// Each epoch is a fresh seeded permutation of the train identities consumed
/// `P` at a time; a remainder shorter than `P` is dropped, so within an epoch
/// every identity appears at most once.
#[derive(Clone, Debug)]
pub struct PkStream {
    shape: PkShape,
    pools: BTreeMap<u32, (Vec<usize>, Vec<usize>)>,
    state: PkState,
}

pub fn pk_batch_stream(dataset: &Dataset, shape: PkShape, seed: u64) -> Result<PkStream> {
    if shape.p < 2 {
        return Err(Error::config("p", "need at least 2 identities per batch"));
    }
    if shape.k_rgb == 0 || shape.k_ir == 0 {
        return Err(Error::config("k_rgb", "need at least one sample per modality"));
    }
    let mut pools: BTreeMap<u32, (Vec<usize>, Vec<usize>)> = dataset
        .manifest
        .train_identity_ids
        .iter()
        .map(|&id| (id, (Vec::new(), Vec::new())))
        .collect();
    for (i, rec) in dataset.manifest.samples.iter().enumerate() {
        if rec.split != Split::Train {
            continue;
        }
        let entry = pools
            .get_mut(&rec.identity_id)
            .ok_or_else(|| Error::Dataset(format!("train sample {} of non-train identity", rec.sample_id)))?;
        match rec.modality {
            Modality::Rgb => entry.0.push(i),
            Modality::Ir => entry.1.push(i),
        }
    }
    for (id, (rgb, ir)) in &pools {
        if rgb.len() < shape.k_rgb || ir.len() < shape.k_ir {
            return Err(Error::Dataset(format!(
                "identity {id} has {} RGB and {} IR train samples, need {} and {}",
                rgb.len(),
                ir.len(),
                shape.k_rgb,
                shape.k_ir
            )));
        }
    }
    if pools.len() < shape.p {
        return Err(Error::Dataset(format!("{} train identities, batch needs {}", pools.len(), shape.p)));
    }
    let state = PkState {
        rng: seed::rng(seed, "pk", 0),
        order: Vec::new(),
        cursor: 0,
        epoch: 0,
    };
    Ok(PkStream { shape, pools, state })
}

impl PkStream {
    pub fn shape(&self) -> PkShape {
        self.shape
    }

    pub fn state(&self) -> &PkState {
        &self.state
    }

    pub fn restore(&mut self, state: PkState) {
        self.state = state;
    }

    pub fn next_batch(&mut self) -> PkBatch {
        let p = self.shape.p;
        let st = &mut self.state;
        if st.order.is_empty() || st.cursor + p > st.order.len() {
            st.order = self.pools.keys().copied().collect();
            st.order.shuffle(&mut st.rng);
            st.cursor = 0;
            st.epoch += 1;
        }
        let identities = st.order[st.cursor..st.cursor + p].to_vec();
        st.cursor += p;
        let mut rgb = Vec::with_capacity(p * self.shape.k_rgb);
        let mut ir = Vec::with_capacity(p * self.shape.k_ir);
        for id in &identities {
            let (rp, ip) = &self.pools[id];
            rgb.extend(rp.choose_multiple(&mut st.rng, self.shape.k_rgb));
            ir.extend(ip.choose_multiple(&mut st.rng, self.shape.k_ir));
        }
        PkBatch {
            identities,
            rgb,
            ir,
            shape: self.shape,
        }
    }
}

impl Iterator for PkStream {
    type Item = PkBatch;

    fn next(&mut self) -> Option<PkBatch> {
        Some(self.next_batch())
    }
}

/// Row `i` of the batch's real IR images, or of the fake IR images made from RGB row `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Member {
    Real(usize),
    Fake(usize),
}

impl Member {
    pub fn is_real(self) -> bool {
        matches!(self, Member::Real(_))
    }

    pub fn identity(self, batch: &PkBatch) -> u32 {
        match self {
            Member::Real(i) => batch.identities[i / batch.shape.k_ir],
            Member::Fake(i) => batch.identities[i / batch.shape.k_rgb],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub image: Member,
    pub feature_map: Member,
    pub identity_id: u32,
    pub label: PairLabel,
    pub category: PairCategory,
}

impl LabeledPair {
    fn new(batch: &PkBatch, image: Member, feature_map: Member, category: PairCategory) -> Result<Self> {
        let sig = (image.is_real(), feature_map.is_real(), image.identity(batch) == feature_map.identity(batch));
        if !category.signatures().contains(&sig) {
            return Err(Error::PairTaxonomy(format!("{category:?} pair with signature {sig:?}")));
        }
        Ok(LabeledPair {
            image,
            feature_map,
            identity_id: image.identity(batch),
            label: pair_label(sig.0, sig.1, sig.2),
            category,
        })
    }

    pub fn signature(&self, batch: &PkBatch) -> PairSignature {
        (
            self.image.is_real(),
            self.feature_map.is_real(),
            self.image.identity(batch) == self.feature_map.identity(batch),
        )
    }
}

/// Pairs drawn per FAKE sub-kind; REAL pairs number four times this.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub per_fake_kind: usize,
}

impl PairCounts {
    pub fn real(&self) -> usize {
        4 * self.per_fake_kind
    }
}

struct Picker<'a> {
    batch: &'a PkBatch,
    rng: &'a mut ChaCha8Rng,
}

impl Picker<'_> {
    fn real(&mut self) -> Member {
        Member::Real(self.rng.random_range(0..self.batch.ir.len()))
    }

    fn fake(&mut self) -> Member {
        Member::Fake(self.rng.random_range(0..self.batch.rgb.len()))
    }

    /// Another row of the same kind and identity; the row itself when it is the only one.
    fn sibling(&mut self, of: Member) -> Member {
        let s = self.batch.shape;
        let (i, k) = match of {
            Member::Real(i) => (i, s.k_ir),
            Member::Fake(i) => (i, s.k_rgb),
        };
        let j = if k == 1 {
            i
        } else {
            let base = i / k * k;
            let off = self.rng.random_range(0..k - 1);
            base + if off >= i - base { off + 1 } else { off }
        };
        match of {
            Member::Real(_) => Member::Real(j),
            Member::Fake(_) => Member::Fake(j),
        }
    }

    /// A row of the given kind with the same identity as `of`.
    fn same_identity(&mut self, of: Member, real: bool) -> Member {
        let s = self.batch.shape;
        let slot = self.batch.identities.iter().position(|&id| id == of.identity(self.batch)).unwrap();
        if real {
            Member::Real(slot * s.k_ir + self.rng.random_range(0..s.k_ir))
        } else {
            Member::Fake(slot * s.k_rgb + self.rng.random_range(0..s.k_rgb))
        }
    }

    fn other_identity_real(&mut self, of: Member) -> Member {
        let s = self.batch.shape;
        let slot = self.batch.identities.iter().position(|&id| id == of.identity(self.batch)).unwrap();
        let p = self.batch.identities.len();
        let off = self.rng.random_range(0..p - 1);
        let other = if off >= slot { off + 1 } else { off };
        Member::Real(other * s.k_ir + self.rng.random_range(0..s.k_ir))
    }
}

fn check_batch(batch: &PkBatch) -> Result<()> {
    let s = batch.shape;
    if batch.identities.len() < 2 {
        return Err(Error::BatchComposition("different-identity pairs need at least 2 identities".into()));
    }
    if s.k_ir < 2 {
        return Err(Error::BatchComposition("REAL pairs need 2 IR instances per identity".into()));
    }
    if batch.ir.len() != batch.identities.len() * s.k_ir || batch.rgb.len() != batch.identities.len() * s.k_rgb {
        return Err(Error::BatchComposition("batch rows do not match its PK shape".into()));
    }
    Ok(())
}

/// REAL pairs plus the four FAKE sub-kinds (three fake-member kinds and
/// real-real different identity), in that order.
pub fn build_discriminator_pairs(batch: &PkBatch, counts: PairCounts, rng: &mut ChaCha8Rng) -> Result<Vec<LabeledPair>> {
    check_batch(batch)?;
    let mut pick = Picker { batch, rng };
    let c = counts.per_fake_kind;
    let mut out = Vec::with_capacity(8 * c);
    for _ in 0..counts.real() {
        let x = pick.real();
        let m = pick.sibling(x);
        out.push(LabeledPair::new(batch, x, m, PairCategory::RrSame)?);
    }
    for _ in 0..c {
        let x = pick.fake();
        let m = pick.same_identity(x, true);
        out.push(LabeledPair::new(batch, x, m, PairCategory::FakeMemberSame)?);
    }
    for _ in 0..c {
        let x = pick.real();
        let m = pick.same_identity(x, false);
        out.push(LabeledPair::new(batch, x, m, PairCategory::FakeMemberSame)?);
    }
    for _ in 0..c {
        let x = pick.fake();
        let m = pick.sibling(x);
        out.push(LabeledPair::new(batch, x, m, PairCategory::FakeMemberSame)?);
    }
    for _ in 0..c {
        let x = pick.real();
        let m = pick.other_identity_real(x);
        out.push(LabeledPair::new(batch, x, m, PairCategory::RrDiff)?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorTarget {
    Pixel,
    Feature,
}

/// Same-identity pairs for one generator's GAN term, `per_kind` of each of its two kinds.
pub fn build_generator_pairs(
    batch: &PkBatch,
    target: GeneratorTarget,
    per_kind: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LabeledPair>> {
    check_batch(batch)?;
    let mut pick = Picker { batch, rng };
    let mut out = Vec::with_capacity(2 * per_kind);
    match target {
        GeneratorTarget::Pixel => {
            for _ in 0..per_kind {
                let x = pick.fake();
                let m = pick.same_identity(x, true);
                out.push(LabeledPair::new(batch, x, m, PairCategory::GenPixFakeImgRealFeat)?);
            }
            for _ in 0..per_kind {
                let x = pick.fake();
                let m = pick.sibling(x);
                out.push(LabeledPair::new(batch, x, m, PairCategory::GenPixFakeImgFakeFeat)?);
            }
        }
        GeneratorTarget::Feature => {
            for _ in 0..per_kind {
                let x = pick.real();
                let m = pick.same_identity(x, false);
                out.push(LabeledPair::new(batch, x, m, PairCategory::GenFeatRealImgFakeFeat)?);
            }
            for _ in 0..per_kind {
                let x = pick.fake();
                let m = pick.sibling(x);
                out.push(LabeledPair::new(batch, x, m, PairCategory::GenFeatFakeImgFakeFeat)?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
