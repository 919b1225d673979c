//! Retrieval evaluation: IR probes against an RGB gallery, ranked by cosine
//! similarity of pooled feature vectors.
//!
//! Ranking is by descending score with ties broken by ascending gallery
//! index. Gallery draws for repeat `r` use the stream
//! `seed::rng(seed, "gallery", r)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::ModelBundle;
use crate::seed;
use crate::syndata::{grayscale, Dataset, Modality, Sample, Split};
use crate::tensor::Tensor;

const CHUNK: usize = 64;

/// Pooled feature vectors `V` for `samples`, row-aligned.
///
/// IR images go straight through `G_f`. RGB images go through `G_p` first
/// when the model has a pixel module, otherwise through its RGB input adapter.
pub fn extract_features(bundle: &ModelBundle, samples: &[&Sample]) -> Result<Tensor> {
    let c = bundle.config.feature_channels;
    let mut out = vec![0.0; samples.len() * c];
    for modality in [Modality::Ir, Modality::Rgb] {
        let rows: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].modality == modality).collect();
        for chunk in rows.chunks(CHUNK) {
            let images: Vec<&Tensor> = chunk.iter().map(|&i| &samples[i].image).collect();
            let batch = Tensor::stack(&images);
            let input = match modality {
                Modality::Ir => batch,
                Modality::Rgb if bundle.variant().has_pixel_module() => bundle.infer_fake_ir(&batch)?,
                Modality::Rgb if bundle.variant().has_rgb_adapter() => batch,
                Modality::Rgb => {
                    return Err(Error::config("variant", format!("{} has no RGB feature path", bundle.variant())))
                }
            };
            let (_, v) = bundle.infer_features(&input)?;
            for (k, &i) in chunk.iter().enumerate() {
                out[i * c..(i + 1) * c].copy_from_slice(v.row(k));
            }
        }
    }
    Ok(Tensor::new(vec![samples.len(), c], out))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    /// `[n_query, n_gallery]` row-major.
    pub scores: Vec<f64>,
    pub query_ids: Vec<u32>,
    pub gallery_ids: Vec<u32>,
    pub query_cams: Vec<u32>,
    pub gallery_cams: Vec<u32>,
}

impl ScoreMatrix {
    pub fn n_query(&self) -> usize {
        self.query_ids.len()
    }

    pub fn n_gallery(&self) -> usize {
        self.gallery_ids.len()
    }

    pub fn row(&self, q: usize) -> &[f64] {
        let n = self.n_gallery();
        &self.scores[q * n..(q + 1) * n]
    }

    /// Gallery indices of query `q` in rank order.
    pub fn ranking(&self, q: usize) -> Vec<usize> {
        let row = self.row(q);
        let mut order: Vec<usize> = (0..row.len()).collect();
        // stable sort keeps ascending index among equal scores
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        order
    }

    fn check(&self) -> Result<()> {
        for q in 0..self.n_query() {
            if !self.gallery_ids.contains(&self.query_ids[q]) {
                return Err(Error::Protocol(format!(
                    "query {q} (identity {}) has no relevant gallery item",
                    self.query_ids[q]
                )));
            }
        }
        Ok(())
    }
}

fn unit_rows(x: &Tensor, what: &str) -> Result<Vec<Vec<f64>>> {
    let d = x.row_len();
    x.data()
        .chunks(d)
        .map(|r| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                Err(Error::Numeric(format!("{what}: zero-norm feature vector")))
            } else {
                Ok(r.iter().map(|v| v / n).collect())
            }
        })
        .collect()
}

/// Cosine similarities between query and gallery feature rows.
pub fn cosine_scores(
    query: &Tensor,
    query_ids: &[u32],
    query_cams: &[u32],
    gallery: &Tensor,
    gallery_ids: &[u32],
    gallery_cams: &[u32],
) -> Result<ScoreMatrix> {
    let q = unit_rows(query, "query")?;
    let g = unit_rows(gallery, "gallery")?;
    let mut scores = Vec::with_capacity(q.len() * g.len());
    for a in &q {
        for b in &g {
            let s: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            scores.push(s.clamp(-1.0, 1.0));
        }
    }
    Ok(ScoreMatrix {
        scores,
        query_ids: query_ids.to_vec(),
        gallery_ids: gallery_ids.to_vec(),
        query_cams: query_cams.to_vec(),
        gallery_cams: gallery_cams.to_vec(),
    })
}

/// `cmc[k]`: fraction of queries with a same-identity item in their top `k + 1`.
pub fn cmc_curve(s: &ScoreMatrix, max_rank: usize) -> Result<Vec<f64>> {
    s.check()?;
    let mut hits = vec![0usize; max_rank];
    for q in 0..s.n_query() {
        let first = s
            .ranking(q)
            .iter()
            .position(|&g| s.gallery_ids[g] == s.query_ids[q])
            .expect("checked above");
        for h in hits.iter_mut().skip(first) {
            *h += 1;
        }
    }
    Ok(hits.iter().map(|&h| h as f64 / s.n_query() as f64).collect())
}

/// Mean over queries of the average precision of the ranked gallery.
pub fn mean_average_precision(s: &ScoreMatrix) -> Result<f64> {
    s.check()?;
    let mut total = 0.0;
    for q in 0..s.n_query() {
        let mut found = 0usize;
        let mut ap = 0.0;
        for (rank, &g) in s.ranking(q).iter().enumerate() {
            if s.gallery_ids[g] == s.query_ids[q] {
                found += 1;
                ap += found as f64 / (rank + 1) as f64;
            }
        }
        total += ap / found as f64;
    }
    Ok(total / s.n_query() as f64)
}

fn pair_mean(a: &[Vec<f64>], ids_a: &[u32], b: &[Vec<f64>], ids_b: &[u32], skip_diagonal: bool) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, (x, ia)) in a.iter().zip(ids_a).enumerate() {
        for (j, (y, ib)) in b.iter().zip(ids_b).enumerate() {
            if ia == ib && !(skip_diagonal && i == j) {
                sum += x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Protocol("ICCS: no same-identity pair".into()));
    }
    Ok(sum / count as f64)
}

/// Intra-class cosine similarity: mean cosine over all `(i, j)` with `ids_a[i] == ids_b[j]`.
pub fn iccs(a: &Tensor, ids_a: &[u32], b: &Tensor, ids_b: &[u32]) -> Result<f64> {
    pair_mean(&unit_rows(a, "iccs")?, ids_a, &unit_rows(b, "iccs")?, ids_b, false)
}

/// ICCS of a collection with itself, excluding self-pairs.
pub fn iccs_within(a: &Tensor, ids: &[u32]) -> Result<f64> {
    let u = unit_rows(a, "iccs")?;
    pair_mean(&u, ids, &u, ids, true)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    AllSearch,
    IndoorSearch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shots {
    Single,
    Multi,
}

impl Shots {
    pub fn per_identity(self) -> usize {
        match self {
            Shots::Single => 1,
            Shots::Multi => 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub mode: SearchMode,
    pub shots: Shots,
    pub repeats: usize,
    pub max_rank: usize,
    pub seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            mode: SearchMode::AllSearch,
            shots: Shots::Single,
            repeats: 10,
            max_rank: 20,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub gallery_size: usize,
    /// Images drawn per identity (fewer than requested when the pool is small).
    pub per_identity: Vec<usize>,
    pub cmc: Vec<f64>,
    pub map: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: EvalProtocol,
    pub cmc: Vec<f64>,
    pub map: f64,
    /// `rgb2rgb`, `ir2ir`, `ir2rgb`, `rgb2ir`
    pub iccs: BTreeMap<String, f64>,
    pub per_repeat: Vec<RepeatResult>,
}

impl EvalReport {
    /// CMC at 1-based rank `k` (clamped to the curve length).
    pub fn rank(&self, k: usize) -> f64 {
        self.cmc[k.clamp(1, self.cmc.len()) - 1]
    }

    /// Mean within-modality minus cross-modality ICCS.
    pub fn iccs_gap(&self) -> f64 {
        let within = (self.iccs["rgb2rgb"] + self.iccs["ir2ir"]) / 2.0;
        let cross = (self.iccs["ir2rgb"] + self.iccs["rgb2ir"]) / 2.0;
        within - cross
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let mode = match self.protocol.mode {
            SearchMode::AllSearch => "all-search",
            SearchMode::IndoorSearch => "indoor-search",
        };
        let shots = match self.protocol.shots {
            Shots::Single => "single-shot",
            Shots::Multi => "multi-shot",
        };
        let _ = writeln!(s, "{mode} {shots}, {} repeats", self.protocol.repeats);
        let _ = writeln!(s, "{:>8} {:>8} {:>8} {:>8}", "R1", "R10", "R20", "mAP");
        let _ = writeln!(
            s,
            "{:>8.2} {:>8.2} {:>8.2} {:>8.2}",
            100.0 * self.rank(1),
            100.0 * self.rank(10),
            100.0 * self.rank(20),
            100.0 * self.map
        );
        let _ = writeln!(s, "ICCS");
        for (k, v) in &self.iccs {
            let _ = writeln!(s, "  {k:<8} {v:.4}");
        }
        s
    }
}

/// Run the retrieval protocol on the test split.
pub fn evaluate_protocol(bundle: &ModelBundle, dataset: &Dataset, protocol: &EvalProtocol) -> Result<EvalReport> {
    if protocol.repeats == 0 || protocol.max_rank == 0 {
        return Err(Error::config("repeats", "repeats and max_rank must be positive"));
    }
    let test: Vec<_> = dataset.split_samples(Split::Test).collect();
    if test.is_empty() {
        return Err(Error::Protocol("test split is empty".into()));
    }
    let allowed = |cam: u32| {
        protocol.mode == SearchMode::AllSearch || dataset.manifest.camera(cam).map(|c| c.indoor).unwrap_or(false)
    };
    if protocol.mode == SearchMode::IndoorSearch && !dataset.manifest.cameras.iter().any(|c| c.indoor) {
        return Err(Error::Protocol("indoor search without indoor cameras".into()));
    }
    let samples: Vec<&Sample> = test.iter().map(|(_, s)| *s).collect();
    let feats = extract_features(bundle, &samples)?;

    let rows_of = |m: Modality| -> Vec<usize> { (0..samples.len()).filter(|&i| samples[i].modality == m).collect() };
    let ir_rows = rows_of(Modality::Ir);
    let rgb_rows = rows_of(Modality::Rgb);
    let probe_rows: Vec<usize> = ir_rows.iter().copied().filter(|&i| allowed(samples[i].camera_id)).collect();
    let mut pools: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for &i in &rgb_rows {
        if allowed(samples[i].camera_id) {
            pools.entry(samples[i].identity_id).or_default().push(i);
        }
    }
    for &i in &probe_rows {
        if !pools.contains_key(&samples[i].identity_id) {
            return Err(Error::Protocol(format!(
                "identity {} has no RGB gallery images in the allowed cameras",
                samples[i].identity_id
            )));
        }
    }
    if probe_rows.is_empty() {
        return Err(Error::Protocol("no IR probe images".into()));
    }

    let ids = |rows: &[usize]| rows.iter().map(|&i| samples[i].identity_id).collect::<Vec<_>>();
    let cams = |rows: &[usize]| rows.iter().map(|&i| samples[i].camera_id).collect::<Vec<_>>();
    let probe = feats.select_rows(&probe_rows);
    let mut per_repeat = Vec::with_capacity(protocol.repeats);
    for r in 0..protocol.repeats {
        let mut rng = seed::rng(protocol.seed, "gallery", r as u64);
        let mut gallery_rows = Vec::new();
        let mut per_identity = Vec::new();
        for pool in pools.values() {
            let take = protocol.shots.per_identity().min(pool.len());
            let mut chosen: Vec<usize> = pool.choose_multiple(&mut rng, take).copied().collect();
            chosen.shuffle(&mut rng);
            per_identity.push(chosen.len());
            gallery_rows.extend(chosen);
        }
        let scores = cosine_scores(
            &probe,
            &ids(&probe_rows),
            &cams(&probe_rows),
            &feats.select_rows(&gallery_rows),
            &ids(&gallery_rows),
            &cams(&gallery_rows),
        )?;
        per_repeat.push(RepeatResult {
            gallery_size: gallery_rows.len(),
            per_identity,
            cmc: cmc_curve(&scores, protocol.max_rank)?,
            map: mean_average_precision(&scores)?,
        });
    }
    let n = per_repeat.len() as f64;
    let cmc = (0..protocol.max_rank)
        .map(|k| per_repeat.iter().map(|r| r.cmc[k]).sum::<f64>() / n)
        .collect();
    let map = per_repeat.iter().map(|r| r.map).sum::<f64>() / n;

    let ir = feats.select_rows(&ir_rows);
    let rgb = feats.select_rows(&rgb_rows);
    let (ir_ids, rgb_ids) = (ids(&ir_rows), ids(&rgb_rows));
    let mut iccs_by = BTreeMap::new();
    iccs_by.insert("rgb2rgb".to_string(), iccs_within(&rgb, &rgb_ids)?);
    iccs_by.insert("ir2ir".to_string(), iccs_within(&ir, &ir_ids)?);
    iccs_by.insert("ir2rgb".to_string(), iccs(&ir, &ir_ids, &rgb, &rgb_ids)?);
    iccs_by.insert("rgb2ir".to_string(), iccs(&rgb, &rgb_ids, &ir, &ir_ids)?);

    Ok(EvalReport {
        protocol: protocol.clone(),
        cmc,
        map,
        iccs: iccs_by,
        per_repeat,
    })
}

/// Exact 1-D Wasserstein-1 distance between two empirical distributions.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Input("wasserstein: empty sample".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("wasserstein: non-finite sample".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    // integrate |F_a - F_b| between consecutive support points
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

/// Translation quality of the pixel module on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelDiagnostics {
    /// `mean|G_p'(G_p(x)) - x|` over RGB plus `mean|G_p(G_p'(y)) - y|` over IR.
    pub cycle_l1: f64,
    /// Intensity W1 from fake IR to real IR.
    pub w1_fake_ir: f64,
    /// Intensity W1 from grayscale RGB to real IR.
    pub w1_grayscale: f64,
}

pub fn pixel_diagnostics(bundle: &ModelBundle, dataset: &Dataset, split: Split) -> Result<PixelDiagnostics> {
    if !bundle.variant().has_pixel_module() {
        return Err(Error::config("variant", format!("{} has no pixel module", bundle.variant())));
    }
    let of = |m: Modality| -> Vec<&Tensor> {
        dataset.split_samples(split).filter(|(r, _)| r.modality == m).map(|(_, s)| &s.image).collect()
    };
    let (rgb, ir) = (of(Modality::Rgb), of(Modality::Ir));
    if rgb.is_empty() || ir.is_empty() {
        return Err(Error::Dataset(format!("{split:?} split lacks one modality")));
    }
    let mean_abs = |x: &Tensor, y: &Tensor| x.zip_map(y, |a, b| (a - b).abs()).mean();
    let (mut rgb_err, mut ir_err) = (0.0, 0.0);
    let mut fake_pixels = Vec::new();
    for chunk in rgb.chunks(CHUNK) {
        let x = Tensor::stack(chunk);
        let fake = bundle.infer_fake_ir(&x)?;
        rgb_err += mean_abs(&bundle.infer_fake_rgb(&fake)?, &x) * chunk.len() as f64;
        fake_pixels.extend_from_slice(fake.data());
    }
    for chunk in ir.chunks(CHUNK) {
        let y = Tensor::stack(chunk);
        ir_err += mean_abs(&bundle.infer_fake_ir(&bundle.infer_fake_rgb(&y)?)?, &y) * chunk.len() as f64;
    }
    let real: Vec<f64> = ir.iter().flat_map(|t| t.data().iter().copied()).collect();
    let gray: Vec<f64> = rgb.iter().flat_map(|t| grayscale(t)).collect();
    Ok(PixelDiagnostics {
        cycle_l1: rgb_err / rgb.len() as f64 + ir_err / ir.len() as f64,
        w1_fake_ir: wasserstein_1d(&fake_pixels, &real)?,
        w1_grayscale: wasserstein_1d(&gray, &real)?,
    })
}
