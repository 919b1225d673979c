#![allow(dead_code)]

pub mod criteria;

use alignreid::evaluator::ScoreMatrix;
use alignreid::nets::Variant;
use alignreid::syndata::{build_dataset, DataConfig, Dataset};
use alignreid::tensor::Tensor;
use alignreid::trainer::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| scale * (rng.random::<f64>() * 2.0 - 1.0))
}

/// Score matrix where every query has at least one relevant gallery item.
/// Scores are quantized so that ties are common.
pub fn random_scores(rng: &mut ChaCha8Rng) -> ScoreMatrix {
    let nq = rng.random_range(1..=20);
    let ng = rng.random_range(1..=50);
    let n_ids = rng.random_range(1..=ng.min(8));
    let mut gallery_ids: Vec<u32> = (0..ng).map(|_| rng.random_range(0..n_ids as u32)).collect();
    gallery_ids[0] = 0;
    let present: Vec<u32> = {
        let mut v = gallery_ids.clone();
        v.sort();
        v.dedup();
        v
    };
    let query_ids = (0..nq).map(|_| present[rng.random_range(0..present.len())]).collect();
    let levels = rng.random_range(2..12) as f64;
    let scores = (0..nq * ng).map(|_| (rng.random::<f64>() * levels).floor() / levels).collect();
    ScoreMatrix {
        scores,
        query_ids,
        gallery_ids,
        query_cams: vec![0; nq],
        gallery_cams: vec![1; ng],
    }
}

/// 1-based position of gallery item `g` for query `q`: one plus the number of
/// items with a higher score or an equal score and lower index.
fn position(s: &ScoreMatrix, q: usize, g: usize) -> usize {
    let row = s.row(q);
    1 + (0..row.len()).filter(|&j| row[j] > row[g] || (row[j] == row[g] && j < g)).count()
}

pub fn cmc_oracle(s: &ScoreMatrix, max_rank: usize) -> Vec<f64> {
    let nq = s.query_ids.len();
    (1..=max_rank)
        .map(|r| {
            let hits = (0..nq)
                .filter(|&q| {
                    (0..s.gallery_ids.len()).any(|g| s.gallery_ids[g] == s.query_ids[q] && position(s, q, g) <= r)
                })
                .count();
            hits as f64 / nq as f64
        })
        .collect()
}

pub fn map_oracle(s: &ScoreMatrix) -> f64 {
    let nq = s.query_ids.len();
    let mut total = 0.0;
    for q in 0..nq {
        let mut positions: Vec<usize> =
            (0..s.gallery_ids.len()).filter(|&g| s.gallery_ids[g] == s.query_ids[q]).map(|g| position(s, q, g)).collect();
        positions.sort();
        let mut ap = 0.0;
        for (k, &pos) in positions.iter().enumerate() {
            ap += (k + 1) as f64 / pos as f64;
        }
        total += ap / positions.len() as f64;
    }
    total / nq as f64
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs().max(1e-300)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn cross_entropy_oracle(logits: &Tensor, labels: &[usize]) -> f64 {
    let c = logits.row_len();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits.data()[i * c..(i + 1) * c];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / labels.len() as f64
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Mean hinge over every `(a, p, n)` with `id(p) = id(a) != id(n)`.
pub fn triplet_all_oracle(
    a: &Tensor,
    ia: &[u32],
    p: &Tensor,
    ip: &[u32],
    n: &Tensor,
    inn: &[u32],
    margin: f64,
) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for x in 0..ia.len() {
        for y in 0..ip.len() {
            for z in 0..inn.len() {
                if ip[y] == ia[x] && inn[z] != ia[x] {
                    let h = margin - cosine(a.row(x), p.row(y)) + cosine(a.row(x), n.row(z));
                    total += h.max(0.0);
                    count += 1;
                }
            }
        }
    }
    total / count as f64
}

/// Per anchor, the largest hinge over its valid `(p, n)` pairs, averaged.
pub fn triplet_hard_oracle(
    a: &Tensor,
    ia: &[u32],
    p: &Tensor,
    ip: &[u32],
    n: &Tensor,
    inn: &[u32],
    margin: f64,
) -> f64 {
    let mut total = 0.0;
    for x in 0..ia.len() {
        let mut worst = f64::NEG_INFINITY;
        for y in (0..ip.len()).filter(|&y| ip[y] == ia[x]) {
            for z in (0..inn.len()).filter(|&z| inn[z] != ia[x]) {
                let h = margin - cosine(a.row(x), p.row(y)) + cosine(a.row(x), n.row(z));
                worst = worst.max(h.max(0.0));
            }
        }
        total += worst;
    }
    total / ia.len() as f64
}

/// Smallest `|m - S(a, p) + S(a, n)|` over valid triplets.
pub fn hinge_gap(a: &Tensor, ia: &[u32], p: &Tensor, ip: &[u32], n: &Tensor, inn: &[u32], margin: f64) -> f64 {
    let mut gap = f64::INFINITY;
    for x in 0..ia.len() {
        for y in (0..ip.len()).filter(|&y| ip[y] == ia[x]) {
            for z in (0..inn.len()).filter(|&z| inn[z] != ia[x]) {
                gap = gap.min((margin - cosine(a.row(x), p.row(y)) + cosine(a.row(x), n.row(z))).abs());
            }
        }
    }
    gap
}

pub fn l1_oracle(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// `(real, fake)` parts of the discriminator BCE: `-log σ(r)` and `-log(1 - σ(f))`.
pub fn discriminator_oracle(real: &[f64], fake: &[f64]) -> (f64, f64) {
    let r = real.iter().map(|&x| softplus(-x)).sum::<f64>() / real.len() as f64;
    let f = fake.iter().map(|&x| softplus(x)).sum::<f64>() / fake.len() as f64;
    (r, f)
}

/// Non-saturating generator loss `-log σ(x)` averaged.
pub fn generator_oracle(logits: &[f64]) -> f64 {
    logits.iter().map(|&x| softplus(-x)).sum::<f64>() / logits.len() as f64
}

/// Central differences of `f` around `x`.
pub fn numeric_grad(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let v = x.data()[i];
        probe.data_mut()[i] = v + h;
        let up = f(&probe);
        probe.data_mut()[i] = v - h;
        let down = f(&probe);
        probe.data_mut()[i] = v;
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    out
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm.
pub fn grad_rel_err(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let norm = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff = analytic.zip_map(numeric, |a, b| a - b);
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn tiny_dataset(seed: u64) -> Dataset {
    build_dataset(
        &DataConfig {
            identities: 10,
            samples_per_camera: 3,
            ..DataConfig::default()
        },
        seed,
    )
    .unwrap()
}

/// Small networks and batches for fast end-to-end checks.
pub fn tiny_config(variant: Variant, total_iters: usize) -> TrainConfig {
    TrainConfig {
        variant,
        total_iters,
        decay_iter: total_iters / 2,
        p: 3,
        k_rgb: 2,
        k_ir: 2,
        pairs_per_kind: 2,
        feature_channels: 8,
        embed_dim: 8,
        classifier_hidden: 8,
        gen_width: 4,
        gen_res_blocks: 1,
        disc_width: 4,
        checkpoint_every: 5,
        ..TrainConfig::default()
    }
}
