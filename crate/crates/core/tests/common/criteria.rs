//! The property checks behind the acceptance report, shared with the
//! per-module integration tests. Each returns a one-line summary or the
//! first violation found.

use alignreid::autograd::{Graph, Var};
use alignreid::evaluator::{cmc_curve, mean_average_precision};
use alignreid::losses::{
    classification_loss, cycle_loss, discriminator_loss, gan_loss, pair_label, triplet_loss, Labeled, Mining,
    PairCategory, PairLabel,
};
use alignreid::nets::ParamGroup;
use alignreid::sampling::{
    build_discriminator_pairs, build_generator_pairs, pk_batch_stream, GeneratorTarget, Member, PairCounts, PkBatch,
    PkShape,
};
use alignreid::seed;
use alignreid::syndata::{build_dataset, DataConfig, Dataset};
use alignreid::tensor::Tensor;
use alignreid::trainer::{SubStep, TrainConfig, Trainer};
use rand::Rng;
use std::time::Instant;

use super::*;

pub type Outcome = std::result::Result<String, String>;

pub fn metric_oracles() -> Outcome {
    let t0 = Instant::now();
    let mut r = rng(11);
    for case in 0..200 {
        let s = random_scores(&mut r);
        let max_rank = s.gallery_ids.len().min(20);
        let cmc = cmc_curve(&s, max_rank).map_err(|e| e.to_string())?;
        if cmc != cmc_oracle(&s, max_rank) {
            return Err(format!("case {case}: CMC {cmc:?} vs oracle {:?}", cmc_oracle(&s, max_rank)));
        }
        let map = mean_average_precision(&s).map_err(|e| e.to_string())?;
        if map != map_oracle(&s) {
            return Err(format!("case {case}: mAP {map} vs oracle {}", map_oracle(&s)));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs >= 10.0 {
        return Err(format!("took {secs:.1} s"));
    }
    Ok(format!("200 score matrices exact, {secs:.2} s"))
}

fn ids(r: &mut ChaCha8Rng, n: usize, classes: u32) -> Vec<u32> {
    (0..n).map(|_| r.random_range(0..classes)).collect()
}

/// Ids where every anchor id has a positive and a negative in the other sets.
fn triplet_ids(r: &mut ChaCha8Rng, n: usize) -> (Vec<u32>, Vec<u32>, Vec<u32>) {
    loop {
        let (a, p, m) = (ids(r, n, 3), ids(r, n + 1, 3), ids(r, n + 2, 3));
        if a.iter().all(|i| p.contains(i) && m.iter().any(|j| j != i)) {
            return (a, p, m);
        }
    }
}

fn lab<'g, 'a>(g: &'g Graph, t: &Tensor, ids: &'a [u32]) -> Labeled<'g, 'a> {
    Labeled {
        emb: g.constant(t.clone()),
        ids,
    }
}

fn check_rel(what: &str, case: usize, got: f64, want: f64, tol: f64) -> std::result::Result<(), String> {
    let e = rel_err(got, want);
    if e < tol {
        Ok(())
    } else {
        Err(format!("{what} case {case}: {got} vs oracle {want} (rel {e:.2e})"))
    }
}

pub fn loss_oracles() -> Outcome {
    let mut r = rng(12);
    for case in 0..50 {
        let g = Graph::new();
        let n = r.random_range(1..8);
        let c = r.random_range(2..7);
        let logits = normal_tensor(&mut r, &[n, c], 4.0);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let got = classification_loss(g.constant(logits.clone()), &labels).map_err(|e| e.to_string())?.item();
        check_rel("classification", case, got, cross_entropy_oracle(&logits, &labels), 1e-10)?;
    }
    for case in 0..50 {
        let g = Graph::new();
        let n = r.random_range(2..7);
        let d = r.random_range(2..6);
        let (ia, ip, inn) = triplet_ids(&mut r, n);
        let a = normal_tensor(&mut r, &[ia.len(), d], 1.0);
        let p = normal_tensor(&mut r, &[ip.len(), d], 1.0);
        let m = normal_tensor(&mut r, &[inn.len(), d], 1.0);
        let margin = r.random_range(0.0..1.5);
        let got = triplet_loss(lab(&g, &a, &ia), lab(&g, &p, &ip), lab(&g, &m, &inn), margin, Mining::BatchAll)
            .map_err(|e| e.to_string())?
            .item();
        check_rel("triplet", case, got, triplet_all_oracle(&a, &ia, &p, &ip, &m, &inn, margin), 1e-10)?;
        let hard = triplet_loss(lab(&g, &a, &ia), lab(&g, &p, &ip), lab(&g, &m, &inn), margin, Mining::BatchHard)
            .map_err(|e| e.to_string())?
            .item();
        check_rel("batch-hard triplet", case, hard, triplet_hard_oracle(&a, &ia, &p, &ip, &m, &inn, margin), 1e-10)?;
    }
    for case in 0..50 {
        let g = Graph::new();
        let shape_rgb = [r.random_range(1..4), 3, 4, 4];
        let shape_ir = [r.random_range(1..4), 1, 4, 4];
        let x = normal_tensor(&mut r, &shape_rgb, 1.0);
        let xr = normal_tensor(&mut r, &shape_rgb, 1.0);
        let y = normal_tensor(&mut r, &shape_ir, 1.0);
        let yr = normal_tensor(&mut r, &shape_ir, 1.0);
        let got = cycle_loss(g.constant(x.clone()), g.constant(xr.clone()), g.constant(y.clone()), g.constant(yr.clone()))
            .map_err(|e| e.to_string())?
            .item();
        check_rel("cycle", case, got, l1_oracle(&xr, &x) + l1_oracle(&yr, &y), 1e-10)?;
    }
    for case in 0..50 {
        let g = Graph::new();
        let (nr, nf) = (r.random_range(1..10), r.random_range(1..10));
        let real = normal_tensor(&mut r, &[nr], 6.0);
        let fake = normal_tensor(&mut r, &[nf], 6.0);
        let (lr, lf, lt) =
            discriminator_loss(g.constant(real.clone()), g.constant(fake.clone())).map_err(|e| e.to_string())?;
        let (or, of) = discriminator_oracle(real.data(), fake.data());
        check_rel("discriminator real", case, lr.item(), or, 1e-10)?;
        check_rel("discriminator fake", case, lf.item(), of, 1e-10)?;
        check_rel("discriminator total", case, lt.item(), or + of, 1e-10)?;
    }
    for case in 0..50 {
        let g = Graph::new();
        let n = r.random_range(1..10);
        let logits = normal_tensor(&mut r, &[n], 6.0);
        let got = gan_loss(g.constant(logits.clone())).map_err(|e| e.to_string())?.item();
        check_rel("generator", case, got, generator_oracle(logits.data()), 1e-10)?;
    }
    Ok("5 losses x 50 batches within 1e-10".into())
}

/// Largest relative error between backprop and central differences of
/// `loss(params)` over every parameter tensor.
pub fn gradient_error<F>(params: &[Tensor], loss: F) -> f64
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Var<'g>,
{
    let g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.variable(p.clone())).collect();
    let grads = g.backward(loss(&g, &vars));
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(params[i].shape()));
        let numeric = numeric_grad(&params[i], 1e-4, |probe| {
            let g = Graph::new();
            let vs: Vec<Var> = params
                .iter()
                .enumerate()
                .map(|(j, p)| g.constant(if i == j { probe.clone() } else { p.clone() }))
                .collect();
            loss(&g, &vs).item()
        });
        worst = worst.max(grad_rel_err(&analytic, &numeric));
    }
    worst
}

fn probe<'g>(x: Var<'g>, w: Var<'g>, b: Var<'g>) -> Var<'g> {
    x.linear(w, b).tanh()
}

fn probe_value(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (n, din, dout) = (x.dim(0), x.dim(1), w.dim(0));
    Tensor::from_fn(&[n, dout], |k| {
        let (i, o) = (k / dout, k % dout);
        let z: f64 = (0..din).map(|j| x.data()[i * din + j] * w.data()[o * din + j]).sum::<f64>() + b.data()[o];
        z.tanh()
    })
}

pub fn gradient_checks() -> Outcome {
    let t0 = Instant::now();
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, e: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(w) => w.1 = w.1.max(e),
        None => worst.push((name, e)),
    };
    let mut largest = 0usize;
    for s in 0..10u64 {
        let mut r = rng(100 + s);
        let x = normal_tensor(&mut r, &[6, 5], 1.0);
        let params = [normal_tensor(&mut r, &[4, 5], 0.7), normal_tensor(&mut r, &[4], 0.3)];
        largest = largest.max(params.iter().map(|p| p.len()).sum());
        let labels: Vec<usize> = (0..6).map(|_| r.random_range(0..4)).collect();
        record(
            "classification",
            gradient_error(&params, |g, p| {
                classification_loss(g.constant(x.clone()).linear(p[0], p[1]).scale(3.0), &labels).unwrap()
            }),
        );

        let (ia, ip, inn) = triplet_ids(&mut r, 4);
        let xa = normal_tensor(&mut r, &[ia.len(), 5], 1.0);
        let xp = normal_tensor(&mut r, &[ip.len(), 5], 1.0);
        let xn = normal_tensor(&mut r, &[inn.len(), 5], 1.0);
        // the hinge has a kink at zero; keep every argument clear of it
        let params = loop {
            let params = [normal_tensor(&mut r, &[4, 5], 0.7), normal_tensor(&mut r, &[4], 0.3)];
            let emb = |x: &Tensor| probe_value(x, &params[0], &params[1]);
            if hinge_gap(&emb(&xa), &ia, &emb(&xp), &ip, &emb(&xn), &inn, 1.0) > 1e-2 {
                break params;
            }
        };
        for (name, mining) in [("triplet batch-all", Mining::BatchAll), ("triplet batch-hard", Mining::BatchHard)] {
            record(
                name,
                gradient_error(&params, |g, p| {
                    let emb = |t: &Tensor| probe(g.constant(t.clone()), p[0], p[1]);
                    let (a, pos, neg) = (emb(&xa), emb(&xp), emb(&xn));
                    triplet_loss(
                        Labeled { emb: a, ids: &ia },
                        Labeled { emb: pos, ids: &ip },
                        Labeled { emb: neg, ids: &inn },
                        1.0,
                        mining,
                    )
                    .unwrap()
                }),
            );
        }

        // G: 6 -> 4 and G': 4 -> 6, applied to flat "images"
        let xr = normal_tensor(&mut r, &[3, 6], 1.0);
        let xi = normal_tensor(&mut r, &[3, 4], 1.0);
        let params = [
            normal_tensor(&mut r, &[4, 6], 0.7),
            normal_tensor(&mut r, &[4], 0.3),
            normal_tensor(&mut r, &[6, 4], 0.7),
            normal_tensor(&mut r, &[6], 0.3),
        ];
        largest = largest.max(params.iter().map(|p| p.len()).sum());
        record(
            "cycle",
            gradient_error(&params, |g, p| {
                let (x, y) = (g.constant(xr.clone()), g.constant(xi.clone()));
                let rgb_trip = probe(probe(x, p[0], p[1]), p[2], p[3]);
                let ir_trip = probe(probe(y, p[2], p[3]), p[0], p[1]);
                cycle_loss(x, rgb_trip, y, ir_trip).unwrap()
            }),
        );

        let real = normal_tensor(&mut r, &[5, 4], 1.0);
        let fake = normal_tensor(&mut r, &[7, 4], 1.0);
        let d_params = [normal_tensor(&mut r, &[1, 4], 1.0), normal_tensor(&mut r, &[1], 0.3)];
        record(
            "discriminator",
            gradient_error(&d_params, |g, p| {
                let logits = |t: &Tensor| g.constant(t.clone()).linear(p[0], p[1]).reshape(&[t.dim(0)]);
                discriminator_loss(logits(&real), logits(&fake)).unwrap().2
            }),
        );

        // generator params feed a fixed discriminator
        let z = normal_tensor(&mut r, &[6, 5], 1.0);
        let g_params = [normal_tensor(&mut r, &[4, 5], 0.7), normal_tensor(&mut r, &[4], 0.3)];
        let (dw, db) = (d_params[0].clone(), d_params[1].clone());
        record(
            "generator",
            gradient_error(&g_params, |g, p| {
                let fake = probe(g.constant(z.clone()), p[0], p[1]);
                gan_loss(fake.linear(g.constant(dw.clone()), g.constant(db.clone())).reshape(&[6])).unwrap()
            }),
        );
    }
    let secs = t0.elapsed().as_secs_f64();
    if let Some((name, e)) = worst.iter().find(|(_, e)| !(*e < 1e-3)) {
        return Err(format!("{name}: relative error {e:.2e}"));
    }
    if largest > 500 {
        return Err(format!("probe network has {largest} parameters"));
    }
    if secs >= 120.0 {
        return Err(format!("took {secs:.1} s"));
    }
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    Ok(format!("{} losses x 10 seeds, worst relative error {max:.1e}, {secs:.2} s", worst.len()))
}

/// Expected label per `(image_is_real, feature_is_real, same_identity)`.
pub const PAIR_TABLE: [((bool, bool, bool), PairLabel); 8] = [
    ((true, true, true), PairLabel::Real),
    ((true, true, false), PairLabel::Fake),
    ((true, false, true), PairLabel::Fake),
    ((false, true, true), PairLabel::Fake),
    ((false, false, true), PairLabel::Fake),
    ((true, false, false), PairLabel::Unsampled),
    ((false, true, false), PairLabel::Unsampled),
    ((false, false, false), PairLabel::Unsampled),
];

fn table_label(sig: (bool, bool, bool)) -> PairLabel {
    PAIR_TABLE.iter().find(|(s, _)| *s == sig).expect("all signatures listed").1
}

/// Identity of a pair member looked up through the dataset, not the batch layout.
fn member_identity(data: &Dataset, batch: &PkBatch, m: Member) -> u32 {
    match m {
        Member::Real(i) => data.manifest.samples[batch.ir[i]].identity_id,
        Member::Fake(i) => data.manifest.samples[batch.rgb[i]].identity_id,
    }
}

pub fn pair_taxonomy() -> Outcome {
    for (sig, want) in PAIR_TABLE {
        let got = pair_label(sig.0, sig.1, sig.2);
        if got != want {
            return Err(format!("pair_label{sig:?} = {got:?}, table says {want:?}"));
        }
    }
    let data = build_dataset(&DataConfig::default(), 3).map_err(|e| e.to_string())?;
    let shape = PkShape { p: 8, k_rgb: 4, k_ir: 4 };
    let mut stream = pk_batch_stream(&data, shape, 5).map_err(|e| e.to_string())?;
    let (mut batches, mut audited) = (0usize, 0usize);
    loop {
        let batch = stream.next_batch();
        if stream.state().epoch > 1 {
            break;
        }
        batches += 1;
        let mut r = seed::rng(5, "audit", batches as u64);
        let mut pairs = build_discriminator_pairs(&batch, PairCounts { per_fake_kind: 8 }, &mut r).map_err(|e| e.to_string())?;
        for target in [GeneratorTarget::Pixel, GeneratorTarget::Feature] {
            pairs.extend(build_generator_pairs(&batch, target, 8, &mut r).map_err(|e| e.to_string())?);
        }
        for pair in &pairs {
            let same = member_identity(&data, &batch, pair.image) == member_identity(&data, &batch, pair.feature_map);
            let sig = (pair.image.is_real(), pair.feature_map.is_real(), same);
            let want = table_label(sig);
            if pair.label == PairLabel::Unsampled || want == PairLabel::Unsampled {
                return Err(format!("batch {batches}: UNSAMPLED pair emitted {pair:?}"));
            }
            if pair.label != want {
                return Err(format!("batch {batches}: {pair:?} should be {want:?}"));
            }
            if pair.category == PairCategory::RrSame && pair.image == pair.feature_map {
                return Err(format!("batch {batches}: REAL pair reuses one instance {pair:?}"));
            }
            audited += 1;
        }
    }
    Ok(format!("8 signatures match, {audited} pairs over a {batches}-batch epoch correct"))
}

pub fn partition_invariant(data: &Dataset, cfg: TrainConfig) -> Outcome {
    let steps = cfg.total_iters;
    let mut t = Trainer::new(cfg, data).map_err(|e| e.to_string())?;
    let sums = |t: &alignreid::nets::ParamStore| ParamGroup::ALL.map(|g| t.group_checksum(g));
    let mut violation = None;
    let mut changed = [false; 4];
    for it in 1..=steps {
        let batch = t.next_batch();
        let mut before = sums(&t.bundle.store);
        t.train_step_observed(&batch, it, &mut |step: SubStep, store| {
            let after = sums(store);
            for (k, g) in ParamGroup::ALL.iter().enumerate() {
                if after[k] != before[k] {
                    changed[k] = true;
                    if !step.groups().contains(g) && violation.is_none() {
                        violation = Some(format!("iteration {it}: {step:?} step changed {g:?}"));
                    }
                }
            }
            before = after;
        })
        .map_err(|e| e.to_string())?;
    }
    if let Some(v) = violation {
        return Err(v);
    }
    let moved = changed.iter().filter(|c| **c).count();
    Ok(format!("{steps} steps, every sub-step changed only its own groups ({moved}/4 groups updated)"))
}
