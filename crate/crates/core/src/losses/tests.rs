use super::*;
use crate::autograd::Graph;
use crate::tensor::Tensor;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

#[test]
fn classification_trivial_cases() {
    let g = Graph::new();
    let mut z = vec![0.0; 2 * 40];
    z[3] = 1000.0;
    z[40 + 7] = 1000.0;
    let perfect = classification_loss(g.constant(Tensor::new(vec![2, 40], z)), &[3, 7]).unwrap();
    assert_eq!(perfect.item(), 0.0);
    let uniform = classification_loss(g.constant(Tensor::full(&[5, 40], 0.3)), &[0, 1, 2, 3, 39]).unwrap();
    assert!(close(uniform.item(), 40f64.ln(), 1e-12));
    assert!((uniform.item() - 3.6889).abs() < 1e-4);
    assert!(matches!(
        classification_loss(g.constant(Tensor::zeros(&[1, 4])), &[4]),
        Err(Error::Input(_))
    ));
}

#[test]
fn cosine_trivial_cases() {
    let x = [0.3, -1.2, 2.0, 0.5];
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    let triple: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
    assert!(close(cosine_similarity(&x, &x).unwrap(), 1.0, 1e-15));
    assert!(close(cosine_similarity(&x, &neg).unwrap(), -1.0, 1e-15));
    assert!(close(cosine_similarity(&x, &triple).unwrap(), 1.0, 1e-15));
    assert!(matches!(cosine_similarity(&x, &[0.0; 4]), Err(Error::Numeric(_))));
}

fn labeled<'g, 'a>(g: &'g Graph, rows: &[Vec<f64>], ids: &'a [u32]) -> Labeled<'g, 'a> {
    let d = rows[0].len();
    let data = rows.iter().flatten().copied().collect();
    Labeled {
        emb: g.constant(Tensor::new(vec![rows.len(), d], data)),
        ids,
    }
}

#[test]
fn triplet_trivial_cases() {
    let g = Graph::new();
    let ids = [0, 0, 1, 1];
    let same = vec![vec![1.0, 2.0, 3.0]; 4];
    let x = labeled(&g, &same, &ids);
    for mining in [Mining::BatchAll, Mining::BatchHard] {
        assert!(close(triplet_loss(x, x, x, 1.0, mining).unwrap().item(), 1.0, 1e-12));
    }
    let sep = vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![-1.0, 0.0], vec![-3.0, 0.0]];
    let y = labeled(&g, &sep, &ids);
    for mining in [Mining::BatchAll, Mining::BatchHard] {
        assert_eq!(triplet_loss(y, y, y, 1.0, mining).unwrap().item(), 0.0);
    }
}

#[test]
fn triplet_without_positive_is_a_sampling_error() {
    let g = Graph::new();
    let rows = vec![vec![1.0, 0.5], vec![0.2, 1.0]];
    let a = labeled(&g, &rows, &[0, 1]);
    let p = labeled(&g, &rows, &[1, 1]);
    assert!(matches!(triplet_loss(a, p, a, 1.0, Mining::BatchHard), Err(Error::Sampling(_))));
    let n = labeled(&g, &rows, &[0, 0]);
    let a0 = labeled(&g, &rows, &[0, 0]);
    assert!(matches!(triplet_loss(a0, a0, n, 1.0, Mining::BatchAll), Err(Error::Sampling(_))));
}

#[test]
fn triplet_rejects_zero_norm() {
    let g = Graph::new();
    let rows = vec![vec![0.0, 0.0], vec![0.2, 1.0]];
    let x = labeled(&g, &rows, &[0, 1]);
    assert!(matches!(triplet_loss(x, x, x, 1.0, Mining::BatchAll), Err(Error::Numeric(_))));
}

#[test]
fn pixel_identity_trivial_cases() {
    let g = Graph::new();
    let ids = [0, 1];
    let labels = [0, 1];
    let logits = g.constant(Tensor::new(vec![2, 2], vec![800.0, 0.0, 0.0, 800.0]));
    let rows = vec![vec![1.0, 1.0], vec![-1.0, -1.0]];
    let fake = labeled(&g, &rows, &ids);
    let real = labeled(&g, &rows, &ids);
    let (cls, tri) = pixel_identity_losses(logits, &labels, fake, real, 1.0, Mining::BatchHard).unwrap();
    assert_eq!(cls.item(), 0.0);
    assert_eq!(tri.item(), 0.0);
}

#[test]
fn cycle_trivial_cases() {
    let g = Graph::new();
    let rgb = Tensor::from_fn(&[2, 3, 4, 4], |i| (i as f64 * 0.37).sin());
    let ir = Tensor::from_fn(&[2, 1, 4, 4], |i| (i as f64 * 0.11).cos());
    let x_rgb = g.constant(rgb.clone());
    let x_ir = g.constant(ir.clone());
    assert_eq!(cycle_loss(x_rgb, x_rgb, x_ir, x_ir).unwrap().item(), 0.0);
    let shifted = g.constant(rgb.map(|v| v + 0.5));
    let first = mean_l1(shifted, x_rgb).unwrap().item();
    assert!(close(first, 0.5, 1e-12));
    assert!(close(cycle_loss(x_rgb, shifted, x_ir, x_ir).unwrap().item(), 0.5, 1e-12));
}

#[test]
fn pair_label_table() {
    use PairLabel::*;
    let table = [
        ((true, true, true), Real),
        ((true, true, false), Fake),
        ((false, true, true), Fake),
        ((true, false, true), Fake),
        ((false, false, true), Fake),
        ((false, true, false), Unsampled),
        ((true, false, false), Unsampled),
        ((false, false, false), Unsampled),
    ];
    for ((i, f, s), expected) in table {
        assert_eq!(pair_label(i, f, s), expected, "{i} {f} {s}");
    }
}

#[test]
fn discriminator_trivial_cases() {
    let g = Graph::new();
    let zero = g.constant(Tensor::zeros(&[6]));
    let (_, _, total) = discriminator_loss(zero, zero).unwrap();
    assert!(close(total.item(), 2.0 * 2f64.ln(), 1e-14));
    let sure_real = g.constant(Tensor::full(&[3], 60.0));
    let sure_fake = g.constant(Tensor::full(&[3], -60.0));
    let (_, _, total) = discriminator_loss(sure_real, sure_fake).unwrap();
    assert!(total.item() < 1e-20);
    let empty = g.constant(Tensor::zeros(&[0]));
    assert!(matches!(discriminator_loss(empty, zero), Err(Error::BatchComposition(_))));
}

#[test]
fn generator_trivial_cases() {
    let g = Graph::new();
    let cats = [PairCategory::GenPixFakeImgRealFeat, PairCategory::GenPixFakeImgFakeFeat];
    let fooled = g.constant(Tensor::full(&[2], 60.0));
    assert!(gan_loss_pix(fooled, &cats).unwrap().item() < 1e-20);
    let half = g.constant(Tensor::zeros(&[2]));
    assert!(close(gan_loss_pix(half, &cats).unwrap().item(), 2f64.ln(), 1e-14));
    assert!(matches!(gan_loss_feat(half, &cats), Err(Error::PairTaxonomy(_))));
    let feat = [PairCategory::GenFeatRealImgFakeFeat, PairCategory::RrSame];
    assert!(matches!(gan_loss_feat(half, &feat), Err(Error::PairTaxonomy(_))));
}

#[test]
fn totals_are_weighted_sums() {
    let w = LossWeights::default();
    assert_eq!(w.pixel_total(1.0, 2.0, 3.0, 4.0), 28.0);
    assert!(close(w.feature_total(1.0, 2.0, 3.0), 3.3, 1e-15));
    let pix = LossWeights {
        lambda_gan_feat: 0.0,
        ..w.clone()
    };
    assert_eq!(pix.feature_total(1.0, 2.0, 3.0), 3.0);
    assert!(matches!(
        LossWeights { margin: -1.0, ..w }.validate(),
        Err(Error::Config { field, .. }) if field == "margin"
    ));
}
