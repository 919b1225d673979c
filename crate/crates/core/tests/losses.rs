mod common;

use alignreid::autograd::Graph;
use alignreid::losses::{triplet_loss, Labeled, Mining};
use common::{normal_tensor, rng};

#[test]
fn losses_match_elementwise_oracles() {
    println!("{}", common::criteria::loss_oracles().unwrap());
}

#[test]
fn gradients_match_central_differences() {
    println!("{}", common::criteria::gradient_checks().unwrap());
}

#[test]
fn triplet_ignores_embedding_scale() {
    let mut r = rng(9);
    let ids = [0u32, 0, 1, 1, 2];
    let x = normal_tensor(&mut r, &[5, 4], 1.0);
    let g = Graph::new();
    let at = |k: f64| {
        let e = g.constant(x.map(|v| v * k));
        let l = Labeled { emb: e, ids: &ids };
        triplet_loss(l, l, l, 0.7, Mining::BatchAll).unwrap().item()
    };
    assert!((at(1.0) - at(13.0)).abs() < 1e-12);
}
