use std::collections::BTreeSet;

use super::*;
use crate::syndata::{build_dataset, DataConfig};

fn dataset() -> Dataset {
    build_dataset(&DataConfig::default(), 3).unwrap()
}

fn shape(p: usize, k: usize) -> PkShape {
    PkShape { p, k_rgb: k, k_ir: k }
}

#[test]
fn batch_arithmetic() {
    let ds = dataset();
    let b = pk_batch_stream(&ds, shape(4, 4), 1).unwrap().next_batch();
    assert_eq!(b.rgb.len() + b.ir.len(), 32);
    assert_eq!(b.identities.iter().collect::<BTreeSet<_>>().len(), 4);
    let paper = pk_batch_stream(&ds, shape(18, 4), 1).unwrap().next_batch();
    assert_eq!(paper.rgb.len() + paper.ir.len(), 144);
    assert_eq!(shape(18, 4).batch_len(), 144);
}

#[test]
fn batches_respect_identity_and_modality() {
    let ds = dataset();
    let mut stream = pk_batch_stream(&ds, shape(8, 4), 2).unwrap();
    for _ in 0..20 {
        let b = stream.next_batch();
        for (rows, ids, modality) in [(&b.rgb, b.rgb_ids(), Modality::Rgb), (&b.ir, b.ir_ids(), Modality::Ir)] {
            assert_eq!(rows.iter().collect::<BTreeSet<_>>().len(), rows.len(), "no repeats");
            for (&row, id) in rows.iter().zip(ids) {
                let rec = &ds.manifest.samples[row];
                assert_eq!(rec.identity_id, id);
                assert_eq!(rec.modality, modality);
                assert_eq!(rec.split, Split::Train);
            }
        }
    }
}

#[test]
fn equal_seeds_give_equal_streams() {
    let ds = dataset();
    let a: Vec<_> = pk_batch_stream(&ds, shape(8, 4), 5).unwrap().take(12).collect();
    let b: Vec<_> = pk_batch_stream(&ds, shape(8, 4), 5).unwrap().take(12).collect();
    let c: Vec<_> = pk_batch_stream(&ds, shape(8, 4), 6).unwrap().take(12).collect();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn restored_state_continues_identically() {
    let ds = dataset();
    let mut a = pk_batch_stream(&ds, shape(8, 4), 5).unwrap();
    for _ in 0..7 {
        a.next_batch();
    }
    let saved: PkState = serde_json::from_str(&serde_json::to_string(a.state()).unwrap()).unwrap();
    let mut b = pk_batch_stream(&ds, shape(8, 4), 5).unwrap();
    b.restore(saved);
    for _ in 0..9 {
        assert_eq!(a.next_batch(), b.next_batch());
    }
}

#[test]
fn each_epoch_uses_every_identity_once() {
    let ds = dataset();
    let mut stream = pk_batch_stream(&ds, shape(8, 2), 9).unwrap();
    for _ in 0..3 {
        let mut seen = Vec::new();
        for _ in 0..5 {
            seen.extend(stream.next_batch().identities);
        }
        let unique: BTreeSet<_> = seen.iter().collect();
        assert_eq!(unique.len(), 40);
        assert_eq!(seen.len(), 40);
    }
}

#[test]
fn insufficient_samples_name_the_identity() {
    let ds = dataset();
    match pk_batch_stream(&ds, shape(4, 13), 1) {
        Err(Error::Dataset(msg)) => {
            let first = ds.manifest.train_identity_ids.iter().next().unwrap();
            assert!(msg.contains(&format!("identity {first}")), "{msg}");
        }
        other => panic!("expected dataset error, got {other:?}"),
    }
}

#[test]
fn single_identity_batch_cannot_form_pairs() {
    let b = PkBatch {
        identities: vec![3],
        rgb: vec![0, 1],
        ir: vec![2, 3],
        shape: PkShape { p: 1, k_rgb: 2, k_ir: 2 },
    };
    let mut rng = seed::rng(0, "t", 0);
    let counts = PairCounts { per_fake_kind: 2 };
    assert!(matches!(build_discriminator_pairs(&b, counts, &mut rng), Err(Error::BatchComposition(_))));
}

#[test]
fn discriminator_pair_counts() {
    let ds = dataset();
    let b = pk_batch_stream(&ds, shape(4, 4), 1).unwrap().next_batch();
    let mut rng = seed::rng(0, "t", 0);
    let pairs = build_discriminator_pairs(&b, PairCounts { per_fake_kind: 5 }, &mut rng).unwrap();
    let real = pairs.iter().filter(|p| p.label == PairLabel::Real).count();
    let fake = pairs.iter().filter(|p| p.label == PairLabel::Fake).count();
    assert_eq!((real, fake), (20, 20));
    let diff = pairs.iter().filter(|p| p.category == PairCategory::RrDiff).count();
    assert_eq!(diff, 5);
}

#[test]
fn generator_pairs_follow_their_composition() {
    let ds = dataset();
    let b = pk_batch_stream(&ds, shape(4, 4), 1).unwrap().next_batch();
    let mut rng = seed::rng(0, "t", 0);
    let pix = build_generator_pairs(&b, GeneratorTarget::Pixel, 6, &mut rng).unwrap();
    assert_eq!(pix.len(), 12);
    assert!(pix.iter().all(|p| !p.image.is_real()));
    let feat = build_generator_pairs(&b, GeneratorTarget::Feature, 6, &mut rng).unwrap();
    assert!(feat.iter().all(|p| !p.feature_map.is_real()));
    for p in pix.iter().chain(&feat) {
        assert_eq!(p.image.identity(&b), p.feature_map.identity(&b));
    }
}
