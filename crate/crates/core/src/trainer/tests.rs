use super::*;
use crate::syndata::{build_dataset, DataConfig};

fn tiny_data() -> Dataset {
    build_dataset(
        &DataConfig {
            identities: 10,
            samples_per_camera: 3,
            ..DataConfig::default()
        },
        1,
    )
    .unwrap()
}

fn tiny_config(variant: Variant) -> TrainConfig {
    TrainConfig {
        variant,
        total_iters: 4,
        decay_iter: 2,
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
        ..TrainConfig::default()
    }
}

#[test]
fn learning_rate_decays_after_decay_iter() {
    let c = TrainConfig::default();
    assert_eq!(c.lr_at(0.2, c.decay_iter), 0.2);
    assert!((c.lr_at(0.2, c.decay_iter + 1) - 0.02).abs() < 1e-15);
}

#[test]
fn overrides_parse_json_or_strings() {
    let mut c = TrainConfig::default();
    c.apply_override("lambda_cyc", "3.5").unwrap();
    c.apply_override("variant", "pixalign").unwrap();
    c.apply_override("horizontal_flip", "false").unwrap();
    assert_eq!(c.lambda_cyc, 3.5);
    assert_eq!(c.variant, Variant::PixAlign);
    assert!(!c.horizontal_flip);
    assert!(matches!(c.apply_override("lambda_cycle", "1"), Err(Error::Config { .. })));
    assert!(matches!(c.apply_override("p", "many"), Err(Error::Config { .. })));
    assert_eq!(c.p, TrainConfig::default().p);
}

#[test]
fn validation_rejects_bad_schedules() {
    assert!(TrainConfig::default().validate().is_ok());
    let bad = [
        TrainConfig { decay_iter: 2000, ..TrainConfig::default() },
        TrainConfig { k_ir: 1, ..TrainConfig::default() },
        TrainConfig { lr_gan: 0.0, ..TrainConfig::default() },
        TrainConfig { momentum: 1.0, ..TrainConfig::default() },
        TrainConfig { lambda_cyc: -1.0, ..TrainConfig::default() },
    ];
    for c in bad {
        assert!(c.validate().is_err(), "{c:?}");
    }
}

#[test]
fn mismatch_ignores_resumable_fields() {
    let a = TrainConfig::default();
    let b = TrainConfig {
        total_iters: 5000,
        checkpoint_every: 7,
        ..a.clone()
    };
    assert!(a.mismatched_fields(&b).is_empty());
    let c = TrainConfig { seed: 3, margin: 0.5, ..a.clone() };
    assert_eq!(a.mismatched_fields(&c), vec!["margin".to_string(), "seed".to_string()]);
}

#[test]
fn baseline_has_no_adversarial_terms() {
    let data = tiny_data();
    let mut t = Trainer::new(tiny_config(Variant::Basel), &data).unwrap();
    let r = t.step().unwrap();
    for v in [r.l_gan_pix, r.l_cyc, r.l_gan_feat, r.l_d_total, r.l_d_rev, r.l_pix_total] {
        assert_eq!(v, 0.0);
    }
    assert!(r.l_cls_feat > 0.0 && r.l_feat_total.is_finite());
}

#[test]
fn steps_are_deterministic() {
    let data = tiny_data();
    let run = || {
        let mut t = Trainer::new(tiny_config(Variant::AlignGan), &data).unwrap();
        let r = t.step().unwrap();
        let sums: Vec<u64> = ParamGroup::ALL.iter().map(|g| t.bundle.store.group_checksum(*g)).collect();
        (r, sums)
    };
    let (a, ca) = run();
    let (b, cb) = run();
    assert_eq!(a, b);
    assert_eq!(ca, cb);
}

#[test]
fn every_variant_takes_a_step() {
    let data = tiny_data();
    for v in Variant::ALL {
        let mut t = Trainer::new(tiny_config(v), &data).unwrap();
        let r = t.step().unwrap();
        assert!(r.terms().iter().all(|(_, x)| x.is_finite()), "{v:?}");
    }
}
