use super::*;

fn small_config() -> DataConfig {
    DataConfig {
        identities: 12,
        samples_per_camera: 3,
        train_fraction: 0.75,
        ..DataConfig::default()
    }
}

#[test]
fn default_scale_counts() {
    let cfg = DataConfig {
        identities: 50,
        rgb_cameras: 2,
        ir_cameras: 2,
        samples_per_camera: 6,
        image_size: 32,
        train_fraction: 0.8,
        ..DataConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&cfg, 7, dir.path()).unwrap();
    assert_eq!(ds.manifest.train_identity_ids.len(), 40);
    assert_eq!(ds.manifest.test_identity_ids.len(), 10);
    assert_eq!(ds.manifest.samples.len(), 1200);
    assert_eq!(ds.samples.len(), 1200);
    // recount from the files on disk
    let mut rows = 0;
    for split in [Split::Train, Split::Test] {
        let c = Container::read(&dir.path().join(split.file_name()), None).unwrap();
        rows += c.get("rgb").unwrap().shape[0] + c.get("ir").unwrap().shape[0];
    }
    assert_eq!(rows, 1200);
    assert!(ds.manifest.train_identity_ids.is_disjoint(&ds.manifest.test_identity_ids));
}

#[test]
fn degenerate_split_is_rejected() {
    let cfg = DataConfig {
        identities: 1,
        ..DataConfig::default()
    };
    match build_dataset(&cfg, 1) {
        Err(Error::Config { field, reason }) => {
            assert_eq!(field, "train_fraction");
            assert!(reason.contains("test split empty"));
        }
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn invalid_configs_name_their_field() {
    let cases = [
        (DataConfig { identities: 0, ..small_config() }, "identities"),
        (DataConfig { rgb_cameras: 0, ..small_config() }, "rgb_cameras"),
        (DataConfig { ir_cameras: 0, ..small_config() }, "ir_cameras"),
        (DataConfig { train_fraction: 1.0, ..small_config() }, "train_fraction"),
        (DataConfig { train_fraction: 0.0, ..small_config() }, "train_fraction"),
    ];
    for (cfg, expected) in cases {
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, expected),
            other => panic!("{expected}: {other:?}"),
        }
    }
}

#[test]
fn generation_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate_dataset(&small_config(), 3, a.path()).unwrap();
    generate_dataset(&small_config(), 3, b.path()).unwrap();
    for f in ["manifest.json", "train.bin", "test.bin"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn sample_invariants() {
    let ds = build_dataset(&small_config(), 11).unwrap();
    for s in &ds.samples {
        assert_eq!(s.image.dim(0), s.modality.channels());
        assert_eq!(&s.image.shape()[1..], &[32, 32]);
        assert!(s.image.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let cam = ds.manifest.camera(s.camera_id).unwrap();
        assert_eq!(cam.modality, s.modality);
    }
    let ids: BTreeSet<u32> = ds.manifest.identities.iter().map(|i| i.identity_id).collect();
    assert_eq!(ids.len(), ds.manifest.identities.len());
    let cams = &ds.manifest.cameras;
    let indoor = cams.iter().filter(|c| c.indoor).count();
    assert!(indoor > 0 && indoor < cams.len());
    for m in [Modality::Rgb, Modality::Ir] {
        assert!(cams.iter().any(|c| c.modality == m));
    }
    // every train identity has all of its per-camera samples
    for id in &ds.manifest.train_identity_ids {
        for m in [Modality::Rgb, Modality::Ir] {
            let n = ds.manifest.samples.iter().filter(|r| r.identity_id == *id && r.modality == m).count();
            assert_eq!(n, 2 * 3);
        }
    }
}

#[test]
fn render_is_deterministic_and_camera_dependent() {
    let ds = build_dataset(&small_config(), 5).unwrap();
    let ident = &ds.manifest.identities[0];
    let mut cam = ds.manifest.cameras[0].clone();
    cam.nuisance_level = 0.0;
    let a = render_sample(ident, &cam, 42, 32, 0);
    let b = render_sample(ident, &cam, 42, 32, 0);
    assert_eq!(a, b);
    assert_eq!(a.image.shape(), &[3, 32, 32]);
    let ir_cams: Vec<_> = ds.manifest.cameras.iter().filter(|c| c.modality == Modality::Ir).collect();
    let x = render_sample(ident, ir_cams[0], 42, 32, 0);
    let y = render_sample(ident, ir_cams[1], 42, 32, 0);
    assert_eq!(x.image.shape(), &[1, 32, 32]);
    assert_ne!(x.image, y.image);
}

#[test]
fn load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&small_config(), 9, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn truncated_container_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&small_config(), 9, dir.path()).unwrap();
    let path = dir.path().join("test.bin");
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    match load_dataset(dir.path()) {
        Err(Error::Integrity { file }) => assert_eq!(file, path),
        other => panic!("expected integrity error, got {other:?}"),
    }
}

#[test]
fn missing_container_lists_sample_ids() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&small_config(), 9, dir.path()).unwrap();
    fs::remove_file(dir.path().join("test.bin")).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    let Error::Load(msg) = err else { panic!("expected load error, got {err:?}") };
    let first_test = ds.manifest.samples.iter().find(|r| r.split == Split::Test).unwrap();
    assert!(msg.contains("missing samples"));
    assert!(msg.contains(&first_test.sample_id.to_string()));
}

#[test]
fn corrupt_manifest_is_a_load_error() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&small_config(), 9, dir.path()).unwrap();
    fs::write(dir.path().join(MANIFEST_FILE), b"{ not json").unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Load(_))));
    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(empty.path()), Err(Error::Load(_))));
}

fn standardize(v: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let s = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt().max(1e-9);
    v.iter().map(|x| (x - m) / s).collect()
}

/// Squared distance minimised over integer shifts of up to 2 px (edge-clamped).
fn dist(a: &[f64], b: &[f64]) -> f64 {
    let n = 32i32;
    let mut best = f64::INFINITY;
    for dy in -2..=2 {
        for dx in -2..=2 {
            let mut d = 0.0;
            for y in 0..n {
                for x in 0..n {
                    let sy = (y + dy).clamp(0, n - 1);
                    let sx = (x + dx).clamp(0, n - 1);
                    let diff = a[(sy * n + sx) as usize] - b[(y * n + x) as usize];
                    d += diff * diff;
                }
            }
            best = best.min(d);
        }
    }
    best
}

/// Nearest-exemplar shape matcher: identity is recoverable from IR renders.
#[test]
fn ir_identity_is_recoverable_from_shape() {
    let ds = build_dataset(&DataConfig::default(), 21).unwrap();
    let idents = &ds.manifest.identities[..10];
    let ir_cams: Vec<_> = ds.manifest.cameras.iter().filter(|c| c.modality == Modality::Ir).cloned().collect();
    // exemplar store: 16 renders per identity across both IR cameras
    let exemplars: Vec<(usize, Vec<f64>)> = idents
        .iter()
        .enumerate()
        .flat_map(|(i, ident)| {
            let cams = &ir_cams;
            (0..16u64).map(move |k| {
                let cam = &cams[k as usize % cams.len()];
                (i, standardize(render_sample(ident, cam, 10_000 + k, 32, 0).image.data()))
            })
        })
        .collect();
    let mut correct = 0;
    let mut total = 0;
    for (i, ident) in idents.iter().enumerate() {
        for cam in &ir_cams {
            for k in 0..10 {
                let s = render_sample(ident, cam, 20_000 + k, 32, 0);
                let v = standardize(s.image.data());
                let best = exemplars
                    .iter()
                    .map(|(label, e)| (*label, dist(&v, e)))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .unwrap();
                correct += (best.0 == i) as usize;
                total += 1;
            }
        }
    }
    assert_eq!(total, 200);
    let acc = correct as f64 / total as f64;
    assert!(acc >= 0.95, "template agreement {acc}");
}

/// Nearest mean-colour classifier: near chance on IR renders of train identities.
#[test]
fn ir_renders_carry_no_colour_identity() {
    let ds = build_dataset(&DataConfig::default(), 21).unwrap();
    let train: Vec<u32> = ds.manifest.train_identity_ids.iter().copied().collect();
    let mean_colour = |s: &Sample| s.image.mean();
    let mut centroids = BTreeMap::new();
    let mut queries = Vec::new();
    for (rec, s) in ds.split_samples(Split::Train) {
        if rec.modality != Modality::Ir {
            continue;
        }
        // first IR camera fits the centroids, the second is held out
        if rec.camera_id == ds.manifest.cameras.iter().find(|c| c.modality == Modality::Ir).unwrap().camera_id {
            let e = centroids.entry(rec.identity_id).or_insert((0.0, 0));
            e.0 += mean_colour(s);
            e.1 += 1;
        } else {
            queries.push((rec.identity_id, mean_colour(s)));
        }
    }
    let cents: Vec<(u32, f64)> = centroids.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
    let correct = queries
        .iter()
        .filter(|(id, c)| {
            let best = cents.iter().min_by(|a, b| (a.1 - c).abs().total_cmp(&(b.1 - c).abs())).unwrap();
            best.0 == *id
        })
        .count();
    let acc = correct as f64 / queries.len() as f64;
    let chance = 1.0 / train.len() as f64;
    assert!(acc < 2.0 * chance, "colour accuracy {acc} vs chance {chance}");
}
