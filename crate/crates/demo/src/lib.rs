//! WebAssembly bindings for the static demo page in `www/`.

use alignreid::evaluator::{cmc_curve, mean_average_precision, ScoreMatrix};
use alignreid::losses::{pair_label as label_of, PairLabel};
use alignreid::syndata::{build_dataset, DataConfig};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn to_js(e: String) -> JsError {
    JsError::new(&e)
}

/// Width and height in pixels of the strip returned by [`render_identities`].
#[wasm_bindgen]
pub fn strip_size(identities: usize, image_size: usize) -> Vec<u32> {
    vec![(4 * image_size) as u32, (identities * image_size) as u32]
}

/// RGBA pixels of one row per identity: two RGB cameras then two IR cameras.
#[wasm_bindgen]
pub fn render_identities(seed: u64, identities: usize, nuisance: f64) -> Result<Vec<u8>, JsError> {
    render_strip(seed, identities, nuisance).map_err(to_js)
}

pub fn render_strip(seed: u64, identities: usize, nuisance: f64) -> Result<Vec<u8>, String> {
    let config = DataConfig {
        identities,
        samples_per_camera: 1,
        rgb_nuisance: nuisance,
        ir_nuisance: nuisance,
        train_fraction: 0.5,
        ..DataConfig::default()
    };
    let ds = build_dataset(&config, seed).map_err(|e| e.to_string())?;
    let size = config.image_size;
    let width = 4 * size;
    let mut rgba = vec![255u8; width * identities * size * 4];
    let byte = |v: f64| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8;
    for (rec, sample) in ds.manifest.samples.iter().zip(&ds.samples) {
        let row = rec.identity_id as usize;
        let col = rec.camera_id as usize;
        let channels = rec.modality.channels();
        let plane = size * size;
        for y in 0..size {
            for x in 0..size {
                let at = |c: usize| byte(sample.image.data()[c.min(channels - 1) * plane + y * size + x]);
                let o = ((row * size + y) * width + col * size + x) * 4;
                rgba[o] = at(0);
                rgba[o + 1] = at(1);
                rgba[o + 2] = at(2);
                rgba[o + 3] = 255;
            }
        }
    }
    Ok(rgba)
}

/// CMC and mAP of a score table given as JSON:
/// `{"query_ids": [..], "gallery_ids": [..], "scores": [[..], ..]}`.
#[wasm_bindgen]
pub fn retrieval_metrics(input: &str) -> Result<String, JsError> {
    metrics_json(input).map_err(to_js)
}

pub fn metrics_json(input: &str) -> Result<String, String> {
    let v: serde_json::Value = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let ids = |k: &str| -> Result<Vec<u32>, String> {
        serde_json::from_value(v[k].clone()).map_err(|e| format!("{k}: {e}"))
    };
    let (query_ids, gallery_ids) = (ids("query_ids")?, ids("gallery_ids")?);
    let rows: Vec<Vec<f64>> = serde_json::from_value(v["scores"].clone()).map_err(|e| format!("scores: {e}"))?;
    if rows.len() != query_ids.len() || rows.iter().any(|r| r.len() != gallery_ids.len()) {
        return Err("scores must have one row per query and one column per gallery item".into());
    }
    let s = ScoreMatrix {
        scores: rows.concat(),
        query_cams: vec![0; query_ids.len()],
        gallery_cams: vec![1; gallery_ids.len()],
        query_ids,
        gallery_ids,
    };
    let cmc = cmc_curve(&s, s.n_gallery()).map_err(|e| e.to_string())?;
    let map = mean_average_precision(&s).map_err(|e| e.to_string())?;
    let rankings: Vec<Vec<usize>> = (0..s.n_query()).map(|q| s.ranking(q)).collect();
    Ok(json!({ "cmc": cmc, "map": map, "rankings": rankings }).to_string())
}

/// Label of an image-feature pair for the joint discriminator.
#[wasm_bindgen]
pub fn pair_label(image_is_real: bool, feature_is_real: bool, same_identity: bool) -> String {
    match label_of(image_is_real, feature_is_real, same_identity) {
        PairLabel::Real => "real",
        PairLabel::Fake => "fake",
        PairLabel::Unsampled => "unsampled",
    }
    .to_string()
}
