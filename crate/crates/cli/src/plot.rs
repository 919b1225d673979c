//! Static figures: translation grid, feature projection, loss curves.

use std::path::Path;

use alignreid::losses::LossReport;
use alignreid::nets::ModelBundle;
use alignreid::syndata::{Dataset, Modality, Sample, Split};
use alignreid::tensor::Tensor;
use image::{Rgb, RgbImage};
use plotters::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CELL: u32 = 4;

fn to_byte(v: f64) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round()) as u8
}

/// Paint a `[C, H, W]` image at cell `(row, col)`.
fn paint(canvas: &mut RgbImage, data: &[f64], channels: usize, size: usize, row: u32, col: u32) {
    let plane = size * size;
    for y in 0..size {
        for x in 0..size {
            let px = |c: usize| to_byte(data[c.min(channels - 1) * plane + y * size + x]);
            let color = Rgb([px(0), px(1), px(2)]);
            for dy in 0..CELL {
                for dx in 0..CELL {
                    let ox = col * (size as u32 * CELL + 2) + x as u32 * CELL + dx;
                    let oy = row * (size as u32 * CELL + 2) + y as u32 * CELL + dy;
                    canvas.put_pixel(ox, oy, color);
                }
            }
        }
    }
}

fn first_of(dataset: &Dataset, id: u32, m: Modality) -> Option<&Sample> {
    dataset
        .split_samples(Split::Test)
        .find(|(r, _)| r.identity_id == id && r.modality == m)
        .map(|(_, s)| s)
}

/// One row per test identity: real RGB, its fake IR, a real IR image.
pub fn translation_grid(bundle: &ModelBundle, dataset: &Dataset, rows: usize, path: &Path) -> alignreid::Result<()> {
    let size = dataset.manifest.config.image_size;
    let ids: Vec<u32> = dataset.manifest.test_identity_ids.iter().copied().take(rows).collect();
    let side = size as u32 * CELL + 2;
    let mut canvas = RgbImage::from_pixel(3 * side, ids.len() as u32 * side, Rgb([255, 255, 255]));
    for (r, &id) in ids.iter().enumerate() {
        let (Some(rgb), Some(ir)) = (first_of(dataset, id, Modality::Rgb), first_of(dataset, id, Modality::Ir)) else {
            continue;
        };
        let fake = bundle.infer_fake_ir(&Tensor::stack(&[&rgb.image]))?;
        paint(&mut canvas, rgb.image.data(), 3, size, r as u32, 0);
        paint(&mut canvas, fake.data(), 1, size, r as u32, 1);
        paint(&mut canvas, ir.image.data(), 1, size, r as u32, 2);
    }
    canvas
        .save(path)
        .map_err(|e| alignreid::Error::Input(format!("{}: {e}", path.display())))
}

/// Top two principal directions by power iteration from a seeded start.
pub fn project_2d(features: &Tensor, seed: u64) -> Vec<(f64, f64)> {
    let (n, d) = (features.dim(0), features.row_len());
    let mut mean = vec![0.0; d];
    for r in features.data().chunks(d) {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n as f64;
        }
    }
    let centered: Vec<Vec<f64>> =
        features.data().chunks(d).map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect()).collect();
    let mut cov = vec![0.0; d * d];
    for r in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += r[i] * r[j];
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut axes: Vec<Vec<f64>> = Vec::new();
    for _ in 0..2 {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
        for _ in 0..200 {
            let mut w: Vec<f64> = (0..d).map(|i| (0..d).map(|j| cov[i * d + j] * v[j]).sum()).collect();
            for a in &axes {
                let dot: f64 = w.iter().zip(a).map(|(x, y)| x * y).sum();
                w.iter_mut().zip(a).for_each(|(x, y)| *x -= dot * y);
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            v = w.into_iter().map(|x| x / norm).collect();
        }
        axes.push(v);
    }
    centered
        .iter()
        .map(|r| {
            let p = |a: &[f64]| r.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
            (p(&axes[0]), p(&axes[1]))
        })
        .collect()
}

fn bounds(v: impl Iterator<Item = f64> + Clone) -> std::ops::Range<f64> {
    let lo = v.clone().fold(f64::INFINITY, f64::min);
    let hi = v.fold(f64::NEG_INFINITY, f64::max);
    let pad = ((hi - lo) * 0.05).max(1e-6);
    (lo - pad)..(hi + pad)
}

fn plot_err(e: impl std::fmt::Display) -> alignreid::Error {
    alignreid::Error::Input(format!("plot: {e}"))
}

/// Scatter of projected features, colored by modality and shaped by identity.
pub fn feature_scatter(points: &[(f64, f64)], ids: &[u32], modality: &[Modality], path: &Path) -> alignreid::Result<()> {
    let root = SVGBackend::new(path, (720, 640)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("test features (2-D projection)", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(30)
        .y_label_area_size(40)
        .build_cartesian_2d(bounds(points.iter().map(|p| p.0)), bounds(points.iter().map(|p| p.1)))
        .map_err(plot_err)?;
    chart.configure_mesh().draw().map_err(plot_err)?;
    let mut distinct: Vec<u32> = ids.to_vec();
    distinct.sort();
    distinct.dedup();
    for (m, color, name) in [(Modality::Rgb, RED, "RGB"), (Modality::Ir, BLUE, "IR")] {
        let pts: Vec<(f64, f64, usize)> = points
            .iter()
            .zip(ids)
            .zip(modality)
            .filter(|(_, mm)| **mm == m)
            .map(|((p, id), _)| (p.0, p.1, distinct.binary_search(id).unwrap_or(0)))
            .collect();
        chart
            .draw_series(pts.iter().map(|&(x, y, k)| -> DynElement<'static, SVGBackend, (f64, f64)> {
                let style = color.filled();
                match k % 4 {
                    0 => Circle::new((x, y), 4, style).into_dyn(),
                    1 => TriangleMarker::new((x, y), 5, style).into_dyn(),
                    2 => Cross::new((x, y), 4, color.stroke_width(2)).into_dyn(),
                    _ => Rectangle::new([(x, y), (x, y)], color.stroke_width(6)).into_dyn(),
                }
            }))
            .map_err(plot_err)?
            .label(name)
            .legend(move |(x, y)| Circle::new((x, y), 4, color.filled()));
    }
    chart.configure_series_labels().border_style(BLACK).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Feature, pixel and discriminator objectives against iteration.
pub fn loss_curves(log: &[LossReport], path: &Path) -> alignreid::Result<()> {
    let series: [(&str, fn(&LossReport) -> f64, RGBColor); 3] = [
        ("feature total", |r| r.l_feat_total, BLUE),
        ("pixel total", |r| r.l_pix_total, RED),
        ("discriminator", |r| r.l_d_total, GREEN),
    ];
    let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let x_max = log.last().map_or(1, |r| r.iteration) as f64;
    let y = bounds(log.iter().flat_map(|r| series.iter().map(move |s| (s.1)(r))));
    let mut chart = ChartBuilder::on(&root)
        .caption("training losses", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(30)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..x_max, y)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("iteration").draw().map_err(plot_err)?;
    for (name, f, color) in series {
        chart
            .draw_series(LineSeries::new(log.iter().map(|r| (r.iteration as f64, f(r))), color))
            .map_err(plot_err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    chart.configure_series_labels().border_style(BLACK).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)
}
