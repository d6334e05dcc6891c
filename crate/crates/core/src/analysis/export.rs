//! File exports for the analysis battery.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::ArrayView2;

use super::{ActMaxResult, AnalysisError, FeatureMatrix};
use crate::data::INPUT_SIZE;
use crate::fsutil::atomic_write;

fn export_err(path: &Path) -> impl Fn(String) -> AnalysisError + '_ {
    move |message| AnalysisError::Export {
        path: path.display().to_string(),
        message,
    }
}

fn write_csv<R: serde::Serialize>(
    path: &Path,
    rows: impl IntoIterator<Item = R>,
) -> Result<(), AnalysisError> {
    let err = export_err(path);
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| err(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| err(e.to_string()))?;
    atomic_write(path, &bytes)?;
    Ok(())
}

#[derive(serde::Serialize)]
struct EmbeddingRow<'a> {
    x: f64,
    y: f64,
    label: usize,
    domain_role: String,
    tap: &'a str,
}

/// Columns `x,y,label,domain_role,tap`, one row per embedded sample.
pub fn write_embedding_csv(
    path: &Path,
    embedding: ArrayView2<f64>,
    features: &FeatureMatrix,
) -> Result<(), AnalysisError> {
    if embedding.nrows() != features.len() || embedding.ncols() != 2 {
        return Err(AnalysisError::InvalidArgument(format!(
            "embedding is {:?} for {} samples",
            embedding.shape(),
            features.len()
        )));
    }
    let tap = features.tap.tag();
    write_csv(
        path,
        embedding
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, r)| EmbeddingRow {
                x: r[0],
                y: r[1],
                label: features.labels[i],
                domain_role: features.domain_roles[i].to_string(),
                tap,
            }),
    )
}

#[derive(serde::Serialize)]
struct TraceRow {
    class_id: usize,
    step: usize,
    logit: f64,
}

/// Columns `class_id,step,logit`.
pub fn write_logit_traces(path: &Path, results: &[ActMaxResult]) -> Result<(), AnalysisError> {
    write_csv(
        path,
        results.iter().flat_map(|r| {
            r.logit_trace
                .iter()
                .enumerate()
                .map(move |(step, &logit)| TraceRow {
                    class_id: r.class_id,
                    step,
                    logit,
                })
        }),
    )
}

/// Tiles the synthesized images left to right, top to bottom, `columns` wide
/// with a one-pixel gap, and saves a PNG.
pub fn write_actmax_grid(
    path: &Path,
    results: &[ActMaxResult],
    columns: usize,
) -> Result<(), AnalysisError> {
    if results.is_empty() || columns == 0 {
        return Err(AnalysisError::InvalidArgument("nothing to tile".into()));
    }
    let s = INPUT_SIZE as u32;
    let cols = columns.min(results.len()) as u32;
    let rows = results.len().div_ceil(columns) as u32;
    let mut grid =
        RgbImage::from_pixel(cols * (s + 1) - 1, rows * (s + 1) - 1, Rgb([255, 255, 255]));
    let hw = INPUT_SIZE * INPUT_SIZE;
    for (n, r) in results.iter().enumerate() {
        let (gx, gy) = ((n as u32 % cols) * (s + 1), (n as u32 / cols) * (s + 1));
        let px = r.image.data();
        for p in 0..hw {
            let rgb = [0, 1, 2].map(|c| (px[c * hw + p].clamp(0.0, 1.0) * 255.0).round() as u8);
            grid.put_pixel(
                gx + (p % INPUT_SIZE) as u32,
                gy + (p / INPUT_SIZE) as u32,
                Rgb(rgb),
            );
        }
    }
    let mut bytes = Vec::new();
    grid.write_to(
        &mut std::io::Cursor::new(&mut bytes),
        image::ImageFormat::Png,
    )
    .map_err(|e| export_err(path)(e.to_string()))?;
    atomic_write(path, &bytes)?;
    Ok(())
}
