//! Attention heatmap export: per-patch CSV records plus an SVG rendering of
//! the tile grid, colored blue (lowest attention) to red (highest).

use std::path::Path;

use crate::cluster::{build_phenotype_tensors, PhenotypeAssignment};
use crate::data::PatientBag;
use crate::error::{Error, Result};
use crate::model::{risk_forward, ModelConfig, ModelParams, RiskOutput};
use crate::util::fmt_float;

/// Edge length of one tile in slide pixels; used only to size SVG
/// rectangles.
pub const DEFAULT_TILE_EDGE: u32 = 500;

#[derive(Debug, Clone)]
pub struct HeatmapRecord {
    pub patch_index: usize,
    pub slide_index: u16,
    pub x: u32,
    pub y: u32,
    pub cluster: usize,
    pub attention_raw: f64,
    pub attention_rescaled: f64,
}

/// Min-max rescale over the given values. A degenerate range (all equal)
/// maps everything to the neutral 0.5.
fn rescale(values: &[f64]) -> Vec<f64> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        values.iter().map(|v| (v - min) / (max - min)).collect()
    } else {
        vec![0.5; values.len()]
    }
}

/// Attention per patch: each patch carries its cluster's weight for the
/// siamese model, or its own weight when the model pools over patches.
fn per_patch_attention(
    output: &RiskOutput,
    config: &ModelConfig,
    assignment: &PhenotypeAssignment,
) -> Result<Vec<(f64, f64)>> {
    if config.siamese {
        // Rescale over the non-empty clusters only.
        let non_empty: Vec<usize> = (0..assignment.k)
            .filter(|&c| assignment.counts[c] > 0)
            .collect();
        let raw: Vec<f64> = non_empty.iter().map(|&c| output.attention[c]).collect();
        let rescaled = rescale(&raw);
        let mut per_cluster = vec![0.0; assignment.k];
        for (&c, &v) in non_empty.iter().zip(&rescaled) {
            per_cluster[c] = v;
        }
        Ok(assignment
            .labels
            .iter()
            .map(|&c| (output.attention[c], per_cluster[c]))
            .collect())
    } else {
        // Instances are the patches, grouped by ascending cluster index in
        // the model output; map them back to original patch positions.
        let mut positions: Vec<usize> = Vec::with_capacity(assignment.labels.len());
        for cluster in 0..assignment.k {
            for (patch, &label) in assignment.labels.iter().enumerate() {
                if label == cluster {
                    positions.push(patch);
                }
            }
        }
        if positions.len() != output.attention.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} attention entries for {} patches",
                output.attention.len(),
                positions.len()
            )));
        }
        let rescaled = rescale(&output.attention);
        let mut per_patch = vec![(0.0, 0.0); positions.len()];
        for (slot, &patch) in positions.iter().enumerate() {
            per_patch[patch] = (output.attention[slot], rescaled[slot]);
        }
        Ok(per_patch)
    }
}

/// Run the model on one patient and produce its heatmap records.
pub fn heatmap_records(
    params: &ModelParams,
    config: &ModelConfig,
    bag: &PatientBag,
    assignment: &PhenotypeAssignment,
) -> Result<(Vec<HeatmapRecord>, RiskOutput)> {
    if bag.feature_dim() != config.feature_dim {
        return Err(Error::DimensionMismatch {
            patient_id: bag.patient_id().to_string(),
            expected: config.feature_dim,
            got: bag.feature_dim(),
        });
    }
    let tensors = build_phenotype_tensors(bag, assignment)?;
    let output = risk_forward(params, config, &tensors)?;
    let attention = per_patch_attention(&output, config, assignment)?;

    let records = bag
        .coords()
        .iter()
        .enumerate()
        .map(|(i, coord)| HeatmapRecord {
            patch_index: i,
            slide_index: coord.slide_index,
            x: coord.x,
            y: coord.y,
            cluster: assignment.labels[i],
            attention_raw: attention[i].0,
            attention_rescaled: attention[i].1,
        })
        .collect();
    Ok((records, output))
}

/// Write the per-patch CSV.
pub fn write_heatmap_csv(path: impl AsRef<Path>, records: &[HeatmapRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out =
        String::from("patch_index,slide_index,x,y,cluster,attention_raw,attention_rescaled\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.patch_index,
            r.slide_index,
            r.x,
            r.y,
            r.cluster,
            fmt_float(r.attention_raw),
            fmt_float(r.attention_rescaled)
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Linear blue-to-red colormap over [0, 1].
fn color(value: f64) -> String {
    let r = (value.clamp(0.0, 1.0) * 255.0).round() as u8;
    let b = 255 - r;
    format!("#{r:02x}00{b:02x}")
}

/// Render one rectangle per patch at its tile origin. `page_width` controls
/// the root element size; the viewBox spans the tile bounding box.
pub fn render_heatmap_svg(
    records: &[HeatmapRecord],
    tile_edge: u32,
    page_width: u32,
) -> String {
    let min_x = records.iter().map(|r| r.x).min().unwrap_or(0);
    let min_y = records.iter().map(|r| r.y).min().unwrap_or(0);
    let max_x = records.iter().map(|r| r.x).max().unwrap_or(0) + tile_edge;
    let max_y = records.iter().map(|r| r.y).max().unwrap_or(0) + tile_edge;
    let width = max_x - min_x;
    let height = max_y - min_y;
    let page_height =
        ((page_width as u64 * height as u64) / width.max(1) as u64).max(1) as u32;

    let mut svg = String::new();
    svg.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{page_width}\" height=\"{page_height}\" viewBox=\"{min_x} {min_y} {width} {height}\">\n"
    ));
    for r in records {
        svg.push_str(&format!(
            "  <rect x=\"{}\" y=\"{}\" width=\"{tile_edge}\" height=\"{tile_edge}\" fill=\"{}\"/>\n",
            r.x,
            r.y,
            color(r.attention_rescaled)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Export one patient's heatmap as CSV and SVG files.
pub fn heatmap_export(
    params: &ModelParams,
    config: &ModelConfig,
    bag: &PatientBag,
    assignment: &PhenotypeAssignment,
    csv_path: impl AsRef<Path>,
    svg_path: impl AsRef<Path>,
    tile_edge: u32,
    page_width: u32,
) -> Result<Vec<HeatmapRecord>> {
    let (records, _) = heatmap_records(params, config, bag, assignment)?;
    write_heatmap_csv(csv_path, &records)?;
    let svg = render_heatmap_svg(&records, tile_edge, page_width);
    let svg_path = svg_path.as_ref();
    std::fs::write(svg_path, svg).map_err(|e| Error::Io {
        path: svg_path.to_path_buf(),
        source: e,
    })?;
    Ok(records)
}
