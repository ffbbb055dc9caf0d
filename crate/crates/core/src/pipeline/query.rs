use crate::error::{Error, Result};
use crate::metrics::similarity_map;

/// Looks up a class embedding by name.
pub fn class_query<'a>(names: &[String], embeddings: &'a [Vec<f64>], name: &str) -> Result<(usize, &'a [f64])> {
    names
        .iter()
        .position(|n| n == name)
        .map(|i| (i, embeddings[i].as_slice()))
        .ok_or_else(|| Error::UnknownClass {
            name: name.to_string(),
            known: names.join(", "),
        })
}

/// Cosine-similarity heat map of a feature image against a query vector and
/// the binary mask `similarity >= threshold`.
pub fn query_mask(features: &[f32], dim: usize, query: &[f64], threshold: f64) -> (Vec<f64>, Vec<bool>) {
    let heat = similarity_map(features, dim, query);
    let mask = heat.iter().map(|&s| s >= threshold).collect();
    (heat, mask)
}

/// IoU between a mask and the pixels labelled `class`; 1 when both are empty.
pub fn mask_iou(mask: &[bool], labels: &[u8], class: u8) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&m, &l) in mask.iter().zip(labels) {
        let g = l == class;
        inter += (m && g) as usize;
        union += (m || g) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
