//! Conversions between boxes, attention maps, and cell masks.

use super::{BBox, LayoutError, LayoutMask, MaskSource};

/// Rasterizes a box onto an `height x width` cell grid: a cell is set when
/// its center lies inside the box (right/bottom edges exclusive). A box too
/// small to catch any center claims the single cell containing its center.
pub fn rasterize_mask(bbox: &BBox, height: usize, width: usize) -> Result<LayoutMask, LayoutError> {
    if height == 0 || width == 0 {
        return Err(LayoutError::InvalidMask("zero-sized grid".into()));
    }
    let mut cells = vec![false; height * width];
    let mut any = false;
    for row in 0..height {
        let cy = (row as f64 + 0.5) / height as f64;
        for col in 0..width {
            let cx = (col as f64 + 0.5) / width as f64;
            if bbox.contains_point(cx, cy) {
                cells[row * width + col] = true;
                any = true;
            }
        }
    }
    if !any {
        let (cx, cy) = bbox.center();
        let col = ((cx * width as f64).floor() as usize).min(width - 1);
        let row = ((cy * height as f64).floor() as usize).min(height - 1);
        cells[row * width + col] = true;
    }
    LayoutMask::new(height, width, cells, MaskSource::FromBox)
}

/// Thresholds an attention map at its `quantile` value (nearest-rank over
/// the sorted cell values); cells strictly above the threshold are set.
/// An empty result falls back to the argmax cells, and a constant map
/// yields an all-on mask flagged as degenerate.
pub fn attention_to_mask(
    map: &[f64],
    height: usize,
    width: usize,
    quantile: f64,
) -> Result<LayoutMask, LayoutError> {
    if height == 0 || width == 0 || map.len() != height * width {
        return Err(LayoutError::ShapeMismatch {
            expected: format!("{} cells", height * width),
            got: format!("{}", map.len()),
        });
    }
    if !(0.0..1.0).contains(&quantile) || quantile <= 0.0 {
        return Err(LayoutError::InvalidMask(format!("quantile {quantile} outside (0, 1)")));
    }
    if map.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(LayoutError::InvalidMask("attention values must be finite and >= 0".into()));
    }

    let mut sorted = map.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len();
    let rank = ((quantile * n as f64).ceil() as usize).clamp(1, n);
    let threshold = sorted[rank - 1];

    let mut cells: Vec<bool> = map.iter().map(|v| *v > threshold).collect();
    let mut degenerate = false;
    if !cells.iter().any(|c| *c) {
        let max = sorted[n - 1];
        let min = sorted[0];
        if max == min {
            cells = vec![true; n];
            degenerate = true;
        } else {
            cells = map.iter().map(|v| *v == max).collect();
        }
    }
    LayoutMask::new(height, width, cells, MaskSource::FromAttention { degenerate })
}

/// Total attention inside the mask's set cells.
pub fn attention_mass(map: &[f64], mask: &LayoutMask) -> Result<f64, LayoutError> {
    if map.len() != mask.cells().len() {
        return Err(LayoutError::ShapeMismatch {
            expected: format!("{} cells", mask.cells().len()),
            got: format!("{}", map.len()),
        });
    }
    Ok(map
        .iter()
        .zip(mask.cells())
        .filter_map(|(v, set)| set.then_some(*v))
        .sum())
}

/// Bounding box of the cells holding at least half the map's peak value —
/// a tight estimate of where an object was realized.
pub fn half_peak_box(map: &[f64], height: usize, width: usize) -> Result<BBox, LayoutError> {
    if height == 0 || width == 0 || map.len() != height * width {
        return Err(LayoutError::ShapeMismatch {
            expected: format!("{} cells", height * width),
            got: format!("{}", map.len()),
        });
    }
    if map.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(LayoutError::InvalidMask("attention values must be finite and >= 0".into()));
    }
    let max = map.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let cells: Vec<bool> = map.iter().map(|v| *v >= 0.5 * max).collect();
    let mask = LayoutMask::new(height, width, cells, MaskSource::FromAttention {
        degenerate: false,
    })?;
    Ok(mask.bounding_box())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rasterize_right_half_columns() {
        let b = BBox::new(0.5, 0.0, 1.0, 1.0).unwrap();
        let m = rasterize_mask(&b, 16, 16).unwrap();
        assert_eq!(m.count_set(), 8 * 16);
        for row in 0..16 {
            for col in 0..16 {
                assert_eq!(m.get(row, col), col >= 8, "row {row} col {col}");
            }
        }
    }

    #[test]
    fn rasterize_tiny_box_claims_center_cell() {
        let b = BBox::new(0.49, 0.49, 0.51, 0.51).unwrap();
        let m = rasterize_mask(&b, 16, 16).unwrap();
        assert_eq!(m.count_set(), 1);
        assert!(m.get(8, 8), "center (0.5, 0.5) lands in cell (8, 8)");
    }

    #[test]
    fn rasterize_half_open_edges() {
        // Box edge exactly on a cell center: the right/bottom edge excludes it.
        let b = BBox::new(0.0, 0.0, 0.53125, 1.0).unwrap(); // x1 = 8.5/16
        let m = rasterize_mask(&b, 16, 16).unwrap();
        for row in 0..16 {
            assert!(m.get(row, 7));
            assert!(!m.get(row, 8), "cell center equal to x1 is excluded");
        }
    }

    #[test]
    fn rasterize_grows_with_box() {
        let small = BBox::new(0.3, 0.3, 0.5, 0.5).unwrap();
        let large = BBox::new(0.2, 0.2, 0.7, 0.7).unwrap();
        let ms = rasterize_mask(&small, 16, 16).unwrap();
        let ml = rasterize_mask(&large, 16, 16).unwrap();
        assert!(ml.count_set() > ms.count_set());
        for (s, l) in ms.cells().iter().zip(ml.cells()) {
            assert!(!s || *l, "small box cells are a subset of the large box cells");
        }
    }

    #[test]
    fn one_hot_map_keeps_single_cell() {
        let mut map = vec![0.0; 256];
        map[37] = 1.0;
        let m = attention_to_mask(&map, 16, 16, 0.9).unwrap();
        assert_eq!(m.count_set(), 1);
        assert!(m.get(37 / 16, 37 % 16));
        assert_eq!(m.source(), MaskSource::FromAttention { degenerate: false });
    }

    #[test]
    fn uniform_map_degenerates_to_all_on() {
        let map = vec![1.0 / 256.0; 256];
        let m = attention_to_mask(&map, 16, 16, 0.75).unwrap();
        assert_eq!(m.count_set(), 256);
        assert_eq!(m.source(), MaskSource::FromAttention { degenerate: true });
    }

    #[test]
    fn distinct_values_keep_top_quartile() {
        let map: Vec<f64> = (0..256).map(|i| i as f64).collect();
        let m = attention_to_mask(&map, 16, 16, 0.75).unwrap();
        assert_eq!(m.count_set(), 64);
        assert!(m.get(15, 15));
        assert!(!m.get(0, 0));
    }

    #[test]
    fn quantile_rank_is_nearest_rank() {
        // 4 values, q = 0.5: rank ceil(2) = 2, threshold = second smallest.
        let map = vec![1.0, 2.0, 3.0, 4.0];
        let m = attention_to_mask(&map, 2, 2, 0.5).unwrap();
        assert_eq!(m.count_set(), 2);
        assert!(!m.get(0, 0) && !m.get(0, 1));
        assert!(m.get(1, 0) && m.get(1, 1));
    }

    #[test]
    fn mass_sums_set_cells() {
        let map = vec![0.1, 0.2, 0.3, 0.4];
        let mask = LayoutMask::new(2, 2, vec![true, false, false, true], MaskSource::FromBox)
            .unwrap();
        assert_relative_eq!(attention_mass(&map, &mask).unwrap(), 0.5);
    }

    #[test]
    fn half_peak_box_tracks_the_peak() {
        let mut map = vec![0.001; 256];
        for row in 4..8 {
            for col in 10..14 {
                map[row * 16 + col] = 1.0;
            }
        }
        let b = half_peak_box(&map, 16, 16).unwrap();
        assert_relative_eq!(b.x0, 10.0 / 16.0);
        assert_relative_eq!(b.x1, 14.0 / 16.0);
        assert_relative_eq!(b.y0, 4.0 / 16.0);
        assert_relative_eq!(b.y1, 8.0 / 16.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(attention_to_mask(&[1.0; 4], 2, 2, 0.0).is_err());
        assert!(attention_to_mask(&[1.0; 4], 2, 2, 1.0).is_err());
        assert!(attention_to_mask(&[1.0; 3], 2, 2, 0.5).is_err());
        assert!(attention_to_mask(&[1.0, -0.1, 0.0, 0.0], 2, 2, 0.5).is_err());
        assert!(attention_to_mask(&[1.0, f64::NAN, 0.0, 0.0], 2, 2, 0.5).is_err());
    }
}
