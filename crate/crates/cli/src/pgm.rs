//! Plain (ASCII) portable graymap output.

use std::fmt::Write as _;

/// Maps `[0, 1]` onto `0..=255`, clamping out-of-range values.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0).round() as u8
}

/// `P2` image with maxval 255, one pixel row per line.
pub fn render(rows: usize, cols: usize, pixels: &[u8]) -> String {
    assert_eq!(pixels.len(), rows * cols, "pixel count must match the grid");
    let mut out = format!("P2\n{cols} {rows}\n255\n");
    for r in 0..rows {
        let line: Vec<String> = pixels[r * cols..(r + 1) * cols]
            .iter()
            .map(|p| p.to_string())
            .collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}
