//! Belief maps as text grids and plain (P2) PGM images. Row 0 of the grid
//! is the lowest y, so both formats print rows from the last to the first.

use fpk::{BeliefMap, GridSpec};

/// Tab-separated probabilities, one grid row per line.
pub fn text_grid(belief: &BeliefMap, grid: &GridSpec) -> String {
    let v = belief.values();
    let mut out = String::new();
    for row in (0..grid.rows).rev() {
        let line: Vec<String> = (0..grid.cols)
            .map(|col| format!("{:.6}", v[grid.index(row, col).0]))
            .collect();
        out.push_str(&line.join("\t"));
        out.push('\n');
    }
    out
}

/// Grayscale image scaled so the most likely cell is white.
pub fn pgm(belief: &BeliefMap, grid: &GridSpec) -> String {
    let v = belief.values();
    let peak = v.iter().copied().fold(0.0f64, f64::max);
    let mut out = format!("P2\n{} {}\n255\n", grid.cols, grid.rows);
    for row in (0..grid.rows).rev() {
        let line: Vec<String> = (0..grid.cols)
            .map(|col| {
                let p = v[grid.index(row, col).0];
                let g = if peak > 0.0 { (255.0 * p / peak).round() as u8 } else { 0 };
                g.to_string()
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}
