/// Side of the homogeneity window.
pub const WINDOW: usize = 5;

/// True where the full 5x5 window around a pixel lies inside the grid and
/// carries the center's label. Grids smaller than the window give an all-false mask.
pub fn homogeneity_filter(labels: &[u8], height: usize, width: usize) -> Vec<bool> {
    assert_eq!(labels.len(), height * width, "label grid size");
    let r = WINDOW / 2;
    let mut mask = vec![false; height * width];
    if height < WINDOW || width < WINDOW {
        return mask;
    }
    // horizontal run check, then vertical
    let mut row_ok = vec![false; height * width];
    for y in 0..height {
        let row = &labels[y * width..(y + 1) * width];
        for x in r..width - r {
            let c = row[x];
            row_ok[y * width + x] = row[x - r..=x + r].iter().all(|&l| l == c);
        }
    }
    for y in r..height - r {
        for x in r..width - r {
            let c = labels[y * width + x];
            mask[y * width + x] = (y - r..=y + r).all(|yy| row_ok[yy * width + x] && labels[yy * width + x] == c);
        }
    }
    mask
}
