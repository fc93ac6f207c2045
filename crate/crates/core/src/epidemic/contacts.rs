/// All unordered pairs `(i, j)`, `i < j`, with `‖x_i − x_j‖ ≤ eps`, sorted.
///
/// Buckets positions into square cells of side `eps`, so only the 3×3 block
/// around each agent is searched.
pub fn contact_pairs(positions: &[[f64; 2]], eps: f64) -> Vec<(usize, usize)> {
    if positions.len() < 2 || eps.is_nan() || eps <= 0.0 {
        return Vec::new();
    }
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in positions {
        min_x = min_x.min(p[0]);
        min_y = min_y.min(p[1]);
        max_x = max_x.max(p[0]);
        max_y = max_y.max(p[1]);
    }
    let cols = ((max_x - min_x) / eps).floor() as usize + 1;
    let rows = ((max_y - min_y) / eps).floor() as usize + 1;
    let cell_of = |p: &[f64; 2]| {
        let cx = (((p[0] - min_x) / eps).floor() as usize).min(cols - 1);
        let cy = (((p[1] - min_y) / eps).floor() as usize).min(rows - 1);
        (cx, cy)
    };

    // Counting sort of agents into cells.
    let mut start = vec![0usize; cols * rows + 1];
    let cells: Vec<(usize, usize)> = positions.iter().map(cell_of).collect();
    for &(cx, cy) in &cells {
        start[cy * cols + cx + 1] += 1;
    }
    for k in 1..start.len() {
        start[k] += start[k - 1];
    }
    let mut fill = start.clone();
    let mut members = vec![0usize; positions.len()];
    for (i, &(cx, cy)) in cells.iter().enumerate() {
        let c = cy * cols + cx;
        members[fill[c]] = i;
        fill[c] += 1;
    }

    let eps2 = eps * eps;
    let mut pairs = Vec::new();
    for (i, &(cx, cy)) in cells.iter().enumerate() {
        let pi = positions[i];
        for ny in cy.saturating_sub(1)..=(cy + 1).min(rows - 1) {
            for nx in cx.saturating_sub(1)..=(cx + 1).min(cols - 1) {
                let c = ny * cols + nx;
                for &j in &members[start[c]..start[c + 1]] {
                    if j <= i {
                        continue;
                    }
                    let dx = positions[j][0] - pi[0];
                    let dy = positions[j][1] - pi[1];
                    if dx * dx + dy * dy <= eps2 {
                        pairs.push((i, j));
                    }
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs
}
