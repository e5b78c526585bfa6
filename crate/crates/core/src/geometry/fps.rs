use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Greedy farthest point sampling.
///
/// Starts at `start_index`; each subsequent pick maximizes the distance to
/// the already selected set. Ties go to the lowest index.
pub fn farthest_point_sample(points: &[Vector3<f64>], count: usize, start_index: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if count == 0 || count > n {
        return Err(Error::InvalidArgument(format!(
            "farthest point sampling needs 1 <= count <= {n}, got {count}"
        )));
    }
    if start_index >= n {
        return Err(Error::InvalidArgument(format!("start index {start_index} out of range")));
    }
    let mut selected = Vec::with_capacity(count);
    let mut min_dist = vec![f64::INFINITY; n];
    let mut current = start_index;
    selected.push(current);
    while selected.len() < count {
        let c = points[current];
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, p) in points.iter().enumerate() {
            let d = (p - c).norm_squared();
            if d < min_dist[i] {
                min_dist[i] = d;
            }
            if min_dist[i] > best.0 {
                best = (min_dist[i], i);
            }
        }
        current = best.1;
        selected.push(current);
    }
    Ok(selected)
}
