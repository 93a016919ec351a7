//! Independent reference implementations used by the self-check suites and
//! the test-suite. Nothing in the production pipeline calls into this module.

use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::types::{FeatureMap, ProjectionMap, SegMask};
use crate::weak_labels::SimilarityGraph;

/// Top eigenpair of a symmetric `c×c` matrix (row-major).
///
/// `c ≤ 3` uses the characteristic polynomial in closed form; larger
/// matrices go through nalgebra's implicit-QR symmetric solver.
pub fn dense_top_eigen(a: &[f64], c: usize) -> (f64, Vec<f64>) {
    assert_eq!(a.len(), c * c, "matrix is not {c}x{c}");
    match c {
        1 => (a[0], vec![1.0]),
        2 => top_eigen_2(a),
        3 => top_eigen_3(a),
        _ => top_eigen_nalgebra(a, c),
    }
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn top_eigen_2(a: &[f64]) -> (f64, Vec<f64>) {
    let (p, q, r) = (a[0], 0.5 * (a[1] + a[2]), a[3]);
    let half_gap = 0.5 * (p - r);
    let lambda = 0.5 * (p + r) + half_gap.hypot(q);
    // rows of (A − λI) are orthogonal to ξ; take the better conditioned one
    let v1 = [q, lambda - p];
    let v2 = [lambda - r, q];
    let n1 = v1[0].hypot(v1[1]);
    let n2 = v2[0].hypot(v2[1]);
    let v = if n1.max(n2) == 0.0 {
        vec![1.0, 0.0]
    } else if n1 >= n2 {
        v1.to_vec()
    } else {
        v2.to_vec()
    };
    (lambda, unit(v))
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn top_eigen_3(a: &[f64]) -> (f64, Vec<f64>) {
    let s = |i: usize, j: usize| 0.5 * (a[i * 3 + j] + a[j * 3 + i]);
    let off = s(0, 1).powi(2) + s(0, 2).powi(2) + s(1, 2).powi(2);
    let lambda = if off == 0.0 {
        s(0, 0).max(s(1, 1)).max(s(2, 2))
    } else {
        // trigonometric solution of det(A − λI) = 0
        let q = (s(0, 0) + s(1, 1) + s(2, 2)) / 3.0;
        let p2 = (s(0, 0) - q).powi(2) + (s(1, 1) - q).powi(2) + (s(2, 2) - q).powi(2) + 2.0 * off;
        let p = (p2 / 6.0).sqrt();
        let b = |i: usize, j: usize| (s(i, j) - if i == j { q } else { 0.0 }) / p;
        let det_b = b(0, 0) * (b(1, 1) * b(2, 2) - b(1, 2) * b(2, 1))
            - b(0, 1) * (b(1, 0) * b(2, 2) - b(1, 2) * b(2, 0))
            + b(0, 2) * (b(1, 0) * b(2, 1) - b(1, 1) * b(2, 0));
        let phi = (det_b / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
        q + 2.0 * p * phi.cos()
    };
    let rows: Vec<[f64; 3]> = (0..3)
        .map(|i| [0, 1, 2].map(|j| s(i, j) - if i == j { lambda } else { 0.0 }))
        .collect();
    let candidates = [cross(rows[0], rows[1]), cross(rows[0], rows[2]), cross(rows[1], rows[2])];
    let best = candidates
        .iter()
        .max_by(|x, y| norm3(x).total_cmp(&norm3(y)))
        .copied()
        .unwrap();
    if norm3(&best) < 1e-150 {
        // degenerate (rank ≤ 1 deficiency): fall back to the general solver
        return top_eigen_nalgebra(a, 3);
    }
    (lambda, unit(best.to_vec()))
}

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn top_eigen_nalgebra(a: &[f64], c: usize) -> (f64, Vec<f64>) {
    let m = DMatrix::from_fn(c, c, |i, j| 0.5 * (a[i * c + j] + a[j * c + i]));
    let eig = SymmetricEigen::new(m);
    let (idx, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .unwrap();
    (lambda, unit(eig.eigenvectors.column(idx).iter().copied().collect()))
}

/// Connected components of a graph by iterative depth-first search, labels
/// dense in order of smallest vertex.
pub fn dfs_components(g: &SimilarityGraph) -> Vec<usize> {
    let n = g.n();
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in g.edges() {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        label[start] = next;
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if label[u] == usize::MAX {
                    label[u] = next;
                    stack.push(u);
                }
            }
        }
        next += 1;
    }
    label
}

/// 8-connected flood fill; labels 1..K in raster order of first pixel.
pub fn flood_fill_components(mask: &SegMask) -> Vec<u32> {
    let (h, w) = (mask.height(), mask.width());
    let mut labels = vec![0u32; h * w];
    let mut next = 0u32;
    for start in 0..h * w {
        if !mask.bits()[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if mask.bits()[q] && labels[q] == 0 {
                        labels[q] = next;
                        queue.push_back(q);
                    }
                }
            }
        }
    }
    labels
}

/// F-measure by direct enumeration of every threshold, with no sorting.
pub fn naive_f_beta_max(heatmap: &ProjectionMap, gt: &SegMask, beta_sq: f64) -> f64 {
    let values = heatmap.values();
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let norm: Vec<f64> = if hi - lo >= 1e-12 {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; values.len()]
    };
    let positives = gt.bits().iter().filter(|&&b| b).count();
    if positives == 0 {
        return 0.0;
    }
    (0..255)
        .map(|k| {
            let t = k as f64 / 255.0;
            let mut tp = 0usize;
            let mut predicted = 0usize;
            for (v, &g) in norm.iter().zip(gt.bits()) {
                if *v > t {
                    predicted += 1;
                    tp += usize::from(g);
                }
            }
            if predicted == 0 || tp == 0 {
                return 0.0;
            }
            let p = tp as f64 / predicted as f64;
            let r = tp as f64 / positives as f64;
            (1.0 + beta_sq) * p * r / (beta_sq * p + r)
        })
        .fold(0.0, f64::max)
}

fn feature_matrix(frames: &[FeatureMap]) -> DMatrix<f64> {
    let c = frames[0].channels();
    let k = frames[0].pixels();
    DMatrix::from_fn(frames.len() * k, c, |row, ch| {
        frames[row / k].channel(ch)[row % k]
    })
}

fn centered_covariance(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let rows = x.nrows() as f64;
    let mean: Vec<f64> = x.column_iter().map(|col| col.sum() / rows).collect();
    let mut centered = x.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    ((centered.transpose() * &centered) / rows, mean)
}

/// Population covariance of a single map via an explicit `(h·w) × c` matrix,
/// row-major `c×c`.
pub fn dense_covariance(map: &FeatureMap) -> Vec<f64> {
    let (cov, _) = centered_covariance(&feature_matrix(std::slice::from_ref(map)));
    let c = cov.nrows();
    (0..c * c).map(|i| cov[(i / c, i % c)]).collect()
}

/// Video discovery computed by materializing each chunk's concatenated
/// `(frames·h·w) × c` feature matrices explicitly.
pub fn brute_force_video(
    rgb: &[FeatureMap],
    flow: &[FeatureMap],
    lambda1: f64,
    lambda2: f64,
    chunk: usize,
    threshold: f64,
) -> Vec<SegMask> {
    let mut masks = Vec::new();
    for (rgb_chunk, flow_chunk) in rgb.chunks(chunk).zip(flow.chunks(chunk)) {
        let (cov_rgb, mean) = centered_covariance(&feature_matrix(rgb_chunk));
        let (cov_flow, _) = centered_covariance(&feature_matrix(flow_chunk));
        let fused = cov_rgb * lambda1 + cov_flow * lambda2;
        let c = fused.nrows();
        let entries: Vec<f64> = (0..c * c).map(|i| fused[(i / c, i % c)]).collect();
        let (_, xi) = dense_top_eigen(&entries, c);
        for frame in rgb_chunk {
            let (h, w) = (frame.height(), frame.width());
            let x = feature_matrix(std::slice::from_ref(frame));
            let mut m: Vec<f64> = (0..h * w)
                .map(|p| (0..c).map(|k| xi[k] * (x[(p, k)] - mean[k])).sum())
                .collect();
            if h >= 3 && w >= 3 {
                let border: Vec<f64> = (0..h * w)
                    .filter(|p| {
                        let (y, x) = (p / w, p % w);
                        y == 0 || x == 0 || y == h - 1 || x == w - 1
                    })
                    .map(|p| m[p])
                    .collect();
                if border.iter().sum::<f64>() / border.len() as f64 > 0.0 {
                    m.iter_mut().for_each(|v| *v = -*v);
                }
            }
            let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let bits = m
                .iter()
                .map(|v| hi - lo >= 1e-12 && (v - lo) / (hi - lo) >= threshold)
                .collect();
            masks.push(SegMask::new(h, w, bits).expect("frame shape is valid"));
        }
    }
    masks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms_agree_with_general_solver() {
        let a2 = [2.0 / 3.0, 4.0 / 3.0, 4.0 / 3.0, 8.0 / 3.0];
        let (l, v) = dense_top_eigen(&a2, 2);
        assert!((l - 10.0 / 3.0).abs() < 1e-14);
        let expect = [1.0 / 5f64.sqrt(), 2.0 / 5f64.sqrt()];
        assert!((v[0] * expect[0] + v[1] * expect[1]).abs() > 1.0 - 1e-14);

        let a3 = [4.0, 1.0, 0.5, 1.0, 3.0, -0.2, 0.5, -0.2, 1.0];
        let (l3, v3) = dense_top_eigen(&a3, 3);
        let (ln, vn) = top_eigen_nalgebra(&a3, 3);
        assert!((l3 - ln).abs() < 1e-12);
        let cos: f64 = v3.iter().zip(&vn).map(|(a, b)| a * b).sum();
        assert!(cos.abs() > 1.0 - 1e-12);
    }

    #[test]
    fn diagonal_three_by_three() {
        let (l, v) = dense_top_eigen(&[1.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 2.0], 3);
        assert_eq!(l, 5.0);
        assert!((v[1].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn flood_fill_diagonal() {
        let m = SegMask::new(2, 3, vec![true, false, false, false, true, true]).unwrap();
        assert_eq!(flood_fill_components(&m), vec![1, 0, 0, 0, 1, 1]);
    }

    #[test]
    fn dfs_components_example() {
        let g = SimilarityGraph::new(5, [(0, 1), (2, 3)]).unwrap();
        assert_eq!(dfs_components(&g), vec![0, 0, 1, 1, 2]);
    }
}
