use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use objdisc_core::boxes::{connected_components_8, generate_boxes, DEFAULT_DEDUP_IOU, DEFAULT_MIN_AREA_FRAC};
use objdisc_core::io::{format_boxes, load_fmap, load_mask, parse_boxes_line, save_fmap, save_mask};
use objdisc_core::losses::{align_loss, graph_loss, info_nce, overlap_region, sup_contrastive, LossConfig, ViewGeometry};
use objdisc_core::metrics::{corloc, f_beta_max, ImageBoxes, DEFAULT_BETA_SQ};
use objdisc_core::oracle::{flood_fill_components, naive_f_beta_max};
use objdisc_core::pca::{
    binarize, covariance, discover, mean_vector, project, resolve_sign, top_eigen, DiscoveryConfig, SignRule,
    DEFAULT_EIG_TOL, DEFAULT_MAX_SWEEPS,
};
use objdisc_core::weak_labels::{cosine_similarity_matrix, hoshen_kopelman, mutual_nn_graph, weak_label_matrix};
use objdisc_core::{BoundingBox, EmbeddingBatch, FeatureMap, ProjectionMap, SegMask};

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn batch(seed: u64, n: usize, d: usize) -> EmbeddingBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EmbeddingBatch::new(n, d, normals(&mut rng, n * d)).unwrap()
}

fn labels_for(b: &EmbeddingBatch) -> objdisc_core::weak_labels::WeakLabelMatrix {
    let g = mutual_nn_graph(&cosine_similarity_matrix(b).unwrap());
    weak_label_matrix(&hoshen_kopelman(&g))
}

fn mask_strategy(max_side: usize) -> impl Strategy<Value = SegMask> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(h, w)| {
        proptest::collection::vec(any::<bool>(), h * w).prop_map(move |bits| SegMask::new(h, w, bits).unwrap())
    })
}

fn map_strategy() -> impl Strategy<Value = FeatureMap> {
    (1..=4usize, 1..=6usize, 1..=6usize).prop_flat_map(|(c, h, w)| {
        proptest::collection::vec(-1e3f32..1e3f32, c * h * w)
            .prop_map(move |v| FeatureMap::new(c, h, w, v.into_iter().map(f64::from).collect()).unwrap())
    })
}

fn heatmap_strategy() -> impl Strategy<Value = ProjectionMap> {
    (1..=8usize, 1..=8usize).prop_flat_map(|(h, w)| {
        proptest::collection::vec(-10.0f64..10.0, h * w).prop_map(move |v| ProjectionMap::new(h, w, v).unwrap())
    })
}

/// A planted-object map: a block of pixels shares an offset along a random
/// direction, so the top eigenvalue is well separated.
fn planted_map(seed: u64, c: usize, side: usize) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = normals(&mut rng, c);
    let noise = normals(&mut rng, c * side * side);
    let (x0, y0, s) = (rng.random_range(1..side / 2), rng.random_range(1..side / 2), side / 3);
    FeatureMap::from_fn(c, side, side, |k, y, x| {
        let inside = x >= x0 && x < x0 + s && y >= y0 && y < y0 + s;
        0.3 * noise[(k * side + y) * side + x] + if inside { 3.0 * dir[k] } else { 0.0 }
    })
    .unwrap()
}

/// Random orthogonal matrix from Gram–Schmidt on Gaussian columns.
fn random_orthogonal(seed: u64, c: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < c {
        let mut v = normals(&mut rng, c);
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(u) {
                *x -= d * y;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            q.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    q
}

fn rotate(map: &FeatureMap, q: &[Vec<f64>]) -> FeatureMap {
    let c = map.channels();
    FeatureMap::from_fn(c, map.height(), map.width(), |k, y, x| {
        (0..c).map(|j| q[k][j] * map.get(j, y, x)).sum()
    })
    .unwrap()
}

fn hull(mask: &SegMask) -> Option<BoundingBox> {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(y, x) {
                x0 = x0.min(x as u32);
                y0 = y0.min(y as u32);
                x1 = x1.max(x as u32);
                y1 = y1.max(y as u32);
            }
        }
    }
    (x0 != u32::MAX).then(|| BoundingBox::new(x0, y0, x1, y1).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn fmp1_round_trip_is_byte_exact(map in map_strategy()) {
        let mut bytes = Vec::new();
        save_fmap(&map, &mut bytes).unwrap();
        let loaded = load_fmap(bytes.as_slice()).unwrap();
        prop_assert_eq!(&loaded, &map);
        let mut again = Vec::new();
        save_fmap(&loaded, &mut again).unwrap();
        prop_assert_eq!(again, bytes);
    }

    #[test]
    fn fmp1_rejects_header_mutations(map in map_strategy(), at in 0usize..16, delta in 1u8..=255) {
        let mut bytes = Vec::new();
        save_fmap(&map, &mut bytes).unwrap();
        bytes[at] = bytes[at].wrapping_add(delta);
        prop_assert!(load_fmap(bytes.as_slice()).is_err());
    }

    #[test]
    fn mask_quantization_round_trips(mask in mask_strategy(12)) {
        let mut bytes = Vec::new();
        save_mask(&mask, &mut bytes).unwrap();
        prop_assert_eq!(load_mask(bytes.as_slice()).unwrap(), mask);
    }

    #[test]
    fn box_lines_round_trip(
        id in "[a-z][a-z0-9_]{0,8}",
        raw in proptest::collection::vec((0u32..500, 0u32..500, 0u32..50, 0u32..50), 0..5),
    ) {
        let boxes: Vec<BoundingBox> = raw
            .iter()
            .map(|&(x, y, w, h)| BoundingBox::new(x, y, x + w, y + h).unwrap())
            .collect();
        let line = format_boxes(&id, &boxes);
        let (pid, pboxes) = parse_boxes_line(line.trim_end()).unwrap();
        prop_assert_eq!(pid, id);
        prop_assert_eq!(pboxes, boxes);
    }

    #[test]
    fn eigenvalues_sum_to_trace(seed in any::<u64>(), c in 1usize..=6, hw in 2usize..=64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = FeatureMap::new(c, 1, hw, normals(&mut rng, c * hw)).unwrap();
        let cov = covariance(&map);
        let eig = top_eigen(&cov, c, DEFAULT_EIG_TOL, DEFAULT_MAX_SWEEPS).unwrap();
        let sum: f64 = eig.eigenvalues.iter().sum();
        prop_assert!((sum - cov.trace()).abs() <= 1e-8 * cov.trace().abs().max(1e-300));
        prop_assert!(eig.eigenvalues.windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn rotation_leaves_mask_unchanged(seed in any::<u64>(), c in 2usize..=6, side in 6usize..=12) {
        let map = planted_map(seed, c, side);
        let q = random_orthogonal(seed ^ 0x5555, c);
        let rotated = rotate(&map, &q);

        let eig = top_eigen(&covariance(&map), 2, DEFAULT_EIG_TOL, DEFAULT_MAX_SWEEPS).unwrap();
        prop_assume!(eig.eigenvalues[0] > 1.5 * eig.eigenvalues[1]);
        let xi = &eig.eigenvectors[0];
        let reig = top_eigen(&covariance(&rotated), 1, DEFAULT_EIG_TOL, DEFAULT_MAX_SWEEPS).unwrap();
        let q_xi: Vec<f64> = (0..c).map(|k| (0..c).map(|j| q[k][j] * xi[j]).sum()).collect();
        let cos: f64 = q_xi.iter().zip(&reig.eigenvectors[0]).map(|(a, b)| a * b).sum();
        prop_assert!((cos.abs() - 1.0).abs() < 1e-9, "cos {}", cos);

        let m = project(&map, &mean_vector(&map), xi).unwrap();
        let rm = project(&rotated, &mean_vector(&rotated), &reig.eigenvectors[0]).unwrap();
        let scale = m.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in m.values().iter().zip(rm.values()) {
            prop_assert!((a.abs() - b.abs()).abs() <= 1e-9 * scale);
        }
        let resolved = resolve_sign(&m, SignRule::BorderNegative);
        let near_threshold = resolved.normalized().iter().any(|v| (v - 0.5).abs() < 1e-6);
        prop_assume!(!near_threshold);
        let cfg = DiscoveryConfig::default();
        prop_assert_eq!(discover(&map, &cfg).unwrap().mask, discover(&rotated, &cfg).unwrap().mask);
    }

    #[test]
    fn binarize_is_monotone_in_threshold(m in heatmap_strategy(), a in 0.01f64..0.99, b in 0.01f64..0.99) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let loose = binarize(&m, lo);
        let strict = binarize(&m, hi);
        for (s, l) in strict.bits().iter().zip(loose.bits()) {
            prop_assert!(!s || *l);
        }
    }

    #[test]
    fn resolve_sign_is_idempotent(m in heatmap_strategy()) {
        for rule in [SignRule::BorderNegative, SignRule::None] {
            let once = resolve_sign(&m, rule);
            prop_assert_eq!(resolve_sign(&once, rule), once);
        }
    }

    #[test]
    fn weak_labels_are_symmetric_with_zero_diagonal(seed in any::<u64>(), n in 1usize..=32, d in 1usize..=8) {
        let y = labels_for(&batch(seed, n, d));
        for i in 0..n {
            prop_assert!(!y.get(i, i));
            for j in 0..n {
                prop_assert_eq!(y.get(i, j), y.get(j, i));
            }
        }
    }

    #[test]
    fn mutual_neighbours_share_a_label(seed in any::<u64>(), n in 2usize..=48, d in 1usize..=8) {
        let b = batch(seed, n, d);
        let g = mutual_nn_graph(&cosine_similarity_matrix(&b).unwrap());
        let labels = hoshen_kopelman(&g);
        for &(i, j) in g.edges() {
            prop_assert_eq!(labels.labels()[i], labels.labels()[j]);
        }
    }

    #[test]
    fn weak_labels_are_permutation_equivariant(
        seed in any::<u64>(),
        n in 2usize..=24,
        // d = 1 makes every similarity ±1, so neighbours tie by index
        d in 2usize..=8,
        perm_seed in any::<u64>(),
    ) {
        let b = batch(seed, n, d);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let rows: Vec<Vec<f64>> = perm.iter().map(|&p| b.row(p).to_vec()).collect();
        let permuted = EmbeddingBatch::from_rows(&rows).unwrap();
        let (y, yp) = (labels_for(&b), labels_for(&permuted));
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(yp.get(i, j), y.get(perm[i], perm[j]));
            }
        }
    }

    #[test]
    fn embedding_losses_are_nonnegative_and_scale_free(
        seed in any::<u64>(),
        n in 1usize..=8,
        d in 1usize..=16,
        row in 0usize..8,
        factor in 0.01f64..100.0,
    ) {
        let cfg = LossConfig::default();
        let a = batch(seed, n, d);
        let b = batch(seed ^ 1, n, d);
        let y = labels_for(&b);
        let row = row % n;
        let mut rows: Vec<Vec<f64>> = a.rows().map(<[f64]>::to_vec).collect();
        for v in &mut rows[row] {
            *v *= factor;
        }
        let scaled = EmbeddingBatch::from_rows(&rows).unwrap();

        let nce = info_nce(&a, &b, &cfg).unwrap().value;
        let sup = sup_contrastive(&a, &y, &cfg).unwrap().value;
        prop_assert!(nce >= 0.0 && sup >= 0.0);
        let nce_s = info_nce(&scaled, &b, &cfg).unwrap().value;
        let sup_s = sup_contrastive(&scaled, &y, &cfg).unwrap().value;
        prop_assert!((nce - nce_s).abs() <= 1e-9 * nce.max(1.0));
        prop_assert!((sup - sup_s).abs() <= 1e-9 * sup.max(1.0));
    }

    #[test]
    fn graph_loss_is_symmetric_in_views(seed in any::<u64>(), n in 1usize..=8, d in 1usize..=16) {
        let cfg = LossConfig::default();
        let (a, b) = (batch(seed, n, d), batch(seed ^ 7, n, d));
        let (ya, yb) = (labels_for(&a), labels_for(&b));
        let ab = graph_loss(&a, &b, &ya, &yb, &cfg).unwrap();
        let ba = graph_loss(&b, &a, &yb, &ya, &cfg).unwrap();
        prop_assert!(ab.value >= 0.0);
        prop_assert!((ab.value - ba.value).abs() <= 1e-12 * ab.value.max(1.0));
        prop_assert_eq!(&ab.gradients[0], &ba.gradients[1]);
        prop_assert_eq!(&ab.gradients[1], &ba.gradients[0]);
    }

    #[test]
    fn align_loss_is_exactly_symmetric(seed in any::<u64>(), c in 1usize..=8, h in 1usize..=6, w in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = FeatureMap::new(c, h, w, normals(&mut rng, c * h * w)).unwrap();
        let b = FeatureMap::new(c, h, w, normals(&mut rng, c * h * w)).unwrap();
        let ab = align_loss(&a, &b).unwrap().value;
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, align_loss(&b, &a).unwrap().value);
    }

    #[test]
    fn overlap_region_is_symmetric(
        a in (0.0f64..60.0, 0.0f64..60.0, 4.0f64..64.0, 4.0f64..64.0, any::<bool>()),
        b in (0.0f64..60.0, 0.0f64..60.0, 4.0f64..64.0, 4.0f64..64.0, any::<bool>()),
    ) {
        let geom = |(x, y, w, h, f): (f64, f64, f64, f64, bool)| {
            ViewGeometry::new(x, y, w.min(64.0 - x), h.min(64.0 - y), f, 64.0, 64.0).unwrap()
        };
        let (gi, gj) = (geom(a), geom(b));
        let ij = overlap_region(&gi, &gj);
        let ji = overlap_region(&gj, &gi);
        prop_assert_eq!(ij.is_some(), ji.is_some());
        if let (Some((ri, rj)), Some((sj, si))) = (ij, ji) {
            let close = |p: (f64, f64, f64, f64), q: (f64, f64, f64, f64)| {
                [(p.0, q.0), (p.1, q.1), (p.2, q.2), (p.3, q.3)].iter().all(|(u, v)| (u - v).abs() < 1e-9)
            };
            prop_assert!(close(ri.to_original(&gi), si.to_original(&gi)));
            prop_assert!(close(rj.to_original(&gj), sj.to_original(&gj)));
            prop_assert!(close(ri.to_original(&gi), rj.to_original(&gj)));
        }
    }

    #[test]
    fn components_match_flood_fill(mask in mask_strategy(24)) {
        prop_assert_eq!(connected_components_8(&mask).labels, flood_fill_components(&mask));
    }

    #[test]
    fn boxes_lie_inside_image_and_hull(mask in mask_strategy(40)) {
        let boxes = generate_boxes(&mask, DEFAULT_MIN_AREA_FRAC, DEFAULT_DEDUP_IOU);
        match hull(&mask) {
            None => prop_assert!(boxes.is_empty()),
            Some(h) => {
                prop_assert!(boxes.contains(&h));
                for b in &boxes {
                    prop_assert!(b.fits_within(mask.width(), mask.height()));
                    prop_assert!(h.contains(b));
                }
            }
        }
    }

    #[test]
    fn corloc_is_bounded_and_monotone(
        gts in proptest::collection::vec((0u32..40, 0u32..40, 1u32..20, 1u32..20), 1..6),
        preds in proptest::collection::vec((0u32..40, 0u32..40, 1u32..20, 1u32..20), 6),
        extra in proptest::collection::vec((0u32..40, 0u32..40, 1u32..20, 1u32..20), 6),
    ) {
        let mk = |(x, y, w, h): (u32, u32, u32, u32)| BoundingBox::new(x, y, x + w, y + h).unwrap();
        let gt: Vec<ImageBoxes> =
            gts.iter().enumerate().map(|(i, &g)| ImageBoxes::new(format!("i{i}"), vec![mk(g)])).collect();
        let pred: Vec<ImageBoxes> =
            (0..gt.len()).map(|i| ImageBoxes::new(format!("i{i}"), vec![mk(preds[i])])).collect();
        let more: Vec<ImageBoxes> = (0..gt.len())
            .map(|i| ImageBoxes::new(format!("i{i}"), vec![mk(preds[i]), mk(extra[i])]))
            .collect();
        let base = corloc(&pred, &gt).unwrap();
        let grown = corloc(&more, &gt).unwrap();
        prop_assert!((0.0..=1.0).contains(&base) && (0.0..=1.0).contains(&grown));
        prop_assert!(grown >= base);
    }

    #[test]
    fn f_beta_matches_exhaustive_oracle(m in heatmap_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = SegMask::from_fn(m.height(), m.width(), |_, _| rng.random::<bool>()).unwrap();
        let fast = f_beta_max(&m, &gt, DEFAULT_BETA_SQ).unwrap();
        let slow = naive_f_beta_max(&m, &gt, DEFAULT_BETA_SQ);
        prop_assert!((fast - slow).abs() <= 1e-12, "{} vs {}", fast, slow);
        prop_assert!((0.0..=1.0).contains(&fast));
    }

    #[test]
    fn f_beta_ignores_monotone_rescaling(
        levels in proptest::collection::vec(0u32..=50, 1..60),
        gt_bits in proptest::collection::vec(any::<bool>(), 60),
        gain in 0.1f64..5.0,
    ) {
        let n = levels.len();
        let a = ProjectionMap::new(1, n, levels.iter().map(|&l| f64::from(l) / 50.0).collect()).unwrap();
        let b = ProjectionMap::new(1, n, a.values().iter().map(|v| (gain * v).exp()).collect()).unwrap();
        // distinct levels stay at least 1/255 apart after normalization
        let spaced = |m: &ProjectionMap| {
            let mut v = m.values().to_vec();
            v.sort_by(f64::total_cmp);
            v.dedup();
            let span = v[v.len() - 1] - v[0];
            v.windows(2).all(|p| (p[1] - p[0]) >= 2.0 / 255.0 * span)
        };
        prop_assume!(spaced(&a) && spaced(&b));
        let gt = SegMask::new(1, n, gt_bits[..n].to_vec()).unwrap();
        prop_assert_eq!(
            f_beta_max(&a, &gt, DEFAULT_BETA_SQ).unwrap(),
            f_beta_max(&b, &gt, DEFAULT_BETA_SQ).unwrap()
        );
    }
}
