//! 8-connected component labeling and mask-to-box generation.

use crate::types::{BoundingBox, SegMask};

/// Per-pixel component ids (0 = background, 1..=K in raster order of first
/// occurrence) and pixel counts per component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    /// `areas[k - 1]` is the pixel count of component `k`.
    pub areas: Vec<usize>,
}

impl ComponentMap {
    pub fn count(&self) -> usize {
        self.areas.len()
    }

    /// Tight box of every component, indexed like `areas`.
    pub fn boxes(&self) -> Vec<BoundingBox> {
        let mut acc: Vec<Option<(u32, u32, u32, u32)>> = vec![None; self.count()];
        for y in 0..self.height {
            for x in 0..self.width {
                let l = self.labels[y * self.width + x];
                if l == 0 {
                    continue;
                }
                let (x, y) = (x as u32, y as u32);
                let slot = &mut acc[l as usize - 1];
                *slot = Some(match *slot {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
        acc.into_iter()
            .map(|b| {
                let (x0, y0, x1, y1) = b.expect("every component has at least one pixel");
                BoundingBox { x_min: x0, y_min: y0, x_max: x1, y_max: y1 }
            })
            .collect()
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    let mut root = x;
    while parent[root as usize] != root {
        root = parent[root as usize];
    }
    while parent[x as usize] != root {
        let next = parent[x as usize];
        parent[x as usize] = root;
        x = next;
    }
    root
}

fn union(parent: &mut [u32], a: u32, b: u32) -> u32 {
    let (ra, rb) = (find(parent, a), find(parent, b));
    // smaller provisional label wins so roots stay in raster order
    let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
    parent[hi as usize] = lo;
    lo
}

/// Two-pass union-find labeling over 8-neighbourhoods.
pub fn connected_components_8(mask: &SegMask) -> ComponentMap {
    let (h, w) = (mask.height(), mask.width());
    let mut provisional = vec![0u32; h * w];
    // parent[0] is a background sentinel
    let mut parent: Vec<u32> = vec![0];

    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            // previously visited neighbours: W, NW, N, NE
            let mut label = 0u32;
            let mut neighbour = |ny: usize, nx: usize, label: &mut u32| {
                let n = provisional[ny * w + nx];
                if n != 0 {
                    *label = if *label == 0 { find(&mut parent, n) } else { union(&mut parent, *label, n) };
                }
            };
            if x > 0 {
                neighbour(y, x - 1, &mut label);
            }
            if y > 0 {
                if x > 0 {
                    neighbour(y - 1, x - 1, &mut label);
                }
                neighbour(y - 1, x, &mut label);
                if x + 1 < w {
                    neighbour(y - 1, x + 1, &mut label);
                }
            }
            if label == 0 {
                label = parent.len() as u32;
                parent.push(label);
            }
            provisional[y * w + x] = label;
        }
    }

    let mut dense = vec![0u32; parent.len()];
    let mut areas = Vec::new();
    let mut labels = vec![0u32; h * w];
    for (i, &p) in provisional.iter().enumerate() {
        if p == 0 {
            continue;
        }
        let root = find(&mut parent, p) as usize;
        if dense[root] == 0 {
            areas.push(0);
            dense[root] = areas.len() as u32;
        }
        let id = dense[root];
        areas[id as usize - 1] += 1;
        labels[i] = id;
    }
    ComponentMap { width: w, height: h, labels, areas }
}

fn tight_box(mask: &SegMask) -> Option<BoundingBox> {
    let mut b: Option<BoundingBox> = None;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(y, x) {
                let (x, y) = (x as u32, y as u32);
                b = Some(match b {
                    None => BoundingBox { x_min: x, y_min: y, x_max: x, y_max: y },
                    Some(b) => BoundingBox {
                        x_min: b.x_min.min(x),
                        y_min: b.y_min.min(y),
                        x_max: b.x_max.max(x),
                        y_max: b.y_max.max(y),
                    },
                });
            }
        }
    }
    b
}

pub const DEFAULT_MIN_AREA_FRAC: f64 = 0.0025;
pub const DEFAULT_DEDUP_IOU: f64 = 0.7;

/// Boxes for a predicted mask:
/// 1. split the foreground into 8-connected components;
/// 2. drop components smaller than `min_area_frac` of the image;
/// 3. drop components whose pixel IoU with the whole foreground exceeds
///    `dedup_iou` (a component is a subset, so IoU = its area share);
/// 4. emit each surviving component's box, then the whole-foreground box,
///    with exact duplicates removed.
pub fn generate_boxes(mask: &SegMask, min_area_frac: f64, dedup_iou: f64) -> Vec<BoundingBox> {
    let Some(hull) = tight_box(mask) else {
        return Vec::new();
    };
    let components = connected_components_8(mask);
    let image_area = (mask.height() * mask.width()) as f64;
    let fg_area = mask.area() as f64;

    let mut out: Vec<BoundingBox> = Vec::new();
    for (area, bbox) in components.areas.iter().zip(components.boxes()) {
        let area = *area as f64;
        if area < min_area_frac * image_area {
            continue;
        }
        if area / fg_area > dedup_iou {
            continue;
        }
        if !out.contains(&bbox) {
            out.push(bbox);
        }
    }
    if !out.contains(&hull) {
        out.push(hull);
    }
    out
}

/// Inclusive-pixel intersection over union.
pub fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let x0 = a.x_min.max(b.x_min);
    let y0 = a.y_min.max(b.y_min);
    let x1 = a.x_max.min(b.x_max);
    let y1 = a.y_max.min(b.y_max);
    let inter = if x0 <= x1 && y0 <= y1 {
        u64::from(x1 - x0 + 1) * u64::from(y1 - y0 + 1)
    } else {
        0
    };
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}
