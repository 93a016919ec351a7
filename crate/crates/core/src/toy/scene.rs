//! Synthetic scenes: one colored shape over a smoothed grayscale texture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::losses::{BilinearSampler, Region, ViewGeometry};
use crate::types::{FeatureMap, SegMask};

pub const SCENE_SIZE: usize = 64;
pub const NUM_CLASSES: usize = 4;
const MIN_AREA_FRAC: f64 = 0.05;
const MAX_AREA_FRAC: f64 = 0.40;

/// Base color per class: disc, square, triangle, ring.
const PALETTE: [[f64; 3]; NUM_CLASSES] = [
    [0.85, 0.20, 0.20],
    [0.20, 0.75, 0.30],
    [0.20, 0.30, 0.85],
    [0.85, 0.75, 0.15],
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    /// 3×64×64, values in `[0, 1]`.
    pub image: FeatureMap,
    pub gt_mask: SegMask,
    pub class_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Disc,
    Square,
    Triangle,
    Ring,
}

impl Shape {
    fn of_class(class_id: usize) -> Self {
        [Shape::Disc, Shape::Square, Shape::Triangle, Shape::Ring][class_id]
    }

    /// Bounding size (side of the enclosing square) for a target area.
    fn extent_for_area(self, area: f64) -> f64 {
        match self {
            Shape::Disc => 2.0 * (area / std::f64::consts::PI).sqrt(),
            Shape::Square => area.sqrt(),
            // isosceles, base = height = extent
            Shape::Triangle => (2.0 * area).sqrt(),
            // inner radius half the outer radius
            Shape::Ring => 2.0 * (area / (0.75 * std::f64::consts::PI)).sqrt(),
        }
    }

    /// Whether the pixel center `(px, py)` lies in the shape whose enclosing
    /// square has top-left `(x0, y0)` and side `s`.
    fn contains(self, x0: f64, y0: f64, s: f64, px: f64, py: f64) -> bool {
        let (cx, cy, r) = (x0 + s / 2.0, y0 + s / 2.0, s / 2.0);
        let d2 = (px - cx).powi(2) + (py - cy).powi(2);
        match self {
            Shape::Disc => d2 <= r * r,
            Shape::Square => px >= x0 && px < x0 + s && py >= y0 && py < y0 + s,
            Shape::Triangle => {
                let t = (py - y0) / s;
                (0.0..=1.0).contains(&t) && (px - cx).abs() <= t * s / 2.0
            }
            Shape::Ring => d2 <= r * r && d2 >= (r / 2.0).powi(2),
        }
    }
}

/// Uniform noise smoothed by two 5×5 box blurs,
/// rescaled to mean 0.5 and standard deviation 0.18.
fn texture(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>() - 0.5).collect();
    let blur = |src: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; n * n];
        for y in 0..n {
            for x in 0..n {
                let mut sum = 0.0;
                let mut cnt = 0.0;
                for dy in -2i64..=2 {
                    for dx in -2i64..=2 {
                        let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                        if yy >= 0 && xx >= 0 && yy < n as i64 && xx < n as i64 {
                            sum += src[yy as usize * n + xx as usize];
                            cnt += 1.0;
                        }
                    }
                }
                out[y * n + x] = sum / cnt;
            }
        }
        out
    };
    for _ in 0..2 {
        v = blur(&v);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
    v.iter().map(|x| (0.5 + 0.18 * (x - mean) / std).clamp(0.0, 1.0)).collect()
}

fn scene(rng: &mut ChaCha8Rng) -> SyntheticScene {
    let n = SCENE_SIZE;
    let total = (n * n) as f64;
    let class_id = rng.random_range(0..NUM_CLASSES);
    let shape = Shape::of_class(class_id);
    let background = texture(rng, n);
    let tint: [f64; 3] = std::array::from_fn(|k| (PALETTE[class_id][k] + rng.random_range(-0.08..0.08)).clamp(0.0, 1.0));

    let mask = loop {
        let frac = rng.random_range(0.08..0.30);
        let s = shape.extent_for_area(frac * total);
        let x0 = rng.random_range(1.0..(n as f64 - s - 1.0));
        let y0 = rng.random_range(1.0..(n as f64 - s - 1.0));
        let m = SegMask::from_fn(n, n, |y, x| shape.contains(x0, y0, s, x as f64 + 0.5, y as f64 + 0.5))
            .expect("scene dims are positive");
        let a = m.area() as f64 / total;
        if (MIN_AREA_FRAC..=MAX_AREA_FRAC).contains(&a) {
            break m;
        }
    };
    let grain: Vec<f64> = (0..n * n).map(|_| rng.random_range(-0.03..0.03)).collect();
    let image = FeatureMap::from_fn(3, n, n, |k, y, x| {
        let p = y * n + x;
        if mask.bits()[p] {
            (tint[k] + grain[p]).clamp(0.0, 1.0)
        } else {
            background[p]
        }
    })
    .expect("scene dims are positive");
    SyntheticScene {
        image,
        gt_mask: mask,
        class_id,
    }
}

/// `n` scenes; scene `i` is drawn from stream `i` of a generator seeded by
/// `seed`, so any scene can be regenerated on its own.
pub fn gen_synthetic(seed: u64, n: usize) -> Vec<SyntheticScene> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            scene(&mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Crop area as a fraction of the image, sampled uniformly in this range.
    pub crop_scale: (f64, f64),
    pub flip_prob: f64,
    /// Brightness and contrast factors are drawn from `1 ± jitter`.
    pub jitter: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop_scale: (0.4, 1.0),
            flip_prob: 0.5,
            jitter: 0.2,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            crop_scale: (1.0, 1.0),
            flip_prob: 0.0,
            jitter: 0.0,
        }
    }
}

/// Random crop resized back to the scene size, optional horizontal flip and
/// brightness/contrast jitter. The geometry records the crop and flip.
pub fn augment_with<R: Rng>(scene: &SyntheticScene, cfg: &AugmentConfig, rng: &mut R) -> (FeatureMap, ViewGeometry) {
    let (h, w) = (scene.image.height() as f64, scene.image.width() as f64);
    let (lo, hi) = cfg.crop_scale;
    let scale = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let aspect = if scale < 1.0 {
        (rng.random_range((3f64 / 4.0).ln()..(4f64 / 3.0).ln())).exp()
    } else {
        1.0
    };
    let cw = ((scale * w * h * aspect).sqrt()).min(w);
    let ch = ((scale * w * h / aspect).sqrt()).min(h);
    let cx = if w - cw > 0.0 { rng.random_range(0.0..(w - cw)) } else { 0.0 };
    let cy = if h - ch > 0.0 { rng.random_range(0.0..(h - ch)) } else { 0.0 };
    let flip = rng.random::<f64>() < cfg.flip_prob;
    let geometry = ViewGeometry {
        crop_x: cx,
        crop_y: cy,
        crop_w: cw,
        crop_h: ch,
        flip_h: flip,
    };

    let region = Region {
        x: cx / w,
        y: cy / h,
        w: cw / w,
        h: ch / h,
        mirrored: flip,
    };
    let sampler = BilinearSampler::new(scene.image.height(), scene.image.width(), &region, scene.image.height(), scene.image.width())
        .expect("crop lies inside the image");
    let mut data = sampler.forward_raw(scene.image.data(), 3);

    if cfg.jitter > 0.0 {
        let brightness = rng.random_range(1.0 - cfg.jitter..1.0 + cfg.jitter);
        let contrast = rng.random_range(1.0 - cfg.jitter..1.0 + cfg.jitter);
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        for v in &mut data {
            *v = ((mean + contrast * (*v - mean)) * brightness).clamp(0.0, 1.0);
        }
    }
    let view = FeatureMap::new(3, scene.image.height(), scene.image.width(), data).expect("sampler preserves shape");
    (view, geometry)
}

/// [`augment_with`] under the default configuration and a seeded generator.
pub fn augment(scene: &SyntheticScene, seed: u64) -> (FeatureMap, ViewGeometry) {
    augment_with(scene, &AugmentConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed))
}
