//! View geometry bookkeeping and bilinear region resampling.

use crate::error::{Error, Result};
use crate::types::FeatureMap;

/// Crop rectangle (original-image pixels) and flip applied to produce a view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewGeometry {
    pub crop_x: f64,
    pub crop_y: f64,
    pub crop_w: f64,
    pub crop_h: f64,
    pub flip_h: bool,
}

impl ViewGeometry {
    pub fn new(
        crop_x: f64,
        crop_y: f64,
        crop_w: f64,
        crop_h: f64,
        flip_h: bool,
        image_w: f64,
        image_h: f64,
    ) -> Result<Self> {
        let g = Self {
            crop_x,
            crop_y,
            crop_w,
            crop_h,
            flip_h,
        };
        g.check_within(image_w, image_h)?;
        Ok(g)
    }

    pub fn full(image_w: f64, image_h: f64) -> Self {
        Self {
            crop_x: 0.0,
            crop_y: 0.0,
            crop_w: image_w,
            crop_h: image_h,
            flip_h: false,
        }
    }

    pub fn check_within(&self, image_w: f64, image_h: f64) -> Result<()> {
        let eps = 1e-9 * image_w.max(image_h).max(1.0);
        let ok = self.crop_x >= 0.0
            && self.crop_y >= 0.0
            && self.crop_w > 0.0
            && self.crop_h > 0.0
            && self.crop_x + self.crop_w <= image_w + eps
            && self.crop_y + self.crop_h <= image_h + eps;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "crop {self:?} does not lie within a {image_w}x{image_h} image"
            )))
        }
    }
}

/// Rectangle in a view's normalized `[0,1]²` frame. `mirrored` means the view
/// runs right-to-left relative to the original image, so sampling walks the
/// region in reverse column order to stay aligned with original coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub mirrored: bool,
}

impl Region {
    pub const FULL: Region = Region {
        x: 0.0,
        y: 0.0,
        w: 1.0,
        h: 1.0,
        mirrored: false,
    };

    /// Maps the region back to original-image coordinates `(x0, y0, x1, y1)`.
    pub fn to_original(&self, g: &ViewGeometry) -> (f64, f64, f64, f64) {
        let x = if self.mirrored { 1.0 - self.x - self.w } else { self.x };
        let x0 = g.crop_x + x * g.crop_w;
        let y0 = g.crop_y + self.y * g.crop_h;
        (x0, y0, x0 + self.w * g.crop_w, y0 + self.h * g.crop_h)
    }
}

fn to_view(g: &ViewGeometry, x0: f64, y0: f64, x1: f64, y1: f64) -> Region {
    let clamp = |v: f64| v.clamp(0.0, 1.0);
    let rx0 = clamp((x0 - g.crop_x) / g.crop_w);
    let rx1 = clamp((x1 - g.crop_x) / g.crop_w);
    let ry0 = clamp((y0 - g.crop_y) / g.crop_h);
    let ry1 = clamp((y1 - g.crop_y) / g.crop_h);
    let (x, w) = if g.flip_h {
        (1.0 - rx1, rx1 - rx0)
    } else {
        (rx0, rx1 - rx0)
    };
    Region {
        x,
        y: ry0,
        w,
        h: ry1 - ry0,
        mirrored: g.flip_h,
    }
}

/// Intersection of the two crops, expressed in each view's frame.
pub fn overlap_region(gi: &ViewGeometry, gj: &ViewGeometry) -> Option<(Region, Region)> {
    let x0 = gi.crop_x.max(gj.crop_x);
    let x1 = (gi.crop_x + gi.crop_w).min(gj.crop_x + gj.crop_w);
    let y0 = gi.crop_y.max(gj.crop_y);
    let y1 = (gi.crop_y + gi.crop_h).min(gj.crop_y + gj.crop_h);
    if x1 - x0 <= 0.0 || y1 - y0 <= 0.0 {
        return None;
    }
    Some((to_view(gi, x0, y0, x1, y1), to_view(gj, x0, y0, x1, y1)))
}

#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(start: f64, extent: f64, mirrored: bool, out: usize, size: usize) -> Vec<Tap> {
    (0..out)
        .map(|s| {
            let mut u = (s as f64 + 0.5) / out as f64;
            if mirrored {
                u = 1.0 - u;
            }
            let coord = ((start + u * extent) * size as f64 - 0.5).clamp(0.0, (size - 1) as f64);
            let lo = coord.floor() as usize;
            let hi = (lo + 1).min(size - 1);
            Tap {
                lo,
                hi,
                frac: coord - lo as f64,
            }
        })
        .collect()
}

/// Precomputed bilinear sampling of a region onto an `out_h × out_w` grid,
/// with half-pixel centers and border clamping. Linear, so it also provides
/// the adjoint for backpropagation.
#[derive(Debug, Clone)]
pub struct BilinearSampler {
    in_h: usize,
    in_w: usize,
    rows: Vec<Tap>,
    cols: Vec<Tap>,
}

impl BilinearSampler {
    pub fn new(in_h: usize, in_w: usize, region: &Region, out_h: usize, out_w: usize) -> Result<Self> {
        if in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0 {
            return Err(Error::Dimension("sampler dims must be positive".into()));
        }
        let inside = |v: f64| (-1e-12..=1.0 + 1e-12).contains(&v);
        if !(inside(region.x)
            && inside(region.y)
            && inside(region.x + region.w)
            && inside(region.y + region.h)
            && region.w >= 0.0
            && region.h >= 0.0)
        {
            return Err(Error::InvalidArgument(format!("region {region:?} outside [0,1]²")));
        }
        Ok(Self {
            in_h,
            in_w,
            rows: taps(region.y, region.h, false, out_h, in_h),
            cols: taps(region.x, region.w, region.mirrored, out_w, in_w),
        })
    }

    pub fn out_h(&self) -> usize {
        self.rows.len()
    }

    pub fn out_w(&self) -> usize {
        self.cols.len()
    }

    /// Samples `channels` planes laid out channel-major.
    pub fn forward_raw(&self, input: &[f64], channels: usize) -> Vec<f64> {
        let plane = self.in_h * self.in_w;
        let mut out = Vec::with_capacity(channels * self.out_h() * self.out_w());
        for k in 0..channels {
            let src = &input[k * plane..(k + 1) * plane];
            for r in &self.rows {
                let top = &src[r.lo * self.in_w..(r.lo + 1) * self.in_w];
                let bot = &src[r.hi * self.in_w..(r.hi + 1) * self.in_w];
                for c in &self.cols {
                    let t = top[c.lo] + c.frac * (top[c.hi] - top[c.lo]);
                    let b = bot[c.lo] + c.frac * (bot[c.hi] - bot[c.lo]);
                    out.push(t + r.frac * (b - t));
                }
            }
        }
        out
    }

    pub fn forward(&self, map: &FeatureMap) -> Result<FeatureMap> {
        if map.height() != self.in_h || map.width() != self.in_w {
            return Err(Error::Dimension(format!(
                "sampler built for {}x{}, map is {}x{}",
                self.in_h,
                self.in_w,
                map.height(),
                map.width()
            )));
        }
        let data = self.forward_raw(map.data(), map.channels());
        FeatureMap::new(map.channels(), self.out_h(), self.out_w(), data)
    }

    /// Adjoint: scatters an output-shaped gradient back onto the input grid.
    pub fn backward(&self, grad_out: &[f64], channels: usize) -> Vec<f64> {
        let plane = self.in_h * self.in_w;
        let out_plane = self.out_h() * self.out_w();
        let mut grad_in = vec![0.0; channels * plane];
        for k in 0..channels {
            let dst = &mut grad_in[k * plane..(k + 1) * plane];
            let src = &grad_out[k * out_plane..(k + 1) * out_plane];
            let mut idx = 0;
            for r in &self.rows {
                for c in &self.cols {
                    let g = src[idx];
                    idx += 1;
                    let (wt, wb) = (1.0 - r.frac, r.frac);
                    let (wl, wr) = (1.0 - c.frac, c.frac);
                    dst[r.lo * self.in_w + c.lo] += g * wt * wl;
                    dst[r.lo * self.in_w + c.hi] += g * wt * wr;
                    dst[r.hi * self.in_w + c.lo] += g * wb * wl;
                    dst[r.hi * self.in_w + c.hi] += g * wb * wr;
                }
            }
        }
        grad_in
    }
}

pub fn resample_region(map: &FeatureMap, region: &Region, out_h: usize, out_w: usize) -> Result<FeatureMap> {
    BilinearSampler::new(map.height(), map.width(), region, out_h, out_w)?.forward(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_geometries_give_full_frames() {
        let g = ViewGeometry::new(8.0, 4.0, 32.0, 40.0, false, 64.0, 64.0).unwrap();
        let (a, b) = overlap_region(&g, &g).unwrap();
        assert_eq!(a, Region::FULL);
        assert_eq!(b, Region::FULL);
    }

    #[test]
    fn disjoint_crops_have_no_overlap() {
        let a = ViewGeometry::new(0.0, 0.0, 20.0, 64.0, false, 64.0, 64.0).unwrap();
        let b = ViewGeometry::new(30.0, 0.0, 20.0, 64.0, false, 64.0, 64.0).unwrap();
        assert!(overlap_region(&a, &b).is_none());
        // touching edges: zero-width intersection
        let c = ViewGeometry::new(20.0, 0.0, 20.0, 64.0, false, 64.0, 64.0).unwrap();
        assert!(overlap_region(&a, &c).is_none());
    }

    #[test]
    fn half_crops_interval_intersection() {
        // A = [0,32), B = [16,48): overlap [16,32) = right half of A, left half of B
        let a = ViewGeometry::new(0.0, 0.0, 32.0, 64.0, false, 64.0, 64.0).unwrap();
        let b = ViewGeometry::new(16.0, 0.0, 32.0, 64.0, false, 64.0, 64.0).unwrap();
        let (ra, rb) = overlap_region(&a, &b).unwrap();
        assert_eq!((ra.x, ra.w, ra.y, ra.h), (0.5, 0.5, 0.0, 1.0));
        assert_eq!((rb.x, rb.w, rb.y, rb.h), (0.0, 0.5, 0.0, 1.0));

        // flipping B mirrors its frame: the overlap is now its right half
        let bf = ViewGeometry { flip_h: true, ..b };
        let (_, rbf) = overlap_region(&a, &bf).unwrap();
        assert_eq!((rbf.x, rbf.w), (0.5, 0.5));
        assert!(rbf.mirrored);
        assert_eq!(rbf.to_original(&bf), rb.to_original(&b));
    }

    #[test]
    fn rejects_out_of_bounds_crop() {
        assert!(ViewGeometry::new(40.0, 0.0, 32.0, 10.0, false, 64.0, 64.0).is_err());
    }

    #[test]
    fn identity_resample() {
        let m = FeatureMap::from_fn(2, 3, 4, |k, y, x| (k * 12 + y * 4 + x) as f64 * 0.37).unwrap();
        let r = resample_region(&m, &Region::FULL, 3, 4).unwrap();
        for (a, b) in r.data().iter().zip(m.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_stays_constant() {
        let m = FeatureMap::new(1, 4, 4, vec![2.5; 16]).unwrap();
        let region = Region { x: 0.1, y: 0.3, w: 0.5, h: 0.6, mirrored: true };
        let r = resample_region(&m, &region, 5, 3).unwrap();
        assert!(r.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn halving_takes_midpoint() {
        let m = FeatureMap::new(1, 1, 2, vec![1.0, 3.0]).unwrap();
        let r = resample_region(&m, &Region::FULL, 1, 1).unwrap();
        assert!((r.data()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mirrored_full_region_flips_columns() {
        let m = FeatureMap::from_fn(1, 2, 3, |_, y, x| (y * 3 + x) as f64).unwrap();
        let region = Region { mirrored: true, ..Region::FULL };
        let r = resample_region(&m, &region, 2, 3).unwrap();
        let expected = [2.0, 1.0, 0.0, 5.0, 4.0, 3.0];
        for (a, b) in r.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        let region = Region { x: 0.2, y: 0.1, w: 0.7, h: 0.8, mirrored: true };
        let s = BilinearSampler::new(5, 6, &region, 4, 3).unwrap();
        let x: Vec<f64> = (0..2 * 30).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let g: Vec<f64> = (0..2 * 12).map(|i| ((i * 13 % 7) as f64) * 0.3 - 1.0).collect();
        let ax = s.forward_raw(&x, 2);
        let atg = s.backward(&g, 2);
        let lhs: f64 = ax.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&atg).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
