//! Patch encoder with three projection heads and a hand-written backward pass.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::types::FeatureMap;

pub const DEFAULT_PATCH: usize = 8;
pub const DEFAULT_EMBED: usize = 16;
const CKPT_MAGIC: &[u8; 4] = b"CKP1";

/// One named parameter tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Dense `out × in` layer addressed by offsets into the parameter vector.
#[derive(Debug, Clone, Copy)]
struct Linear {
    w: usize,
    b: usize,
    input: usize,
    output: usize,
}

impl Linear {
    /// `rows × input` → `rows × output`.
    fn forward(&self, params: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
        let w = &params[self.w..self.w + self.output * self.input];
        let b = &params[self.b..self.b + self.output];
        let mut y = Vec::with_capacity(rows * self.output);
        for r in 0..rows {
            let xr = &x[r * self.input..(r + 1) * self.input];
            for o in 0..self.output {
                let wo = &w[o * self.input..(o + 1) * self.input];
                y.push(b[o] + wo.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    fn backward(&self, params: &[f64], x: &[f64], dy: &[f64], rows: usize, grad: &mut [f64]) -> Vec<f64> {
        let w = &params[self.w..self.w + self.output * self.input];
        let mut dx = vec![0.0; rows * self.input];
        for r in 0..rows {
            let xr = &x[r * self.input..(r + 1) * self.input];
            let dxr = &mut dx[r * self.input..(r + 1) * self.input];
            for o in 0..self.output {
                let g = dy[r * self.output + o];
                if g == 0.0 {
                    continue;
                }
                grad[self.b + o] += g;
                let gw = &mut grad[self.w + o * self.input..self.w + (o + 1) * self.input];
                let wo = &w[o * self.input..(o + 1) * self.input];
                for i in 0..self.input {
                    gw[i] += g * xr[i];
                    dxr[i] += g * wo[i];
                }
            }
        }
        dx
    }
}

fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

fn relu_backward(pre: &[f64], dy: &[f64]) -> Vec<f64> {
    pre.iter().zip(dy).map(|(&p, &g)| if p > 0.0 { g } else { 0.0 }).collect()
}

/// Two linear layers with a rectifier between them.
#[derive(Debug, Clone, Copy)]
struct TwoLayer {
    first: Linear,
    second: Linear,
}

struct TwoLayerCache {
    input: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
}

impl TwoLayer {
    fn forward(&self, params: &[f64], x: &[f64], rows: usize) -> (Vec<f64>, TwoLayerCache) {
        let pre = self.first.forward(params, x, rows);
        let hidden = relu(&pre);
        let out = self.second.forward(params, &hidden, rows);
        (
            out,
            TwoLayerCache {
                input: x.to_vec(),
                pre,
                hidden,
            },
        )
    }

    fn backward(&self, params: &[f64], cache: &TwoLayerCache, dy: &[f64], rows: usize, grad: &mut [f64]) -> Vec<f64> {
        let dh = self.second.backward(params, &cache.hidden, dy, rows, grad);
        let dpre = relu_backward(&cache.pre, &dh);
        self.first.backward(params, &cache.input, &dpre, rows, grad)
    }
}

/// Forward activations of one image, kept for the backward pass.
pub struct EncodeCache {
    patches: Vec<f64>,
    trunk: TwoLayerCache,
    g: TwoLayerCache,
    phi: TwoLayerCache,
    eta: TwoLayerCache,
    rows: usize,
}

/// Outputs of [`ToyEncoder::encode`].
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub dense: FeatureMap,
    pub pooled_g: Vec<f64>,
    pub pooled_phi: Vec<f64>,
    pub dense_eta: FeatureMap,
}

/// Patch-linear embedding, a two-layer per-patch trunk, and heads g
/// (instance), φ (weak-label) and η (dense alignment).
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    patch_size: usize,
    embed_dim: usize,
    in_channels: usize,
    params: Vec<f64>,
    tensors: Vec<TensorSpec>,
}

struct Layers {
    embed: Linear,
    trunk: TwoLayer,
    g: TwoLayer,
    phi: TwoLayer,
    eta: TwoLayer,
}

fn layout(in_channels: usize, patch: usize, dim: usize) -> Vec<TensorSpec> {
    let patch_len = in_channels * patch * patch;
    let mut specs = Vec::new();
    let mut offset = 0;
    let mut push = |name: &str, shape: Vec<usize>| {
        let len: usize = shape.iter().product();
        specs.push(TensorSpec {
            name: name.to_string(),
            shape,
            offset,
        });
        offset += len;
    };
    push("embed.w", vec![dim, patch_len]);
    push("embed.b", vec![dim]);
    for block in ["trunk", "g", "phi", "eta"] {
        push(&format!("{block}.0.w"), vec![dim, dim]);
        push(&format!("{block}.0.b"), vec![dim]);
        push(&format!("{block}.1.w"), vec![dim, dim]);
        push(&format!("{block}.1.b"), vec![dim]);
    }
    specs
}

impl ToyEncoder {
    /// He-initialized weights, zero biases.
    pub fn new<R: Rng>(patch_size: usize, embed_dim: usize, rng: &mut R) -> Result<Self> {
        let mut enc = Self::zeros(patch_size, embed_dim)?;
        for spec in &enc.tensors {
            if spec.shape.len() != 2 {
                continue;
            }
            let std = (2.0 / spec.shape[1] as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for v in &mut enc.params[spec.offset..spec.offset + spec.len()] {
                *v = normal.sample(rng);
            }
        }
        Ok(enc)
    }

    pub fn zeros(patch_size: usize, embed_dim: usize) -> Result<Self> {
        if patch_size == 0 || embed_dim == 0 {
            return Err(Error::InvalidArgument("patch size and embedding dim must be positive".into()));
        }
        let in_channels = 3;
        let tensors = layout(in_channels, patch_size, embed_dim);
        let total = tensors.last().map(|t| t.offset + t.len()).unwrap_or(0);
        Ok(Self {
            patch_size,
            embed_dim,
            in_channels,
            params: vec![0.0; total],
            tensors,
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    fn tensor(&self, name: &str) -> usize {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .unwrap_or_else(|| panic!("no tensor named {name}"))
            .offset
    }

    fn layers(&self) -> Layers {
        let d = self.embed_dim;
        let lin = |name: &str, input: usize| Linear {
            w: self.tensor(&format!("{name}.w")),
            b: self.tensor(&format!("{name}.b")),
            input,
            output: d,
        };
        let two = |block: &str| TwoLayer {
            first: lin(&format!("{block}.0"), d),
            second: lin(&format!("{block}.1"), d),
        };
        Layers {
            embed: lin("embed", self.in_channels * self.patch_size * self.patch_size),
            trunk: two("trunk"),
            g: two("g"),
            phi: two("phi"),
            eta: two("eta"),
        }
    }

    /// Row-major `(patches × 3·p·p)` matrix of centered pixel values.
    fn patchify(&self, image: &FeatureMap) -> Result<(Vec<f64>, usize, usize)> {
        let p = self.patch_size;
        if image.channels() != self.in_channels || !image.height().is_multiple_of(p) || !image.width().is_multiple_of(p) {
            return Err(Error::Dimension(format!(
                "encoder expects {} channels and sides divisible by {p}, got {}x{}x{}",
                self.in_channels,
                image.channels(),
                image.height(),
                image.width()
            )));
        }
        let (gh, gw) = (image.height() / p, image.width() / p);
        let mut out = Vec::with_capacity(gh * gw * self.in_channels * p * p);
        for py in 0..gh {
            for px in 0..gw {
                for k in 0..self.in_channels {
                    for dy in 0..p {
                        for dx in 0..p {
                            out.push(image.get(k, py * p + dy, px * p + dx) - 0.5);
                        }
                    }
                }
            }
        }
        Ok((out, gh, gw))
    }

    pub fn encode(&self, image: &FeatureMap) -> Result<Encoded> {
        Ok(self.encode_with_cache(image)?.0)
    }

    pub fn encode_with_cache(&self, image: &FeatureMap) -> Result<(Encoded, EncodeCache)> {
        let l = self.layers();
        let d = self.embed_dim;
        let (patches, gh, gw) = self.patchify(image)?;
        let rows = gh * gw;
        let embedded = l.embed.forward(&self.params, &patches, rows);
        let (dense_rows, trunk) = l.trunk.forward(&self.params, &embedded, rows);
        let mut pooled = vec![0.0; d];
        for r in 0..rows {
            for k in 0..d {
                pooled[k] += dense_rows[r * d + k] / rows as f64;
            }
        }
        let (pooled_g, g) = l.g.forward(&self.params, &pooled, 1);
        let (pooled_phi, phi) = l.phi.forward(&self.params, &pooled, 1);
        let (eta_rows, eta) = l.eta.forward(&self.params, &dense_rows, rows);

        let encoded = Encoded {
            dense: rows_to_map(&dense_rows, d, gh, gw)?,
            pooled_g,
            pooled_phi,
            dense_eta: rows_to_map(&eta_rows, d, gh, gw)?,
        };
        let cache = EncodeCache {
            patches,
            trunk,
            g,
            phi,
            eta,
            rows,
        };
        Ok((encoded, cache))
    }

    /// Accumulates parameter gradients for one image given upstream gradients
    /// on `pooled_g`, `pooled_phi` and `dense_eta` (channel-major).
    pub fn backward(
        &self,
        cache: &EncodeCache,
        d_g: &[f64],
        d_phi: &[f64],
        d_eta: &[f64],
        grad: &mut [f64],
    ) {
        let l = self.layers();
        let d = self.embed_dim;
        let rows = cache.rows;
        let d_eta_rows = map_to_rows(d_eta, d, rows);
        let mut d_dense = l.eta.backward(&self.params, &cache.eta, &d_eta_rows, rows, grad);
        let d_pool_g = l.g.backward(&self.params, &cache.g, d_g, 1, grad);
        let d_pool_phi = l.phi.backward(&self.params, &cache.phi, d_phi, 1, grad);
        for r in 0..rows {
            for k in 0..d {
                d_dense[r * d + k] += (d_pool_g[k] + d_pool_phi[k]) / rows as f64;
            }
        }
        let d_embedded = l.trunk.backward(&self.params, &cache.trunk, &d_dense, rows, grad);
        l.embed.backward(&self.params, &cache.patches, &d_embedded, rows, grad);
    }

    /// Writes the parameters as named binary32 tensors.
    pub fn save<W: Write>(&self, mut sink: W) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CKPT_MAGIC);
        buf.extend_from_slice(&(self.patch_size as u32).to_le_bytes());
        buf.extend_from_slice(&(self.embed_dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            buf.extend_from_slice(t.name.as_bytes());
            buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &s in &t.shape {
                buf.extend_from_slice(&(s as u32).to_le_bytes());
            }
            for &v in &self.params[t.offset..t.offset + t.len()] {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        sink.write_all(&buf).map_err(|e| Error::io(0, e))?;
        sink.flush().map_err(|e| Error::io(buf.len() as u64, e))
    }

    pub fn load<R: Read>(mut source: R) -> Result<Self> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes).map_err(|e| Error::io(0, e))?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != CKPT_MAGIC {
            return Err(Error::Format("checkpoint magic is not CKP1".into()));
        }
        let patch = cur.u32()? as usize;
        let dim = cur.u32()? as usize;
        let mut enc = Self::zeros(patch, dim)?;
        let count = cur.u32()? as usize;
        if count != enc.tensors.len() {
            return Err(Error::Format(format!(
                "checkpoint has {count} tensors, expected {}",
                enc.tensors.len()
            )));
        }
        for i in 0..count {
            let name_len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| Error::Format(format!("tensor {i} name is not UTF-8")))?
                .to_string();
            let ndims = cur.u32()? as usize;
            let shape = (0..ndims).map(|_| cur.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let spec = enc.tensors[i].clone();
            if name != spec.name || shape != spec.shape {
                return Err(Error::Format(format!(
                    "tensor {i} is {name} {shape:?}, expected {} {:?}",
                    spec.name, spec.shape
                )));
            }
            for j in 0..spec.len() {
                let v = f32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes")) as f64;
                if !v.is_finite() {
                    return Err(Error::NonFinite { index: spec.offset + j });
                }
                enc.params[spec.offset + j] = v;
            }
        }
        if cur.pos != bytes.len() {
            return Err(Error::Length {
                expected: cur.pos as u64,
                found: bytes.len() as u64,
            });
        }
        Ok(enc)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Length {
                expected: (self.pos + n) as u64,
                found: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn rows_to_map(rows: &[f64], d: usize, h: usize, w: usize) -> Result<FeatureMap> {
    FeatureMap::from_fn(d, h, w, |k, y, x| rows[(y * w + x) * d + k])
}

fn map_to_rows(data: &[f64], d: usize, n: usize) -> Vec<f64> {
    let mut rows = vec![0.0; n * d];
    for k in 0..d {
        for p in 0..n {
            rows[p * d + k] = data[k * n + p];
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn image(seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::from_fn(3, 16, 16, |_, _, _| rng.random::<f64>()).unwrap()
    }

    #[test]
    fn output_shapes() {
        let enc = ToyEncoder::new(8, 16, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let img = FeatureMap::zeros(3, 64, 64).unwrap();
        let out = enc.encode(&img).unwrap();
        assert_eq!((out.dense.channels(), out.dense.height(), out.dense.width()), (16, 8, 8));
        assert_eq!(out.pooled_g.len(), 16);
        assert_eq!(out.dense_eta.height(), 8);
        assert!(enc.encode(&FeatureMap::zeros(3, 60, 64).unwrap()).is_err());
    }

    #[test]
    fn zero_parameters_give_constant_outputs() {
        let enc = ToyEncoder::zeros(4, 5).unwrap();
        let out = enc.encode(&image(1)).unwrap();
        assert!(out.dense.data().iter().all(|&v| v == 0.0));
        assert!(out.pooled_g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn contrast_changes_outputs() {
        let enc = ToyEncoder::new(4, 6, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let img = image(2);
        let doubled = FeatureMap::from_fn(3, 16, 16, |k, y, x| 2.0 * img.get(k, y, x)).unwrap();
        assert_ne!(enc.encode(&img).unwrap(), enc.encode(&doubled).unwrap());
    }

    #[test]
    fn backward_matches_finite_differences() {
        use crate::losses::{numeric_gradient, relative_error};
        let mut enc = ToyEncoder::new(4, 5, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let img = image(4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // zero biases put dead-input pixels exactly on the ReLU kink
        for p in enc.params_mut() {
            *p += 0.1 * (rng.random::<f64>() - 0.5);
        }
        let wg: Vec<f64> = (0..5).map(|_| rng.random::<f64>() - 0.5).collect();
        let wp: Vec<f64> = (0..5).map(|_| rng.random::<f64>() - 0.5).collect();
        let we: Vec<f64> = (0..5 * 16).map(|_| rng.random::<f64>() - 0.5).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let objective = |enc: &ToyEncoder| {
            let o = enc.encode(&img).unwrap();
            dot(&o.pooled_g, &wg) + dot(&o.pooled_phi, &wp) + dot(o.dense_eta.data(), &we)
        };
        let (_, cache) = enc.encode_with_cache(&img).unwrap();
        let mut grad = vec![0.0; enc.params().len()];
        enc.backward(&cache, &wg, &wp, &we, &mut grad);
        let base = enc.params().to_vec();
        let numeric = numeric_gradient(
            |p| {
                enc.params_mut().copy_from_slice(p);
                objective(&enc)
            },
            &base,
            1e-5,
        )
        .unwrap();
        assert!(relative_error(&grad, &numeric) < 1e-6, "{}", relative_error(&grad, &numeric));
    }

    #[test]
    fn checkpoint_round_trip() {
        let enc = ToyEncoder::new(8, 16, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let mut buf = Vec::new();
        enc.save(&mut buf).unwrap();
        let loaded = ToyEncoder::load(buf.as_slice()).unwrap();
        for (a, b) in enc.params().iter().zip(loaded.params()) {
            assert_eq!(*a as f32, *b as f32);
        }
        let mut again = Vec::new();
        loaded.save(&mut again).unwrap();
        assert_eq!(buf, again);
        assert!(ToyEncoder::load(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(ToyEncoder::load(bad.as_slice()), Err(Error::Format(_))));
    }
}
