//! Hash-grid neural field: multi-resolution hash encoding feeding a small MLP
//! that outputs density and color, with exact reverse-mode gradients and Adam.
//!
//! Parameter layout (all `f32`, contiguous):
//! 1. hash tables, level-major: level `l` occupies `table_size * F` values,
//!    row `r` of that level starts at `l * table_size * F + r * F`;
//! 2. MLP layers, input to output: for each layer its weights as a row-major
//!    `fan_out x fan_in` matrix followed by its `fan_out` biases.

mod adam;
mod arch;
mod params;

use rand::Rng;

pub use adam::{adam_step, AdamState};
pub use arch::{DensityActivation, FieldArch, DENSITY_CLAMP, OUTPUT_DIM};
pub use params::{init_params, ParamVector};

use crate::{Error, Result};

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldOutput {
    pub sigma: f32,
    pub rgb: [f32; 3],
}

#[derive(Clone, Debug)]
struct Level {
    resolution: u32,
    dense: bool,
    offset: usize,
}

#[derive(Clone, Debug)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    biases: usize,
}

/// An architecture with its parameter layout resolved.
#[derive(Clone, Debug)]
pub struct FieldModel {
    arch: FieldArch,
    levels: Vec<Level>,
    layers: Vec<Layer>,
    param_count: usize,
}

/// Intermediate values of a batched forward pass, consumed by [`FieldModel::backward`].
#[derive(Default, Clone, Debug)]
pub struct ForwardCache {
    n: usize,
    corner_rows: Vec<u32>,
    corner_weights: Vec<f32>,
    /// Per layer, the layer inputs for every point (features for layer 0,
    /// post-ReLU activations afterwards).
    inputs: Vec<Vec<f32>>,
    raw: Vec<f32>,
    outputs: Vec<FieldOutput>,
}

impl ForwardCache {
    pub fn outputs(&self) -> &[FieldOutput] {
        &self.outputs
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

impl FieldModel {
    pub fn new(arch: &FieldArch) -> Result<Self> {
        arch.validate()?;
        let table = arch.table_size();
        let f = arch.features_per_level as usize;
        let levels = (0..arch.hash_levels)
            .map(|l| {
                let resolution = arch.level_resolution(l);
                let verts = (resolution as u64 + 1).pow(3);
                Level {
                    resolution,
                    dense: verts <= table as u64,
                    offset: l as usize * table * f,
                }
            })
            .collect();
        let mut offset = arch.hash_param_count();
        let layers = arch
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let layer = Layer {
                    fan_in,
                    fan_out,
                    weights: offset,
                    biases: offset + fan_in * fan_out,
                };
                offset += fan_in * fan_out + fan_out;
                layer
            })
            .collect();
        Ok(Self {
            arch: arch.clone(),
            levels,
            layers,
            param_count: offset,
        })
    }

    pub fn arch(&self) -> &FieldArch {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Parameter offset and fan-in of every dense layer's weight block.
    pub(crate) fn weight_blocks(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.layers.iter().map(|l| (l.weights, l.fan_in, l.fan_out))
    }

    fn check_len(&self, params: &[f32]) -> Result<()> {
        if params.len() != self.param_count {
            return Err(Error::LengthMismatch {
                expected: self.param_count,
                actual: params.len(),
            });
        }
        Ok(())
    }

    #[inline]
    fn row_index(&self, level: &Level, x: u32, y: u32, z: u32) -> usize {
        let table = self.arch.table_size();
        if level.dense {
            let side = level.resolution as usize + 1;
            x as usize + side * (y as usize + side * z as usize)
        } else {
            let h =
                x.wrapping_mul(PRIMES[0]) ^ y.wrapping_mul(PRIMES[1]) ^ z.wrapping_mul(PRIMES[2]);
            h as usize & (table - 1)
        }
    }

    /// Fills the 8 corner row offsets and trilinear weights of every level.
    fn encode_corners(&self, p: [f32; 3], rows: &mut [u32], weights: &mut [f32]) {
        let f = self.arch.features_per_level as usize;
        let p = [
            p[0].clamp(0.0, 1.0),
            p[1].clamp(0.0, 1.0),
            p[2].clamp(0.0, 1.0),
        ];
        for (l, level) in self.levels.iter().enumerate() {
            let res = level.resolution;
            let mut cell = [0u32; 3];
            let mut frac = [0f32; 3];
            for k in 0..3 {
                let pos = p[k] * res as f32;
                let c = (pos.floor() as u32).min(res - 1);
                cell[k] = c;
                frac[k] = pos - c as f32;
            }
            for corner in 0..8 {
                let d = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
                let mut w = 1.0f32;
                for k in 0..3 {
                    w *= if d[k] == 1 { frac[k] } else { 1.0 - frac[k] };
                }
                let row = self.row_index(
                    level,
                    cell[0] + d[0] as u32,
                    cell[1] + d[1] as u32,
                    cell[2] + d[2] as u32,
                );
                rows[l * 8 + corner] = (level.offset + row * f) as u32;
                weights[l * 8 + corner] = w;
            }
        }
    }

    /// Multi-resolution hash features of one point, length `L * F`.
    pub fn hash_encode(&self, params: &[f32], p: [f32; 3]) -> Vec<f32> {
        let f = self.arch.features_per_level as usize;
        let nl = self.levels.len();
        let mut rows = vec![0u32; nl * 8];
        let mut weights = vec![0f32; nl * 8];
        self.encode_corners(p, &mut rows, &mut weights);
        let mut out = vec![0f32; nl * f];
        for l in 0..nl {
            for c in 0..8 {
                let row = rows[l * 8 + c] as usize;
                let w = weights[l * 8 + c];
                for j in 0..f {
                    out[l * f + j] += w * params[row + j];
                }
            }
        }
        out
    }

    /// Batched forward pass recording everything [`Self::backward`] needs.
    pub fn forward(
        &self,
        params: &[f32],
        points: &[[f32; 3]],
        cache: &mut ForwardCache,
    ) -> Result<()> {
        self.check_len(params)?;
        let n = points.len();
        let nl = self.levels.len();
        let f = self.arch.features_per_level as usize;
        let enc_dim = nl * f;
        cache.n = n;
        cache.corner_rows.resize(n * nl * 8, 0);
        cache.corner_weights.resize(n * nl * 8, 0.0);
        cache.inputs.resize(self.layers.len(), Vec::new());
        for (k, layer) in self.layers.iter().enumerate() {
            cache.inputs[k].resize(n * layer.fan_in, 0.0);
        }
        cache.raw.resize(n * OUTPUT_DIM, 0.0);
        cache.outputs.clear();

        let mut scratch = vec![0f32; self.arch.hidden_width as usize + OUTPUT_DIM];
        for (i, p) in points.iter().enumerate() {
            let rows = &mut cache.corner_rows[i * nl * 8..(i + 1) * nl * 8];
            let weights = &mut cache.corner_weights[i * nl * 8..(i + 1) * nl * 8];
            self.encode_corners(*p, rows, weights);
            let feats = &mut cache.inputs[0][i * enc_dim..(i + 1) * enc_dim];
            feats.fill(0.0);
            for l in 0..nl {
                for c in 0..8 {
                    let row = rows[l * 8 + c] as usize;
                    let w = weights[l * 8 + c];
                    for j in 0..f {
                        feats[l * f + j] += w * params[row + j];
                    }
                }
            }
            for (k, layer) in self.layers.iter().enumerate() {
                let out = &mut scratch[..layer.fan_out];
                {
                    let input = &cache.inputs[k][i * layer.fan_in..(i + 1) * layer.fan_in];
                    let w = &params[layer.weights..layer.biases];
                    let b = &params[layer.biases..layer.biases + layer.fan_out];
                    for (o, out_o) in out.iter_mut().enumerate() {
                        let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                        let mut acc = b[o];
                        for (wv, xv) in row.iter().zip(input) {
                            acc += wv * xv;
                        }
                        *out_o = acc;
                    }
                }
                if k + 1 < self.layers.len() {
                    let next = &mut cache.inputs[k + 1][i * layer.fan_out..(i + 1) * layer.fan_out];
                    for (dst, v) in next.iter_mut().zip(out.iter()) {
                        *dst = v.max(0.0);
                    }
                } else {
                    cache.raw[i * OUTPUT_DIM..(i + 1) * OUTPUT_DIM].copy_from_slice(out);
                }
            }
            let raw = &cache.raw[i * OUTPUT_DIM..(i + 1) * OUTPUT_DIM];
            if raw.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("field output at point {i}")));
            }
            cache.outputs.push(FieldOutput {
                sigma: density(self.arch.density_activation, raw[0]),
                rgb: [sigmoid(raw[1]), sigmoid(raw[2]), sigmoid(raw[3])],
            });
        }
        Ok(())
    }

    /// The forward pass in 64-bit arithmetic, as `[sigma, r, g, b]` per point.
    /// Serves as the reference for finite-difference gradient checks.
    pub fn forward_f64(&self, params: &[f64], points: &[[f32; 3]]) -> Result<Vec<[f64; 4]>> {
        if params.len() != self.param_count {
            return Err(Error::LengthMismatch {
                expected: self.param_count,
                actual: params.len(),
            });
        }
        let f = self.arch.features_per_level as usize;
        let mut out = Vec::with_capacity(points.len());
        for p in points {
            let mut x: Vec<f64> = vec![0.0; self.levels.len() * f];
            for (l, level) in self.levels.iter().enumerate() {
                let res = level.resolution;
                let mut cell = [0u32; 3];
                let mut frac = [0f64; 3];
                for k in 0..3 {
                    let pos = (p[k] as f64).clamp(0.0, 1.0) * res as f64;
                    let c = (pos.floor() as u32).min(res - 1);
                    cell[k] = c;
                    frac[k] = pos - c as f64;
                }
                for corner in 0..8u32 {
                    let d = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
                    let mut w = 1.0;
                    for k in 0..3 {
                        w *= if d[k] == 1 { frac[k] } else { 1.0 - frac[k] };
                    }
                    let row = level.offset
                        + self.row_index(level, cell[0] + d[0], cell[1] + d[1], cell[2] + d[2]) * f;
                    for j in 0..f {
                        x[l * f + j] += w * params[row + j];
                    }
                }
            }
            for (k, layer) in self.layers.iter().enumerate() {
                let mut y: Vec<f64> = (0..layer.fan_out)
                    .map(|o| {
                        let w = &params[layer.weights + o * layer.fan_in..layer.weights + (o + 1) * layer.fan_in];
                        params[layer.biases + o] + w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()
                    })
                    .collect();
                if k + 1 < self.layers.len() {
                    y.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                x = y;
            }
            let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
            let sigma = match self.arch.density_activation {
                DensityActivation::ExpClamped => x[0].exp().min(DENSITY_CLAMP as f64),
                DensityActivation::Softplus => {
                    if x[0] > 20.0 {
                        x[0]
                    } else {
                        x[0].exp().ln_1p()
                    }
                }
            };
            out.push([sigma, sig(x[1]), sig(x[2]), sig(x[3])]);
        }
        Ok(out)
    }

    /// Accumulates `d loss / d params` into `grad` given upstream gradients of
    /// every output of the last [`Self::forward`] call.
    pub fn backward(
        &self,
        params: &[f32],
        cache: &ForwardCache,
        d_sigma: &[f32],
        d_rgb: &[[f32; 3]],
        grad: &mut [f32],
    ) -> Result<()> {
        self.check_len(params)?;
        self.check_len(grad)?;
        if d_sigma.len() != cache.n || d_rgb.len() != cache.n {
            return Err(Error::LengthMismatch {
                expected: cache.n,
                actual: d_sigma.len().min(d_rgb.len()),
            });
        }
        let nl = self.levels.len();
        let f = self.arch.features_per_level as usize;
        let width = (self.arch.hidden_width as usize).max(self.arch.encoding_dim());
        let mut d_out = vec![0f32; width.max(OUTPUT_DIM)];
        let mut d_in = vec![0f32; width.max(OUTPUT_DIM)];
        for i in 0..cache.n {
            let raw = &cache.raw[i * OUTPUT_DIM..(i + 1) * OUTPUT_DIM];
            let out = &cache.outputs[i];
            let ds = d_sigma[i] * density_grad(self.arch.density_activation, raw[0], out.sigma);
            if ds == 0.0 && d_rgb[i] == [0.0; 3] {
                continue;
            }
            d_out[0] = ds;
            for c in 0..3 {
                let s = out.rgb[c];
                d_out[1 + c] = d_rgb[i][c] * s * (1.0 - s);
            }
            for k in (0..self.layers.len()).rev() {
                let layer = &self.layers[k];
                let input = &cache.inputs[k][i * layer.fan_in..(i + 1) * layer.fan_in];
                let d_in_k = &mut d_in[..layer.fan_in];
                d_in_k.fill(0.0);
                for o in 0..layer.fan_out {
                    let g = d_out[o];
                    if g == 0.0 {
                        continue;
                    }
                    grad[layer.biases + o] += g;
                    let wrow = layer.weights + o * layer.fan_in;
                    let grow = &mut grad[wrow..wrow + layer.fan_in];
                    let prow = &params[wrow..wrow + layer.fan_in];
                    for j in 0..layer.fan_in {
                        grow[j] += g * input[j];
                        d_in_k[j] += g * prow[j];
                    }
                }
                if k > 0 {
                    // ReLU: the stored input is the post-activation value.
                    for (j, d) in d_in_k.iter_mut().enumerate() {
                        if input[j] <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                d_out[..layer.fan_in].copy_from_slice(d_in_k);
            }
            let rows = &cache.corner_rows[i * nl * 8..(i + 1) * nl * 8];
            let weights = &cache.corner_weights[i * nl * 8..(i + 1) * nl * 8];
            for l in 0..nl {
                for c in 0..8 {
                    let w = weights[l * 8 + c];
                    if w == 0.0 {
                        continue;
                    }
                    let row = rows[l * 8 + c] as usize;
                    for j in 0..f {
                        grad[row + j] += w * d_out[l * f + j];
                    }
                }
            }
        }
        Ok(())
    }
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn density(act: DensityActivation, x: f32) -> f32 {
    match act {
        DensityActivation::ExpClamped => x.exp().min(DENSITY_CLAMP),
        DensityActivation::Softplus => {
            if x > 20.0 {
                x
            } else {
                x.exp().ln_1p()
            }
        }
    }
}

#[inline]
fn density_grad(act: DensityActivation, x: f32, sigma: f32) -> f32 {
    match act {
        DensityActivation::ExpClamped => {
            if sigma < DENSITY_CLAMP {
                sigma
            } else {
                0.0
            }
        }
        DensityActivation::Softplus => sigmoid(x),
    }
}

/// Multi-resolution hash features of `point` (clamped into the unit cube).
pub fn hash_encode(point: [f32; 3], arch: &FieldArch, params: &ParamVector) -> Result<Vec<f32>> {
    let model = FieldModel::new(arch)?;
    model.check_len(&params.values)?;
    Ok(model.hash_encode(&params.values, point))
}

/// Density and color at every point, in batch order.
pub fn field_eval(
    params: &ParamVector,
    arch: &FieldArch,
    points: &[[f32; 3]],
) -> Result<Vec<FieldOutput>> {
    params.check_finite()?;
    let model = FieldModel::new(arch)?;
    let mut cache = ForwardCache::default();
    model.forward(&params.values, points, &mut cache)?;
    Ok(cache.outputs)
}

/// Exact gradient of `sum_i d_sigma[i] * sigma_i + d_rgb[i] . rgb_i` with respect to the parameters.
pub fn field_backward(
    params: &ParamVector,
    arch: &FieldArch,
    points: &[[f32; 3]],
    d_sigma: &[f32],
    d_rgb: &[[f32; 3]],
) -> Result<ParamVector> {
    let model = FieldModel::new(arch)?;
    let mut cache = ForwardCache::default();
    model.forward(&params.values, points, &mut cache)?;
    let mut grad = vec![0f32; model.param_count()];
    model.backward(&params.values, &cache, d_sigma, d_rgb, &mut grad)?;
    Ok(ParamVector::new(grad))
}

/// Uniform random point in the unit cube.
pub fn random_point<R: Rng>(rng: &mut R) -> [f32; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> FieldArch {
        FieldArch {
            hash_levels: 2,
            features_per_level: 2,
            log2_table_size: 4,
            base_resolution: 2,
            per_level_scale: 2.0,
            hidden_width: 8,
            hidden_layers: 1,
            density_activation: DensityActivation::ExpClamped,
        }
    }

    #[test]
    fn encode_length_is_levels_times_features() {
        let arch = FieldArch {
            hash_levels: 4,
            features_per_level: 2,
            ..tiny()
        };
        let p = init_params(&arch, 1).unwrap();
        assert_eq!(hash_encode([0.3, 0.4, 0.5], &arch, &p).unwrap().len(), 8);
    }

    #[test]
    fn encode_is_deterministic() {
        let arch = tiny();
        let p = init_params(&arch, 3).unwrap();
        let a = hash_encode([0.31, 0.77, 0.05], &arch, &p).unwrap();
        let b = hash_encode([0.31, 0.77, 0.05], &arch, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn vertex_point_reads_single_row() {
        // T=4 with resolution 2: 27 vertices > 16 rows, so level 0 is hashed.
        let arch = FieldArch {
            hash_levels: 1,
            ..tiny()
        };
        let model = FieldModel::new(&arch).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params: Vec<f32> = (0..model.param_count())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        // vertex (1, 2, 0) of the 2-cell grid
        let feats = model.hash_encode(&params, [0.5, 1.0, 0.0]);
        let h = (1u32 ^ 2u32.wrapping_mul(PRIMES[1]) ^ 0) as usize & 15;
        assert_eq!(feats, vec![params[h * 2], params[h * 2 + 1]]);
    }

    #[test]
    fn dense_levels_index_directly() {
        let arch = FieldArch {
            hash_levels: 1,
            log2_table_size: 5,
            ..tiny()
        };
        let model = FieldModel::new(&arch).unwrap();
        assert!(model.levels[0].dense);
        let params: Vec<f32> = (0..model.param_count()).map(|i| i as f32).collect();
        let feats = model.hash_encode(&params, [1.0, 0.5, 1.0]);
        let row = 2 + 3 * (1 + 3 * 2);
        assert_eq!(feats, vec![params[row * 2], params[row * 2 + 1]]);
    }

    #[test]
    fn outputs_within_activation_ranges() {
        let arch = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = FieldModel::new(&arch).unwrap();
        let params: Vec<f32> = (0..model.param_count())
            .map(|_| rng.gen_range(-3.0..3.0))
            .collect();
        let pts: Vec<_> = (0..200).map(|_| random_point(&mut rng)).collect();
        let out = field_eval(&ParamVector::new(params), &arch, &pts).unwrap();
        for o in out {
            assert!(o.sigma >= 0.0);
            assert!(o.rgb.iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }

    #[test]
    fn batch_equals_single_calls() {
        let arch = tiny();
        let p = init_params(&arch, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<_> = (0..16).map(|_| random_point(&mut rng)).collect();
        let batch = field_eval(&p, &arch, &pts).unwrap();
        for (pt, o) in pts.iter().zip(&batch) {
            assert_eq!(field_eval(&p, &arch, &[*pt]).unwrap()[0], *o);
        }
    }

    #[test]
    fn non_finite_params_rejected() {
        let arch = tiny();
        let mut p = init_params(&arch, 2).unwrap();
        p.values[arch.hash_param_count()] = f32::NAN;
        assert!(matches!(
            field_eval(&p, &arch, &[[0.5; 3]]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let arch = tiny();
        let p = init_params(&arch, 4).unwrap();
        let pts = vec![[0.2, 0.4, 0.6]; 3];
        let g = field_backward(&p, &arch, &pts, &[0.0; 3], &[[0.0; 3]; 3]).unwrap();
        assert!(g.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn untouched_rows_have_zero_gradient() {
        let arch = FieldArch {
            log2_table_size: 10,
            ..tiny()
        };
        let model = FieldModel::new(&arch).unwrap();
        let p = init_params(&arch, 4).unwrap();
        let pts = [[0.1, 0.1, 0.1]];
        let mut cache = ForwardCache::default();
        model.forward(&p.values, &pts, &mut cache).unwrap();
        let mut grad = vec![0f32; model.param_count()];
        model
            .backward(&p.values, &cache, &[1.0], &[[1.0; 3]], &mut grad)
            .unwrap();
        let touched: std::collections::HashSet<usize> =
            cache.corner_rows.iter().map(|r| *r as usize).collect();
        let f = arch.features_per_level as usize;
        for row_start in (0..arch.hash_param_count()).step_by(f) {
            if !touched.contains(&row_start) {
                assert!(grad[row_start..row_start + f].iter().all(|g| *g == 0.0));
            }
        }
    }

    #[test]
    fn eval_does_not_mutate_params() {
        let arch = tiny();
        let p = init_params(&arch, 9).unwrap();
        let before = p.clone();
        let _ = field_eval(&p, &arch, &[[0.3, 0.3, 0.3]]).unwrap();
        assert_eq!(p, before);
    }
}
