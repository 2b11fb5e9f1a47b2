use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ops;
use super::scalar::{gemm, MatRef, Scalar};
use crate::error::{Error, Result};
use crate::synth::derive_seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Channels after the first encoder stage; doubles at every downsampling.
    pub base_channels: usize,
    /// Number of 2x2 max-pool downsamplings.
    pub depth: usize,
    pub convs_per_stage: usize,
    #[serde(default = "two")]
    pub input_channels: usize,
    #[serde(default = "one")]
    pub output_channels: usize,
    #[serde(default)]
    pub seed: u64,
}

fn two() -> usize {
    2
}

fn one() -> usize {
    1
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            base_channels: 32,
            depth: 3,
            convs_per_stage: 2,
            input_channels: 2,
            output_channels: 1,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// Full-size configuration: 256 channels growing to 2048 at 1/8 resolution.
    pub fn full() -> Self {
        NetworkConfig {
            base_channels: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 8 {
            return Err(Error::InvalidParams(format!("depth {} not in 1..=8", self.depth)));
        }
        if self.base_channels == 0 || self.convs_per_stage == 0 {
            return Err(Error::InvalidParams(
                "base_channels and convs_per_stage must be positive".into(),
            ));
        }
        if self.input_channels != 2 || self.output_channels != 1 {
            return Err(Error::InvalidParams(
                "the network maps 2 input channels to 1 output channel".into(),
            ));
        }
        Ok(())
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.base_channels << self.depth
    }

    /// Spatial dims must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }

    pub(crate) fn layers(&self) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        let convs = self.convs_per_stage;
        let mut prev = self.input_channels;
        for s in 0..=self.depth {
            let ch = self.base_channels << s;
            for k in 0..convs {
                let name = if s < self.depth {
                    format!("enc{s}.conv{k}")
                } else {
                    format!("mid.conv{k}")
                };
                layers.push(LayerSpec::new(name, LayerKind::Conv3, prev, ch));
                prev = ch;
            }
        }
        for s in (0..self.depth).rev() {
            let ch = self.base_channels << s;
            layers.push(LayerSpec::new(format!("up{s}"), LayerKind::Up2, 2 * ch, ch));
            for k in 0..convs {
                let c_in = if k == 0 { 2 * ch } else { ch };
                layers.push(LayerSpec::new(
                    format!("dec{s}.conv{k}"),
                    LayerKind::Conv3,
                    c_in,
                    ch,
                ));
            }
        }
        layers.push(LayerSpec::new(
            "head".into(),
            LayerKind::Head,
            self.base_channels,
            self.output_channels,
        ));
        layers
    }

    fn enc_layer(&self, stage: usize, k: usize) -> usize {
        stage * self.convs_per_stage + k
    }

    fn up_layer(&self, d: usize) -> usize {
        (self.depth + 1) * self.convs_per_stage + d * (1 + self.convs_per_stage)
    }

    fn dec_layer(&self, d: usize, k: usize) -> usize {
        self.up_layer(d) + 1 + k
    }

    fn head_layer(&self) -> usize {
        (self.depth + 1) * self.convs_per_stage + self.depth * (1 + self.convs_per_stage)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LayerKind {
    Conv3,
    Up2,
    Head,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
}

impl LayerSpec {
    fn new(name: String, kind: LayerKind, c_in: usize, c_out: usize) -> Self {
        LayerSpec {
            name,
            kind,
            c_in,
            c_out,
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv3 => vec![self.c_out, self.c_in, 3, 3],
            LayerKind::Up2 => vec![self.c_in, self.c_out, 2, 2],
            LayerKind::Head => vec![self.c_out, self.c_in, 1, 1],
        }
    }

    /// Inputs contributing to one output value.
    fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv3 => self.c_in * 9,
            LayerKind::Up2 | LayerKind::Head => self.c_in,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(name: String, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            name,
            shape,
            data: vec![T::zero(); n],
        }
    }
}

/// Every learnable tensor of one network, in layer order, weight before bias.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights<T = f32> {
    pub config: NetworkConfig,
    pub tensors: Vec<Tensor<T>>,
}

/// Loss gradients; same names and shapes as the weights they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f32> {
    pub tensors: Vec<Tensor<T>>,
}

/// Tensor names and shapes implied by a configuration.
pub fn tensor_layout(cfg: &NetworkConfig) -> Vec<(String, Vec<usize>)> {
    cfg.layers()
        .into_iter()
        .flat_map(|l| {
            let ws = l.weight_shape();
            [
                (format!("{}.weight", l.name), ws),
                (format!("{}.bias", l.name), vec![l.c_out]),
            ]
        })
        .collect()
}

pub fn init_network<T: Scalar>(cfg: &NetworkConfig) -> Result<NetworkWeights<T>> {
    cfg.validate()?;
    let mut tensors = Vec::new();
    for layer in cfg.layers() {
        let name = format!("{}.weight", layer.name);
        let std = match layer.kind {
            LayerKind::Head => (1.0 / layer.fan_in() as f64).sqrt(),
            _ => (2.0 / layer.fan_in() as f64).sqrt(),
        };
        let normal = Normal::new(0.0, std).expect("positive std");
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[&name]));
        let shape = layer.weight_shape();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(normal.sample(&mut rng))).collect();
        tensors.push(Tensor { name, shape, data });
        tensors.push(Tensor::zeros(format!("{}.bias", layer.name), vec![layer.c_out]));
    }
    Ok(NetworkWeights {
        config: cfg.clone(),
        tensors,
    })
}

impl<T: Scalar> NetworkWeights<T> {
    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn weight(&self, layer: usize) -> &[T] {
        &self.tensors[2 * layer].data
    }

    fn bias(&self, layer: usize) -> &[T] {
        &self.tensors[2 * layer + 1].data
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), t.shape.clone()))
                .collect(),
        }
    }

    /// Checks names, shapes and finiteness against the configuration.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let layout = tensor_layout(&self.config);
        if layout.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, found {}",
                layout.len(),
                self.tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&self.tensors) {
            if *name != t.name || *shape != t.shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Shape(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    t.name, t.shape, name, shape
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidField(format!(
                    "tensor {} has non-finite values",
                    t.name
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> NetworkWeights<U> {
        NetworkWeights {
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t
                        .data
                        .iter()
                        .map(|v| <U as Scalar>::from_f64(<T as Scalar>::to_f64(*v)))
                        .collect(),
                })
                .collect(),
        }
    }
}

impl<T: Scalar> Gradients<T> {
    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x = *x + y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.tensors {
            for x in &mut t.data {
                *x = *x * s;
            }
        }
    }
}

/// Activations kept from a forward pass for backpropagation.
pub struct ForwardCache<T> {
    h: usize,
    w: usize,
    /// `enc[s][0]` is the stage input, `enc[s][k + 1]` the output of conv `k`.
    enc: Vec<Vec<Vec<T>>>,
    pool_arg: Vec<Vec<u8>>,
    mid: Vec<Vec<T>>,
    /// Decoder stages from coarsest to finest.
    up: Vec<Vec<T>>,
    /// `dec[d][0]` is the concatenation `[up, skip]`, `dec[d][k + 1]` conv outputs.
    dec: Vec<Vec<Vec<T>>>,
    pub output: Vec<T>,
}

fn check_input_dims(cfg: &NetworkConfig, len: usize, h: usize, w: usize) -> Result<()> {
    let m = cfg.size_multiple();
    if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
        return Err(Error::Shape(format!(
            "input {h}x{w} not divisible by {m} (depth {})",
            cfg.depth
        )));
    }
    if len != cfg.input_channels * h * w {
        return Err(Error::Shape(format!(
            "input has {len} values, expected {}x{h}x{w}",
            cfg.input_channels
        )));
    }
    Ok(())
}

/// Runs the network on a `2 x h x w` input, keeping activations.
pub fn forward_cached<T: Scalar>(
    weights: &NetworkWeights<T>,
    input: &[T],
    h: usize,
    w: usize,
) -> Result<ForwardCache<T>> {
    let cfg = &weights.config;
    check_input_dims(cfg, input.len(), h, w)?;
    let layers = cfg.layers();
    let convs = cfg.convs_per_stage;
    let mut col = Vec::new();

    let conv = |layer: usize, x: &[T], hh: usize, ww: usize, col: &mut Vec<T>| -> Vec<T> {
        let spec = &layers[layer];
        let mut out = vec![T::zero(); spec.c_out * hh * ww];
        ops::conv3_relu_forward(
            x,
            spec.c_in,
            hh,
            ww,
            weights.weight(layer),
            weights.bias(layer),
            spec.c_out,
            &mut out,
            col,
        );
        out
    };

    let mut enc = Vec::with_capacity(cfg.depth);
    let mut pool_arg = Vec::with_capacity(cfg.depth);
    let mut x = input.to_vec();
    let (mut hh, mut ww) = (h, w);
    for s in 0..cfg.depth {
        let mut acts = vec![x];
        for k in 0..convs {
            let y = conv(cfg.enc_layer(s, k), acts.last().unwrap(), hh, ww, &mut col);
            acts.push(y);
        }
        let ch = cfg.base_channels << s;
        let skip = acts.last().unwrap();
        let mut pooled = vec![T::zero(); ch * hh * ww / 4];
        let mut arg = vec![0u8; pooled.len()];
        ops::maxpool_forward(skip, ch, hh, ww, &mut pooled, &mut arg);
        enc.push(acts);
        pool_arg.push(arg);
        x = pooled;
        hh /= 2;
        ww /= 2;
    }

    let mut mid = vec![x];
    for k in 0..convs {
        let y = conv(cfg.enc_layer(cfg.depth, k), mid.last().unwrap(), hh, ww, &mut col);
        mid.push(y);
    }

    let mut up = Vec::with_capacity(cfg.depth);
    let mut dec: Vec<Vec<Vec<T>>> = Vec::with_capacity(cfg.depth);
    for d in 0..cfg.depth {
        let s = cfg.depth - 1 - d;
        let layer = cfg.up_layer(d);
        let spec = &layers[layer];
        let below = if d == 0 {
            mid.last().unwrap()
        } else {
            dec[d - 1].last().unwrap()
        };
        let mut u = vec![T::zero(); spec.c_out * hh * ww * 4];
        ops::upconv_relu_forward(
            below,
            spec.c_in,
            hh,
            ww,
            weights.weight(layer),
            weights.bias(layer),
            spec.c_out,
            &mut u,
            &mut col,
        );
        hh *= 2;
        ww *= 2;
        let mut cat = u.clone();
        cat.extend_from_slice(enc[s].last().unwrap());
        up.push(u);
        let mut acts = vec![cat];
        for k in 0..convs {
            let y = conv(cfg.dec_layer(d, k), acts.last().unwrap(), hh, ww, &mut col);
            acts.push(y);
        }
        dec.push(acts);
    }

    // 1x1 projection and sigmoid.
    let head = cfg.head_layer();
    let feat = if cfg.depth > 0 {
        dec.last().unwrap().last().unwrap()
    } else {
        mid.last().unwrap()
    };
    let hw = h * w;
    let mut output = vec![weights.bias(head)[0]; hw];
    gemm(
        T::one(),
        MatRef::rm(weights.weight(head), 1, cfg.base_channels),
        MatRef::rm(feat, cfg.base_channels, hw),
        T::one(),
        &mut output,
    );
    for v in &mut output {
        *v = ops::sigmoid(*v);
    }

    Ok(ForwardCache {
        h,
        w,
        enc,
        pool_arg,
        mid,
        up,
        dec,
        output,
    })
}

/// Network output for a `2 x h x w` input; every value lies in (0, 1).
pub fn forward<T: Scalar>(weights: &NetworkWeights<T>, input: &[T], h: usize, w: usize) -> Result<Vec<T>> {
    Ok(forward_cached(weights, input, h, w)?.output)
}

/// Mean of squared differences.
pub fn mse_loss<T: Scalar>(pred: &[T], target: &[T]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Empty("loss inputs"));
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p.to_f64() - t.to_f64();
            d * d
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

/// MSE loss of one sample and its gradient with respect to every weight.
pub fn backward<T: Scalar>(
    weights: &NetworkWeights<T>,
    input: &[T],
    target: &[T],
    h: usize,
    w: usize,
) -> Result<(f64, Gradients<T>)> {
    let cache = forward_cached(weights, input, h, w)?;
    let loss = mse_loss(&cache.output, target)?;
    let grads = backward_from_cache(weights, &cache, target);
    Ok((loss, grads))
}

fn backward_from_cache<T: Scalar>(
    weights: &NetworkWeights<T>,
    cache: &ForwardCache<T>,
    target: &[T],
) -> Gradients<T> {
    let cfg = &weights.config;
    let layers = cfg.layers();
    let convs = cfg.convs_per_stage;
    let mut grads = weights.zero_gradients();
    let mut col = Vec::new();
    let (h, w) = (cache.h, cache.w);
    let hw = h * w;

    // d(mean squared error)/d(pre-sigmoid)
    let scale = T::from_f64(2.0 / hw as f64);
    let dz: Vec<T> = cache
        .output
        .iter()
        .zip(target)
        .map(|(&y, &t)| scale * (y - t) * y * (T::one() - y))
        .collect();

    let head = cfg.head_layer();
    let base = cfg.base_channels;
    let feat = cache.dec.last().unwrap().last().unwrap();
    {
        let (gw, rest) = grads.tensors[2 * head..].split_at_mut(1);
        gemm(
            T::one(),
            MatRef::rm(&dz, 1, hw),
            MatRef::rm_t(feat, hw, base),
            T::one(),
            &mut gw[0].data,
        );
        rest[0].data[0] = rest[0].data[0] + dz.iter().copied().sum::<T>();
    }
    let mut g = vec![T::zero(); base * hw];
    gemm(
        T::one(),
        MatRef::rm_t(weights.weight(head), base, 1),
        MatRef::rm(&dz, 1, hw),
        T::zero(),
        &mut g,
    );

    let conv_back = |layer: usize,
                     x: &[T],
                     y: &[T],
                     g: &mut Vec<T>,
                     hh: usize,
                     ww: usize,
                     need_input: bool,
                     grads: &mut Gradients<T>,
                     col: &mut Vec<T>|
     -> Option<Vec<T>> {
        let spec = &layers[layer];
        let mut gi = if need_input {
            Some(vec![T::zero(); spec.c_in * hh * ww])
        } else {
            None
        };
        let (gw, gb) = grads.tensors[2 * layer..2 * layer + 2].split_at_mut(1);
        ops::conv3_relu_backward(
            x,
            spec.c_in,
            hh,
            ww,
            weights.weight(layer),
            spec.c_out,
            y,
            g,
            &mut gw[0].data,
            &mut gb[0].data,
            gi.as_deref_mut(),
            col,
        );
        gi
    };

    // Decoder, finest stage first.
    let mut skip_grads: Vec<Vec<T>> = vec![Vec::new(); cfg.depth];
    let (mut hh, mut ww) = (h, w);
    for d in (0..cfg.depth).rev() {
        let s = cfg.depth - 1 - d;
        let acts = &cache.dec[d];
        for k in (0..convs).rev() {
            g = conv_back(
                cfg.dec_layer(d, k),
                &acts[k],
                &acts[k + 1],
                &mut g,
                hh,
                ww,
                true,
                &mut grads,
                &mut col,
            )
            .expect("input gradient requested");
        }
        let ch = base << s;
        let n = ch * hh * ww;
        skip_grads[s] = g[n..].to_vec();
        let mut g_up = g;
        g_up.truncate(n);

        let layer = cfg.up_layer(d);
        let spec = &layers[layer];
        let below = if d == 0 {
            cache.mid.last().unwrap()
        } else {
            cache.dec[d - 1].last().unwrap()
        };
        let (bh, bw) = (hh / 2, ww / 2);
        let mut gi = vec![T::zero(); spec.c_in * bh * bw];
        let (gw, gb) = grads.tensors[2 * layer..2 * layer + 2].split_at_mut(1);
        ops::upconv_relu_backward(
            below,
            spec.c_in,
            bh,
            bw,
            weights.weight(layer),
            spec.c_out,
            &cache.up[d],
            &mut g_up,
            &mut gw[0].data,
            &mut gb[0].data,
            &mut gi,
            &mut col,
        );
        g = gi;
        hh = bh;
        ww = bw;
    }

    for k in (0..convs).rev() {
        g = conv_back(
            cfg.enc_layer(cfg.depth, k),
            &cache.mid[k],
            &cache.mid[k + 1],
            &mut g,
            hh,
            ww,
            true,
            &mut grads,
            &mut col,
        )
        .expect("input gradient requested");
    }

    for s in (0..cfg.depth).rev() {
        let ch = base << s;
        let (sh, sw) = (hh * 2, ww * 2);
        let mut gs = std::mem::take(&mut skip_grads[s]);
        ops::maxpool_backward(&g, &cache.pool_arg[s], ch, sh, sw, &mut gs);
        g = gs;
        hh = sh;
        ww = sw;
        let acts = &cache.enc[s];
        for k in (0..convs).rev() {
            let need = !(s == 0 && k == 0);
            match conv_back(
                cfg.enc_layer(s, k),
                &acts[k],
                &acts[k + 1],
                &mut g,
                hh,
                ww,
                need,
                &mut grads,
                &mut col,
            ) {
                Some(gi) => g = gi,
                None => break,
            }
        }
    }
    grads
}

/// One training example: a `2 x h x w` input and an `h x w` target.
pub struct Example<'a, T> {
    pub input: &'a [T],
    pub target: &'a [T],
}

/// Mean loss and mean gradient over a batch.
///
/// Examples are processed in parallel; the reduction runs in batch order so
/// the result does not depend on the thread count.
pub fn batch_gradients<T: Scalar>(
    weights: &NetworkWeights<T>,
    batch: &[Example<'_, T>],
    h: usize,
    w: usize,
) -> Result<(f64, Gradients<T>)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let run = |ex: &Example<'_, T>| backward(weights, ex.input, ex.target, h, w);
    // A one-thread pool gains nothing from par_iter, and its idle worker
    // competes with the caller for the only core.
    let per_example: Vec<(f64, Gradients<T>)> = if rayon::current_num_threads() > 1 {
        batch.par_iter().map(run).collect::<Result<_>>()?
    } else {
        batch.iter().map(run).collect::<Result<_>>()?
    };
    let mut iter = per_example.into_iter();
    let (mut loss, mut total) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        total.add_assign(&g);
    }
    let n = batch.len() as f64;
    total.scale(T::from_f64(1.0 / n));
    Ok((loss / n, total))
}
