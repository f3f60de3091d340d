//! Network definitions. Each forward function reads its weights from a
//! [`Bound`] parameter set, so the same code serves training (trainable
//! leaves), frozen inference (constants) and f64 gradient checks.

use rand::Rng;

use crate::error::Result;
use crate::numerics::{Array, Bound, ParamStore, Real, Var};

pub const Z_DIM: usize = 64;
pub const W_DIM: usize = 64;
pub const MAPPING_LAYERS: usize = 3;
pub const LRELU: f64 = 0.2;
pub const DEMOD_EPS: f64 = 1e-8;
/// (input channels, output channels, output resolution) per synthesis block.
pub const SYNTH_BLOCKS: [(usize, usize, usize); 4] = [(64, 64, 4), (64, 64, 8), (64, 32, 16), (32, 16, 32)];
pub const NUM_BLOCKS: usize = SYNTH_BLOCKS.len();
/// Output channels of the strided discriminator convolutions.
pub const DISC_CHANNELS: [usize; 3] = [16, 32, 64];
pub const IMAGE_CHANNELS: usize = 3;

fn he<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Array<T> {
    Array::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

pub fn init_generator<T: Real, R: Rng + ?Sized>(rng: &mut R) -> Result<ParamStore<T>> {
    let mut p = ParamStore::new();
    for i in 0..MAPPING_LAYERS {
        let fan_in = if i == 0 { Z_DIM } else { W_DIM };
        p.insert(format!("map.fc{i}.w"), he(&[W_DIM, fan_in], fan_in, rng))?;
        p.insert(format!("map.fc{i}.b"), Array::zeros(&[W_DIM]))?;
    }
    p.insert("syn.const", Array::randn(&[1, SYNTH_BLOCKS[0].0, 4, 4], 1.0, rng))?;
    for (i, &(cin, cout, _)) in SYNTH_BLOCKS.iter().enumerate() {
        p.insert(
            format!("syn.b{i}.style.w"),
            Array::randn(&[cin, W_DIM], (1.0 / W_DIM as f64).sqrt(), rng),
        )?;
        p.insert(format!("syn.b{i}.style.b"), Array::full(&[cin], T::one()))?;
        p.insert(format!("syn.b{i}.conv.w"), he(&[cout, cin, 3, 3], cin * 9, rng))?;
        p.insert(format!("syn.b{i}.bias"), Array::zeros(&[cout]))?;
    }
    let last = SYNTH_BLOCKS[NUM_BLOCKS - 1].1;
    p.insert(
        "syn.rgb.w",
        Array::randn(&[IMAGE_CHANNELS, last, 1, 1], (1.0 / last as f64).sqrt(), rng),
    )?;
    p.insert("syn.rgb.b", Array::zeros(&[IMAGE_CHANNELS]))?;
    Ok(p)
}

pub fn init_discriminator<T: Real, R: Rng + ?Sized>(rng: &mut R) -> Result<ParamStore<T>> {
    let mut p = ParamStore::new();
    let mut cin = IMAGE_CHANNELS;
    for (i, &cout) in DISC_CHANNELS.iter().enumerate() {
        p.insert(format!("disc.conv{i}.w"), he(&[cout, cin, 3, 3], cin * 9, rng))?;
        p.insert(format!("disc.conv{i}.b"), Array::zeros(&[cout]))?;
        cin = cout;
    }
    let flat = cin * 4 * 4;
    p.insert("disc.fc.w", Array::randn(&[1, flat], (1.0 / flat as f64).sqrt(), rng))?;
    p.insert("disc.fc.b", Array::zeros(&[1]))?;
    Ok(p)
}

/// Projects each row of `z[N, Z_DIM]` onto the hypersphere of unit RMS
/// (radius `sqrt(Z_DIM)`). Scaling a row by a power of two leaves the result
/// bitwise unchanged; an all-zero row stays zero.
pub fn normalize_z<T: Real>(z: &Array<T>) -> Array<T> {
    let d = z.shape()[z.shape().len() - 1];
    let mut out = z.clone();
    for row in out.data_mut().chunks_mut(d) {
        let ms = row.iter().map(|&v| v * v).sum::<T>() / T::from_usize(d).unwrap();
        if ms > T::zero() {
            let rms = ms.sqrt();
            row.iter_mut().for_each(|v| *v = *v / rms);
        }
    }
    out
}

/// Mapping network on already-normalised `z[N, Z_DIM]`.
pub fn mapping<'t, T: Real>(p: &Bound<'t, T>, z: Var<'t, T>) -> Var<'t, T> {
    let slope = T::lit(LRELU);
    (0..MAPPING_LAYERS).fold(z, |h, i| {
        h.linear(p.get(&format!("map.fc{i}.w")), p.get(&format!("map.fc{i}.b")))
            .leaky_relu(slope)
    })
}

/// Latent input to the synthesis network.
#[derive(Clone, Copy, Debug)]
pub enum Styles<'t, T: Real> {
    /// `[N, W_DIM]`, shared by every block.
    W(Var<'t, T>),
    /// `[N, NUM_BLOCKS, W_DIM]`, one vector per block.
    WPlus(Var<'t, T>),
}

impl<'t, T: Real> Styles<'t, T> {
    fn block(&self, i: usize) -> Var<'t, T> {
        match *self {
            Styles::W(w) => w,
            Styles::WPlus(w) => w.select_axis1(i),
        }
    }

    fn batch(&self) -> usize {
        match self {
            Styles::W(w) | Styles::WPlus(w) => w.shape()[0],
        }
    }
}

/// Convolution whose input channels are scaled by a style vector, with the
/// per-sample weights renormalised to unit norm per output channel. Written
/// as activation scaling, which is algebraically identical to modulating and
/// demodulating the weights sample by sample.
pub fn modulated_conv<'t, T: Real>(
    x: Var<'t, T>,
    weight: Var<'t, T>,
    style: Var<'t, T>,
    demodulate: bool,
) -> Var<'t, T> {
    let ws = weight.shape();
    let (cout, cin, k) = (ws[0], ws[1], ws[2]);
    let pad = k / 2;
    let y = x.scale_channels(style).conv2d(weight, 1, pad);
    if !demodulate {
        return y;
    }
    // d[n, o] = (Σ_c s[n,c]² Σ_k w[o,c,k]² + ε)^(-1/2)
    let wsq = weight.square().reshape(&[cout, cin, k * ws[3]]).sum_last();
    let d = style
        .square()
        .matmul(wsq, false, true)
        .add_scalar(T::lit(DEMOD_EPS))
        .powf(T::lit(-0.5));
    y.scale_channels(d)
}

/// Synthesis network: `[N, 3, 32, 32]` in `[-1, 1]`.
pub fn synthesis<'t, T: Real>(p: &Bound<'t, T>, styles: Styles<'t, T>) -> Var<'t, T> {
    let n = styles.batch();
    let slope = T::lit(LRELU);
    let mut x = p.get("syn.const").broadcast_rows(n);
    for i in 0..NUM_BLOCKS {
        if i > 0 {
            x = x.upsample2x();
        }
        let s = styles
            .block(i)
            .linear(p.get(&format!("syn.b{i}.style.w")), p.get(&format!("syn.b{i}.style.b")));
        x = modulated_conv(x, p.get(&format!("syn.b{i}.conv.w")), s, true)
            .add_channel_bias(p.get(&format!("syn.b{i}.bias")))
            .leaky_relu(slope);
    }
    x.conv2d(p.get("syn.rgb.w"), 1, 0)
        .add_channel_bias(p.get("syn.rgb.b"))
        .tanh()
}

/// Discriminator: real/fake logits `[N, 1]` plus the activation after each
/// strided convolution (used as a perceptual feature space).
pub fn discriminator<'t, T: Real>(p: &Bound<'t, T>, x: Var<'t, T>) -> (Var<'t, T>, Vec<Var<'t, T>>) {
    let slope = T::lit(LRELU);
    let mut h = x;
    let mut feats = Vec::with_capacity(DISC_CHANNELS.len());
    for i in 0..DISC_CHANNELS.len() {
        h = h
            .conv2d(p.get(&format!("disc.conv{i}.w")), 2, 1)
            .add_channel_bias(p.get(&format!("disc.conv{i}.b")))
            .leaky_relu(slope);
        feats.push(h);
    }
    let n = h.shape()[0];
    let flat = h.value().len() / n;
    let logits = h
        .reshape(&[n, flat])
        .linear(p.get("disc.fc.w"), p.get("disc.fc.b"));
    (logits, feats)
}

/// Directional derivative `vᵢ·∇ₓD(xᵢ)` per sample, `[N, 1]`, built as a
/// tangent pass through the network. Activation slopes are taken from the
/// primal pass as constants, so the result is differentiable in the weights
/// (exactly so away from the measure-zero activation kinks).
pub fn discriminator_directional<'t, T: Real>(p: &Bound<'t, T>, x: &Array<T>, v: &Array<T>) -> Var<'t, T> {
    let tape = p.get("disc.fc.w").tape();
    let slope = T::lit(LRELU);
    let mut h = tape.constant(x.clone());
    let mut t = tape.constant(v.clone());
    for i in 0..DISC_CHANNELS.len() {
        let w = p.get(&format!("disc.conv{i}.w"));
        let pre = h.conv2d(w, 2, 1).add_channel_bias(p.get(&format!("disc.conv{i}.b")));
        let gate = pre.value().map(|a| if a > T::zero() { T::one() } else { slope });
        t = t.conv2d(w, 2, 1).mul_const(&gate);
        h = tape.constant(pre.value().zip_map(&gate, |a, g| a * g));
    }
    let n = t.shape()[0];
    let flat = t.value().len() / n;
    t.reshape(&[n, flat]).matmul(p.get("disc.fc.w"), false, true)
}
