//! Grad-CAM over the classifier's final conv layer and the on-object
//! attention fraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalhost::{classifier_features, classifier_head, ClassifierBundle};
use crate::image::{to_model, Image, Mask};
use crate::numerics::{Array, Tape};
use crate::par::{self, Exec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub raw_height: usize,
    pub raw_width: usize,
    /// `ReLU(Σₖ αₖ Aₖ)`, row-major.
    pub raw: Vec<f64>,
    pub height: usize,
    pub width: usize,
    /// Bilinear upsampling of `raw` to the image size.
    pub upsampled: Vec<f64>,
    pub class_idx: usize,
}

impl SaliencyMap {
    /// Upsampled map divided by its maximum (all zeros stay zero).
    pub fn normalized(&self) -> Vec<f64> {
        let m = self.upsampled.iter().copied().fold(0.0, f64::max);
        if m > 0.0 {
            self.upsampled.iter().map(|v| v / m).collect()
        } else {
            vec![0.0; self.upsampled.len()]
        }
    }

    pub fn raw_normalized(&self) -> Vec<f64> {
        let m = self.raw.iter().copied().fold(0.0, f64::max);
        if m > 0.0 {
            self.raw.iter().map(|v| v / m).collect()
        } else {
            vec![0.0; self.raw.len()]
        }
    }
}

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn upsample_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let coord = |o: usize, n_in: usize, n_out: usize| {
        let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(n_in - 1), s - i0 as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let (y0, y1, fy) = coord(oy, h, out_h);
        for ox in 0..out_w {
            let (x0, x1, fx) = coord(ox, w, out_w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Grad-CAM from activations and gradients `[K, h, w]` (row-major):
/// `αₖ` is the spatial mean of the gradient, the map `ReLU(Σₖ αₖ Aₖ)`.
pub fn gradcam_from(
    acts: &[f64],
    grads: &[f64],
    shape: [usize; 3],
    class_idx: usize,
    out_size: (usize, usize),
) -> Result<SaliencyMap> {
    let [k, h, w] = shape;
    if acts.len() != k * h * w || grads.len() != acts.len() {
        return Err(Error::shape(
            "gradcam",
            format!("{} activations, {} gradients for {shape:?}", acts.len(), grads.len()),
        ));
    }
    if !grads.iter().chain(acts).all(|v| v.is_finite()) {
        return Err(Error::non_finite("Grad-CAM gradients"));
    }
    let hw = h * w;
    let mut raw = vec![0.0; hw];
    for c in 0..k {
        let alpha = grads[c * hw..(c + 1) * hw].iter().sum::<f64>() / hw as f64;
        for (r, a) in raw.iter_mut().zip(&acts[c * hw..(c + 1) * hw]) {
            *r += alpha * a;
        }
    }
    for r in &mut raw {
        *r = r.max(0.0);
    }
    let upsampled = upsample_bilinear(&raw, h, w, out_size.0, out_size.1);
    Ok(SaliencyMap {
        raw_height: h,
        raw_width: w,
        raw,
        height: out_size.0,
        width: out_size.1,
        upsampled,
        class_idx,
    })
}

/// Grad-CAM of `class_idx`'s pre-softmax logit over the classifier's final
/// conv activations.
pub fn gradcam(bundle: &ClassifierBundle, image: &Image, class_idx: usize) -> Result<SaliencyMap> {
    if class_idx >= bundle.num_classes() {
        return Err(Error::param(
            "class_idx",
            format!("{class_idx} not below {} classes", bundle.num_classes()),
        ));
    }
    let x = to_model(std::slice::from_ref(image));
    let tape = Tape::new();
    let p = bundle.params.bind_constants(&tape);
    let feats = classifier_features(&p, tape.constant(x));
    // Re-enter the head from a leaf so the gradient stops at the activations.
    let a = tape.var(feats.value().as_ref().clone());
    let logits = classifier_head(&p, a);
    let k = bundle.num_classes();
    let mut seed_grad = Array::zeros(&[1, k]);
    seed_grad.data_mut()[class_idx] = 1.0;
    let g = tape.backward_with(logits, seed_grad);
    let grad = g.get_or_zeros(a);
    let shape = a.shape();
    let acts: Vec<f64> = a.value().data().iter().map(|&v| f64::from(v)).collect();
    let grads: Vec<f64> = grad.data().iter().map(|&v| f64::from(v)).collect();
    gradcam_from(&acts, &grads, [shape[1], shape[2], shape[3]], class_idx, (image.height, image.width))
}

/// Grad-CAM per image, in parallel.
pub fn gradcam_batch(exec: Exec, bundle: &ClassifierBundle, images: &[Image], classes: &[usize]) -> Result<Vec<SaliencyMap>> {
    if images.len() != classes.len() {
        return Err(Error::shape("gradcam_batch", "one class per image"));
    }
    let items: Vec<(&Image, usize)> = images.iter().zip(classes.iter().copied()).collect();
    par::map_slice(exec, &items, |(img, c)| gradcam(bundle, img, *c))
        .into_iter()
        .collect()
}

/// Blue → cyan → yellow → red ramp.
fn heat(t: f64) -> [f32; 3] {
    let t = t.clamp(0.0, 1.0);
    let stops = [[0.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 0.0], [1.0, 0.0, 0.0]];
    let s = t * 3.0;
    let i = (s.floor() as usize).min(2);
    let f = (s - i as f64) as f32;
    [0, 1, 2].map(|c| stops[i][c] as f32 * (1.0 - f) + stops[i + 1][c] as f32 * f)
}

/// Heatmap blended over the image with opacity proportional to the map.
/// `map` is normalised to `[0, 1]` and has the image's size (values outside
/// are clamped).
pub fn overlay(map: &[f64], image: &Image) -> Result<Image> {
    if map.len() != image.height * image.width {
        return Err(Error::shape(
            "overlay",
            format!("{} map values for a {}x{} image", map.len(), image.height, image.width),
        ));
    }
    let mut out = image.clone();
    for y in 0..image.height {
        for x in 0..image.width {
            let m = map[y * image.width + x].clamp(0.0, 1.0);
            if m == 0.0 {
                continue;
            }
            let alpha = (0.6 * m) as f32;
            let col = heat(m);
            for c in 0..image.channels.min(3) {
                let v = image.at(y, x, c);
                out.set(y, x, c, v * (1.0 - alpha) + col[c] * alpha);
            }
        }
    }
    Ok(out)
}

/// Share of saliency mass inside the foreground mask; 0 for an all-zero map.
pub fn on_object_fraction(map: &[f64], mask: &Mask) -> Result<f64> {
    if map.len() != mask.height * mask.width {
        return Err(Error::shape(
            "on_object_fraction",
            format!("{} map values for a {}x{} mask", map.len(), mask.height, mask.width),
        ));
    }
    let total: f64 = map.iter().sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    let inside: f64 = map.iter().zip(&mask.data).filter(|(_, &m)| m).map(|(v, _)| v).sum();
    Ok(inside / total)
}

#[cfg(test)]
mod tests;
