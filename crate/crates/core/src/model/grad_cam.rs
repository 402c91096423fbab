//! Class activation maps from head-feature gradients, and their overlay.

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::graph::{Graph, Mode};
use crate::ops::activation::softmax_lastdim;
use crate::tensor::{Scalar, Tensor};

use super::network::MpoxMamba;

#[derive(Clone, Debug)]
pub struct GradCam {
    /// `[h, w]` at head resolution, values in `[0, 1]`.
    pub heatmap: Tensor<f64>,
    pub target: usize,
    pub probabilities: Vec<f64>,
}

/// `relu(sum_c mean(grad_c) * feature_c)` over `[c, h, w]` maps, divided by
/// its maximum when that is positive.
pub fn cam_from_gradients(features: &Tensor<f64>, grads: &Tensor<f64>) -> Result<Tensor<f64>> {
    features.expect_same_shape(grads, "grad-cam")?;
    let (c, h, w) = features.dims3()?;
    let hw = h * w;
    let mut cam = vec![0.0; hw];
    for ch in 0..c {
        let g = &grads.data()[ch * hw..][..hw];
        let weight = g.iter().sum::<f64>() / hw as f64;
        for (dst, a) in cam.iter_mut().zip(&features.data()[ch * hw..][..hw]) {
            *dst += weight * a;
        }
    }
    for v in &mut cam {
        *v = v.max(0.0);
    }
    let max = cam.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        for v in &mut cam {
            *v /= max;
        }
    }
    Tensor::new(&[h, w], cam)
}

/// Grad-CAM for one `[c, s, s]` (or `[1, c, s, s]`) image, inference mode.
pub fn grad_cam<T: Scalar>(model: &MpoxMamba<T>, image: &Tensor<T>, target: usize) -> Result<GradCam> {
    let k = model.config.num_classes;
    if target >= k {
        return Err(Error::Domain(format!("target class {target} out of range for {k} classes")));
    }
    let batch = match image.ndim() {
        3 => {
            let mut shape = vec![1];
            shape.extend_from_slice(image.shape());
            image.clone().reshape(&shape)?
        }
        _ => image.clone(),
    };
    if batch.shape()[0] != 1 {
        return Err(Error::dim("grad-cam takes a single image"));
    }
    let mut g = Graph::with_params(&model.store, Mode::Infer);
    let x = g.constant(batch);
    let out = model.forward(&mut g, x)?;
    let mut one_hot = Tensor::zeros(&[1, k]);
    one_hot.data_mut()[target] = T::one();
    let score = g.weighted_sum(out.logits, one_hot)?;
    let grads = g.backward_retaining(score, &[out.features])?;
    let feats = g.value(out.features);
    let (_, c, h, w) = feats.dims4()?;
    let f64_feats = feats.cast::<f64>().reshape(&[c, h, w])?;
    let f64_grads = match grads.wrt(out.features) {
        Some(t) => t.cast::<f64>().reshape(&[c, h, w])?,
        None => Tensor::zeros(&[c, h, w]),
    };
    let probabilities = softmax_lastdim(g.value(out.logits))?.to_f64_vec();
    Ok(GradCam {
        heatmap: cam_from_gradients(&f64_feats, &f64_grads)?,
        target,
        probabilities,
    })
}

/// Bilinear resize of an `[h, w]` map (pixel centres aligned, edges clamped).
pub fn upsample_bilinear(map: &Tensor<f64>, out_h: usize, out_w: usize) -> Result<Tensor<f64>> {
    let (h, w) = map.dims2()?;
    let src = map.data();
    let coord = |o: usize, out: usize, inp: usize| {
        let x = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
        let i0 = x.floor() as usize;
        (i0, (i0 + 1).min(inp - 1), x - i0 as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let (y0, y1, fy) = coord(oy, out_h, h);
        for ox in 0..out_w {
            let (x0, x1, fx) = coord(ox, out_w, w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Tensor::new(&[out_h, out_w], out)
}

/// Blue-cyan-yellow-red ramp for `v` in `[0, 1]`.
pub fn jet(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let channel = |offset: f64| (1.5 - (4.0 * v - offset).abs()).clamp(0.0, 1.0);
    [channel(3.0), channel(2.0), channel(1.0)].map(|c| (c * 255.0).round() as u8)
}

/// Heatmap alpha-blended over `image`, resized to the image's own size.
pub fn overlay(image: &RgbImage, heatmap: &Tensor<f64>, alpha: f64) -> Result<RgbImage> {
    let (w, h) = image.dimensions();
    let up = upsample_bilinear(heatmap, h as usize, w as usize)?;
    let mut out = image.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        let color = jet(up.data()[y as usize * w as usize + x as usize]);
        let mixed: [u8; 3] = std::array::from_fn(|i| {
            (alpha * color[i] as f64 + (1.0 - alpha) * px.0[i] as f64).round() as u8
        });
        *px = Rgb(mixed);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn zero_gradients_give_zero_map() {
        let f = Tensor::full(&[3, 2, 2], 1.0);
        let cam = cam_from_gradients(&f, &Tensor::zeros(&[3, 2, 2])).unwrap();
        assert!(cam.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalized_to_unit_max() {
        let f = Tensor::from_f64(&[2, 1, 3], &[1., 2., 3., -1., 0., 1.]).unwrap();
        let g = Tensor::from_f64(&[2, 1, 3], &[1., 1., 1., 0.5, 0.5, 0.5]).unwrap();
        let cam = cam_from_gradients(&f, &g).unwrap();
        // weights 1 and 0.5: raw = [0.5, 2, 3.5]
        let expected = [0.5 / 3.5, 2.0 / 3.5, 1.0];
        assert!(cam.data().iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn upsample_constant_and_shape() {
        let m = Tensor::full(&[14, 14], 0.3);
        let up = upsample_bilinear(&m, 224, 224).unwrap();
        assert_eq!(up.shape(), &[224, 224]);
        assert!(up.data().iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn jet_endpoints() {
        assert_eq!(jet(0.0), [0, 0, 128]);
        assert_eq!(jet(1.0), [128, 0, 0]);
    }

    #[test]
    fn cam_on_small_model() {
        let cfg = ModelConfig {
            input_size: 32,
            ..ModelConfig::default().scaled(8)
        };
        let m = MpoxMamba::<f64>::build(cfg, 4).unwrap();
        let data: Vec<f64> = (0..3 * 32 * 32).map(|i| ((i * 13 % 29) as f64) / 29.0).collect();
        let img = Tensor::from_f64(&[3, 32, 32], &data).unwrap();
        let cam = grad_cam(&m, &img, 1).unwrap();
        assert_eq!(cam.heatmap.shape(), &[2, 2]);
        let max = cam.heatmap.data().iter().copied().fold(0.0, f64::max);
        assert!(cam.heatmap.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(max == 0.0 || max == 1.0);
        assert!((cam.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(grad_cam(&m, &img, 2), Err(Error::Domain(_))));
    }
}
