//! Stochastic augmentation pipeline with a single magnitude dial.
//!
//! A view is a random resized crop of the source image at the requested
//! resolution, optionally flipped, followed by photometric changes whose
//! strengths scale linearly with `magnitude / 5` (5 is the standard
//! strength): brightness, contrast and saturation jitter, random grayscale,
//! and Gaussian pixel noise. Crops resize bilinearly; the cheap selection
//! pass downsamples with box averaging when the ratio is an integer.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Magnitude at which jitter strengths equal their configured values.
pub const STANDARD_MAGNITUDE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterStrengths {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationPolicy {
    /// Strength dial; 5 reproduces the configured strengths as-is.
    pub magnitude: f64,
    /// Crop area range as a fraction of the source area.
    pub crop_scale_range: (f64, f64),
    pub flip_probability: f64,
    pub jitter: JitterStrengths,
    pub grayscale_probability: f64,
    /// Gaussian pixel-noise std at standard magnitude.
    pub noise_std: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            magnitude: STANDARD_MAGNITUDE,
            crop_scale_range: (0.2, 1.0),
            flip_probability: 0.5,
            jitter: JitterStrengths {
                brightness: 0.4,
                contrast: 0.4,
                saturation: 0.4,
            },
            grayscale_probability: 0.2,
            noise_std: 0.02,
        }
    }
}

impl AugmentationPolicy {
    /// Same policy at a different magnitude.
    pub fn with_magnitude(mut self, magnitude: f64) -> Self {
        self.magnitude = magnitude;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.magnitude >= 0.0) {
            return Err(Error::config("magnitude must be non-negative"));
        }
        let (lo, hi) = self.crop_scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::config(format!(
                "crop_scale_range must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})"
            )));
        }
        for (name, p) in [
            ("flip_probability", self.flip_probability),
            ("grayscale_probability", self.grayscale_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::config("noise_std must be non-negative"));
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        self.magnitude / STANDARD_MAGNITUDE
    }
}

fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Bilinear resize of a channel-last square image.
pub fn resize_bilinear(img: &Tensor<f32>, out_side: usize) -> Result<Tensor<f32>> {
    let shape = img.shape();
    if shape.len() != 3 || shape[0] != shape[1] || shape[2] != 3 {
        return Err(Error::ShapeMismatch {
            context: "resize input (expected [side, side, 3])".into(),
            expected: vec![0, 0, 3],
            actual: shape.to_vec(),
        });
    }
    let side = shape[0];
    if out_side == side {
        return Ok(img.clone());
    }
    let scale = side as f32 / out_side as f32;
    let mut out = Vec::with_capacity(out_side * out_side * 3);
    let src = img.data();
    for dy in 0..out_side {
        let sy = ((dy as f32 + 0.5) * scale - 0.5).clamp(0.0, (side - 1) as f32);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(side - 1);
        let fy = sy - y0 as f32;
        for dx in 0..out_side {
            let sx = ((dx as f32 + 0.5) * scale - 0.5).clamp(0.0, (side - 1) as f32);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(side - 1);
            let fx = sx - x0 as f32;
            for c in 0..3 {
                let v00 = src[(y0 * side + x0) * 3 + c];
                let v01 = src[(y0 * side + x1) * 3 + c];
                let v10 = src[(y1 * side + x0) * 3 + c];
                let v11 = src[(y1 * side + x1) * 3 + c];
                let top = v00 + (v01 - v00) * fx;
                let bottom = v10 + (v11 - v10) * fx;
                out.push(top + (bottom - top) * fy);
            }
        }
    }
    Tensor::from_vec(&[out_side, out_side, 3], out)
}

/// Box-average downsample; requires the ratio to be an integer.
pub fn downsample_box(img: &Tensor<f32>, out_side: usize) -> Result<Tensor<f32>> {
    let side = img.shape()[0];
    if out_side == 0 || side % out_side != 0 {
        return Err(Error::invalid(format!(
            "box downsample needs an integer ratio, got {side} -> {out_side}"
        )));
    }
    let k = side / out_side;
    let norm = 1.0 / (k * k) as f32;
    let src = img.data();
    let mut out = vec![0.0f32; out_side * out_side * 3];
    for y in 0..side {
        let oy = y / k;
        for x in 0..side {
            let ox = x / k;
            for c in 0..3 {
                out[(oy * out_side + ox) * 3 + c] += src[(y * side + x) * 3 + c];
            }
        }
    }
    for v in out.iter_mut() {
        *v *= norm;
    }
    Tensor::from_vec(&[out_side, out_side, 3], out)
}

/// Selection-pass downsampling: box averaging for integer ratios, bilinear
/// otherwise. Cheap and deterministic.
pub fn downsample_for_selection(img: &Tensor<f32>, out_side: usize) -> Result<Tensor<f32>> {
    let side = img.shape()[0];
    if out_side == 0 || out_side > side {
        return Err(Error::invalid(format!(
            "selection resolution {out_side} must lie in 1..={side}"
        )));
    }
    if side % out_side == 0 {
        downsample_box(img, out_side)
    } else {
        resize_bilinear(img, out_side)
    }
}

/// Produce one augmented view of `image` at `resolution`, deterministic
/// under the RNG state.
pub fn augment(
    image: &Tensor<f32>,
    policy: &AugmentationPolicy,
    resolution: u32,
    rng: &mut impl Rng,
) -> Result<Tensor<f32>> {
    policy.validate()?;
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != shape[1] || shape[2] != 3 {
        return Err(Error::ShapeMismatch {
            context: "augment input (expected [side, side, 3])".into(),
            expected: vec![0, 0, 3],
            actual: shape.to_vec(),
        });
    }
    let side = shape[0];
    let resolution = resolution as usize;
    if resolution == 0 || resolution > side {
        return Err(Error::config(format!(
            "view resolution {resolution} must lie in 1..={side} (source side)"
        )));
    }

    // Random resized crop: area fraction drawn uniformly, square window.
    let (lo, hi) = policy.crop_scale_range;
    let area = lo + (hi - lo) * rng.random::<f64>();
    let crop_side = ((area.sqrt() * side as f64).round() as usize).clamp(1, side);
    let max_offset = side - crop_side;
    let oy = if max_offset == 0 { 0 } else { rng.random_range(0..=max_offset) };
    let ox = if max_offset == 0 { 0 } else { rng.random_range(0..=max_offset) };
    let mut crop = Vec::with_capacity(crop_side * crop_side * 3);
    for y in 0..crop_side {
        let row = ((oy + y) * side + ox) * 3;
        crop.extend_from_slice(&image.data()[row..row + crop_side * 3]);
    }
    let crop = Tensor::from_vec(&[crop_side, crop_side, 3], crop)?;
    let mut view = resize_bilinear(&crop, resolution)?;

    // Horizontal flip.
    let flip = rng.random::<f64>() < policy.flip_probability;
    if flip {
        let data = view.data_mut();
        for y in 0..resolution {
            for x in 0..resolution / 2 {
                let a = (y * resolution + x) * 3;
                let b = (y * resolution + (resolution - 1 - x)) * 3;
                for c in 0..3 {
                    data.swap(a + c, b + c);
                }
            }
        }
    }

    // Photometric jitter, strengths scaled by magnitude / 5. Factors are
    // derived from raw uniforms so the draw count is fixed per view.
    let s = policy.scale();
    let jitter_factor = |strength: f64, rng: &mut dyn rand::RngCore| -> f32 {
        let eff = strength * s;
        let u: f64 = rand::Rng::random(rng);
        (1.0 - eff + 2.0 * eff * u) as f32
    };
    let brightness = jitter_factor(policy.jitter.brightness, rng);
    let contrast = jitter_factor(policy.jitter.contrast, rng);
    let saturation = jitter_factor(policy.jitter.saturation, rng);
    let grayscale = rng.random::<f64>() < policy.grayscale_probability;

    {
        let data = view.data_mut();
        // Brightness: multiply everything.
        for v in data.iter_mut() {
            *v *= brightness;
        }
        // Contrast: blend with the mean luma of the view.
        let pixels = (data.len() / 3) as f32;
        let mean: f32 = data
            .chunks(3)
            .map(|p| luma(p[0], p[1], p[2]))
            .sum::<f32>()
            / pixels;
        for p in data.chunks_mut(3) {
            for v in p.iter_mut() {
                *v = mean + contrast * (*v - mean);
            }
        }
        // Saturation: blend each pixel with its own luma.
        for p in data.chunks_mut(3) {
            let l = luma(p[0], p[1], p[2]);
            for v in p.iter_mut() {
                *v = l + saturation * (*v - l);
            }
        }
        if grayscale {
            for p in data.chunks_mut(3) {
                let l = luma(p[0], p[1], p[2]);
                p.fill(l);
            }
        }
    }

    // Additive Gaussian noise, also magnitude-scaled.
    let eff_noise = policy.noise_std * s;
    if eff_noise > 0.0 {
        let dist = Normal::new(0.0f64, eff_noise)
            .map_err(|e| Error::config(format!("noise distribution: {e}")))?;
        for v in view.data_mut().iter_mut() {
            *v += dist.sample(rng) as f32;
        }
    }
    for v in view.data_mut().iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(view)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::rng::{derive, Stream};

    fn gradient_image(side: usize) -> Tensor<f32> {
        let mut data = Vec::with_capacity(side * side * 3);
        for y in 0..side {
            for x in 0..side {
                data.push(x as f32 / side as f32);
                data.push(y as f32 / side as f32);
                data.push(0.5);
            }
        }
        Tensor::from_vec(&[side, side, 3], data).unwrap()
    }

    fn null_policy() -> AugmentationPolicy {
        AugmentationPolicy {
            magnitude: 0.0,
            crop_scale_range: (1.0, 1.0),
            flip_probability: 0.0,
            grayscale_probability: 0.0,
            noise_std: 0.0,
            ..AugmentationPolicy::default()
        }
    }

    #[test]
    fn magnitude_zero_without_flip_is_a_pure_resized_crop() {
        let img = gradient_image(32);
        let mut rng = derive(1, Stream::Augment { step: 0, slot: 0 });
        let view = augment(&img, &null_policy(), 16, &mut rng).unwrap();
        let reference = resize_bilinear(&img, 16).unwrap();
        for (a, b) in view.data().iter().zip(reference.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_rng_states_give_identical_views() {
        let img = gradient_image(32);
        let policy = AugmentationPolicy::default();
        let mut rng1 = derive(9, Stream::Augment { step: 4, slot: 2 });
        let mut rng2 = derive(9, Stream::Augment { step: 4, slot: 2 });
        let a = augment(&img, &policy, 24, &mut rng1).unwrap();
        let b = augment(&img, &policy, 24, &mut rng2).unwrap();
        assert_eq!(a, b);
        // A different stream produces a different view.
        let mut rng3 = derive(9, Stream::Augment { step: 4, slot: 3 });
        let c = augment(&img, &policy, 24, &mut rng3).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn views_stay_in_unit_range() {
        let img = gradient_image(32);
        let policy = AugmentationPolicy::default().with_magnitude(8.0);
        for slot in 0..20 {
            let mut rng = derive(3, Stream::Augment { step: 0, slot });
            let view = augment(&img, &policy, 16, &mut rng).unwrap();
            assert!(view.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn resolution_larger_than_source_is_rejected() {
        let img = gradient_image(16);
        let mut rng = derive(1, Stream::Augment { step: 0, slot: 0 });
        assert!(augment(&img, &AugmentationPolicy::default(), 32, &mut rng).is_err());
    }

    #[test]
    fn box_downsample_averages_blocks() {
        let img = gradient_image(32);
        let small = downsample_box(&img, 8).unwrap();
        assert_eq!(small.shape(), &[8, 8, 3]);
        // First output pixel is the mean of the top-left 4x4 block.
        let mut expected = [0.0f32; 3];
        for y in 0..4 {
            for x in 0..4 {
                for c in 0..3 {
                    expected[c] += img.data()[(y * 32 + x) * 3 + c];
                }
            }
        }
        for c in 0..3 {
            assert!((small.data()[c] - expected[c] / 16.0).abs() < 1e-6);
        }
        // Non-integer ratios fall back to bilinear in the selection helper.
        assert!(downsample_box(&img, 10).is_err());
        assert!(downsample_for_selection(&img, 10).is_ok());
    }

    #[test]
    fn grayscale_collapses_channels() {
        let img = gradient_image(16);
        let policy = AugmentationPolicy {
            grayscale_probability: 1.0,
            noise_std: 0.0,
            ..null_policy()
        };
        let mut rng = derive(5, Stream::Augment { step: 0, slot: 0 });
        let view = augment(&img, &policy, 16, &mut rng).unwrap();
        for p in view.data().chunks(3) {
            assert!((p[0] - p[1]).abs() < 1e-6 && (p[1] - p[2]).abs() < 1e-6);
        }
    }

    #[test]
    fn standard_magnitude_reproduces_configured_strengths() {
        // At magnitude 5 the effective scale is exactly 1; at 2.5 it halves.
        let policy = AugmentationPolicy::default();
        assert_eq!(policy.scale(), 1.0);
        assert_eq!(policy.with_magnitude(2.5).scale(), 0.5);
    }
}
