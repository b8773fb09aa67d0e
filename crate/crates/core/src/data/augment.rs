use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Resize-crop-jitter pipeline settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    /// Target length of the shorter image edge.
    pub resize: u32,
    /// Side of the square crop.
    pub crop: u32,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            resize: 256,
            crop: 224,
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
        }
    }
}

impl AugmentationConfig {
    /// No rescaling beyond `size`, center crop, no jitter.
    pub fn identity(size: u32) -> Self {
        Self {
            resize: size,
            crop: size,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop == 0 || self.crop > self.resize {
            return Err(Error::Config(format!(
                "crop {} must be in 1..={}",
                self.crop, self.resize
            )));
        }
        if [self.brightness, self.contrast, self.saturation]
            .iter()
            .any(|j| !(*j >= 0.0) || *j >= 1.0)
        {
            return Err(Error::Config("jitter ranges must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    /// Random crop and photometric jitter drawn from `seed`.
    Train { seed: u64 },
    /// Center crop only.
    Test,
}

/// Normalized channel-major image, ready for the backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    /// `3 x height x width`, ImageNet-normalized.
    pub data: Vec<f32>,
}

pub fn augment(image: &RgbImage, cfg: &AugmentationConfig, mode: AugmentMode) -> Result<ImageTensor> {
    cfg.validate()?;
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::Data("empty image".into()));
    }
    let short = w.min(h);
    let resized;
    let img = if short == cfg.resize {
        image
    } else {
        let scale = cfg.resize as f64 / short as f64;
        let nw = ((w as f64 * scale).round() as u32).max(cfg.resize);
        let nh = ((h as f64 * scale).round() as u32).max(cfg.resize);
        resized = imageops::resize(image, nw, nh, FilterType::Triangle);
        &resized
    };
    let (w, h) = img.dimensions();
    let crop = cfg.crop;

    let (x0, y0, jitter) = match mode {
        AugmentMode::Test => ((w - crop) / 2, (h - crop) / 2, None),
        AugmentMode::Train { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x0 = rng.gen_range(0..=w - crop);
            let y0 = rng.gen_range(0..=h - crop);
            let mut factor = |range: f32| {
                if range > 0.0 {
                    rng.gen_range(1.0 - range..=1.0 + range)
                } else {
                    1.0
                }
            };
            let j = [factor(cfg.brightness), factor(cfg.contrast), factor(cfg.saturation)];
            (x0, y0, Some(j))
        }
    };

    let c = crop as usize;
    let mut rgb = vec![[0f32; 3]; c * c];
    for y in 0..c {
        for x in 0..c {
            let p = img.get_pixel(x0 + x as u32, y0 + y as u32).0;
            rgb[y * c + x] = [p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0];
        }
    }
    if let Some([b, ct, s]) = jitter {
        apply_jitter(&mut rgb, b, ct, s);
    }

    let mut data = vec![0f32; 3 * c * c];
    for (i, px) in rgb.iter().enumerate() {
        for ch in 0..3 {
            data[ch * c * c + i] = (px[ch] - MEAN[ch]) / STD[ch];
        }
    }
    Ok(ImageTensor {
        height: c,
        width: c,
        data,
    })
}

fn gray(p: &[f32; 3]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn apply_jitter(rgb: &mut [[f32; 3]], brightness: f32, contrast: f32, saturation: f32) {
    for p in rgb.iter_mut() {
        for v in p.iter_mut() {
            *v = (*v * brightness).clamp(0.0, 1.0);
        }
    }
    let mean = rgb.iter().map(gray).sum::<f32>() / rgb.len() as f32;
    for p in rgb.iter_mut() {
        for v in p.iter_mut() {
            *v = (mean + contrast * (*v - mean)).clamp(0.0, 1.0);
        }
    }
    for p in rgb.iter_mut() {
        let g = gray(p);
        for v in p.iter_mut() {
            *v = (g + saturation * (*v - g)).clamp(0.0, 1.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            image::Rgb([(x * 7 % 256) as u8, (y * 13 % 256) as u8, ((x + y) % 256) as u8])
        })
    }

    #[test]
    fn output_is_crop_sized() {
        let cfg = AugmentationConfig::default();
        let out = augment(&checker(320, 240), &cfg, AugmentMode::Train { seed: 3 }).unwrap();
        assert_eq!((out.height, out.width), (224, 224));
        assert_eq!(out.data.len(), 3 * 224 * 224);
        let out = augment(&checker(320, 240), &cfg, AugmentMode::Test).unwrap();
        assert_eq!((out.height, out.width), (224, 224));
    }

    #[test]
    fn seeded_train_mode_is_reproducible() {
        let cfg = AugmentationConfig::default();
        let img = checker(256, 256);
        let a = augment(&img, &cfg, AugmentMode::Train { seed: 11 }).unwrap();
        let b = augment(&img, &cfg, AugmentMode::Train { seed: 11 }).unwrap();
        assert_eq!(a, b);
        let c = augment(&img, &cfg, AugmentMode::Train { seed: 12 }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn test_mode_is_deterministic() {
        let cfg = AugmentationConfig::default();
        let img = checker(300, 260);
        assert_eq!(
            augment(&img, &cfg, AugmentMode::Test).unwrap(),
            augment(&img, &cfg, AugmentMode::Test).unwrap()
        );
    }

    #[test]
    fn undersized_images_are_upscaled() {
        let cfg = AugmentationConfig::default();
        let out = augment(&checker(100, 80), &cfg, AugmentMode::Test).unwrap();
        assert_eq!((out.height, out.width), (224, 224));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = AugmentationConfig {
            crop: 300,
            ..Default::default()
        };
        assert!(augment(&checker(64, 64), &cfg, AugmentMode::Test).is_err());
    }
}
