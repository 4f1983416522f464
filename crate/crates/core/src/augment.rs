//! Stochastic view generation: random resized crop, color jitter, random
//! grayscale, optional Gaussian blur and horizontal flip, in that order.
//!
//! Every stage is split into a `sample_*` function that draws its random
//! parameters and a deterministic `apply`/transform, so the pipeline is a pure
//! function of `(image, config, seed, stream)`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::stream_rng;

/// BT.601 luma weights.
pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

const CROP_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JitterConfig {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub probability: f64,
}

impl Default for JitterConfig {
    fn default() -> Self {
        JitterConfig {
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            hue: 0.1,
            probability: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlurConfig {
    pub sigma_range: (f64, f64),
    pub probability: f64,
    pub enabled: bool,
}

impl Default for BlurConfig {
    fn default() -> Self {
        BlurConfig {
            sigma_range: (0.1, 2.0),
            probability: 0.5,
            enabled: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub crop_scale_range: (f64, f64),
    pub crop_aspect_range: (f64, f64),
    pub jitter: JitterConfig,
    pub grayscale_probability: f64,
    pub hflip_probability: f64,
    pub blur: BlurConfig,
    pub output_size: (usize, usize),
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            crop_scale_range: (0.2, 1.0),
            crop_aspect_range: (3.0 / 4.0, 4.0 / 3.0),
            jitter: JitterConfig::default(),
            grayscale_probability: 0.2,
            hflip_probability: 0.5,
            blur: BlurConfig::default(),
            output_size: (32, 32),
        }
    }
}

impl AugmentationConfig {
    /// Default pipeline for a dataset: blur only for the digit/fashion sets.
    pub fn for_dataset(name: &str) -> Self {
        let mut cfg = AugmentationConfig::default();
        cfg.blur.enabled = matches!(name, "mnist" | "fashion_mnist");
        cfg
    }

    /// A pipeline whose every stage is the identity.
    pub fn identity() -> Self {
        AugmentationConfig {
            crop_scale_range: (1.0, 1.0),
            crop_aspect_range: (1.0, 1.0),
            jitter: JitterConfig {
                probability: 0.0,
                ..JitterConfig::default()
            },
            grayscale_probability: 0.0,
            hflip_probability: 0.0,
            blur: BlurConfig::default(),
            output_size: (32, 32),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("jitter.probability", self.jitter.probability),
            ("grayscale_probability", self.grayscale_probability),
            ("hflip_probability", self.hflip_probability),
            ("blur.probability", self.blur.probability),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("augmentation.{name} = {p} not in [0, 1]")));
            }
        }
        let (lo, hi) = self.crop_scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!(
                "augmentation.crop_scale_range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1"
            )));
        }
        let (alo, ahi) = self.crop_aspect_range;
        if !(alo > 0.0 && alo <= ahi) {
            return Err(Error::Config(format!(
                "augmentation.crop_aspect_range ({alo}, {ahi}) must be positive and ordered"
            )));
        }
        let (slo, shi) = self.blur.sigma_range;
        if !(slo > 0.0 && slo <= shi) {
            return Err(Error::Config(format!(
                "augmentation.blur.sigma_range ({slo}, {shi}) must be positive and ordered"
            )));
        }
        let j = &self.jitter;
        if [j.brightness, j.contrast, j.saturation].iter().any(|&s| s < 0.0) || !(0.0..=0.5).contains(&j.hue) {
            return Err(Error::Config("augmentation.jitter strengths out of range".into()));
        }
        if self.output_size.0 == 0 || self.output_size.1 == 0 {
            return Err(Error::Config("augmentation.output_size must be positive".into()));
        }
        Ok(())
    }
}

// ---- random resized crop --------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    /// Area fraction drawn for this box; `None` for the center fallback.
    pub scale: Option<f64>,
}

/// Draws a crop window.
///
/// The area fraction is uniform in the scale range. The aspect ratio is
/// log-uniform over the part of the aspect range for which a box of that
/// area fits inside the image, so on square images the first attempt always
/// succeeds; when the intersection is empty the draw is retried, falling back
/// to a center crop after ten attempts.
pub fn sample_crop(height: usize, width: usize, cfg: &AugmentationConfig, rng: &mut impl Rng) -> CropBox {
    let (h, w) = (height as f64, width as f64);
    let area = h * w;
    let (alo, ahi) = cfg.crop_aspect_range;
    let (slo, shi) = cfg.crop_scale_range;
    for _ in 0..CROP_ATTEMPTS {
        let scale = if slo < shi { rng.random_range(slo..=shi) } else { slo };
        let target = scale * area;
        let lo = alo.max(target / (h * h));
        let hi = ahi.min(w * w / target);
        if lo > hi {
            continue;
        }
        let log_ratio = if lo < hi {
            rng.random_range(lo.ln()..=hi.ln())
        } else {
            lo.ln()
        };
        let ratio = log_ratio.exp();
        let cw = ((target * ratio).sqrt().round() as usize).clamp(1, width);
        let ch = ((target / ratio).sqrt().round() as usize).clamp(1, height);
        let top = rng.random_range(0..=height - ch);
        let left = rng.random_range(0..=width - cw);
        return CropBox {
            top,
            left,
            height: ch,
            width: cw,
            scale: Some(scale),
        };
    }
    let in_ratio = w / h;
    let (cw, ch) = if in_ratio < alo {
        (width, ((w / alo).round() as usize).clamp(1, height))
    } else if in_ratio > ahi {
        (((h * ahi).round() as usize).clamp(1, width), height)
    } else {
        (width, height)
    };
    CropBox {
        top: (height - ch) / 2,
        left: (width - cw) / 2,
        height: ch,
        width: cw,
        scale: None,
    }
}

pub fn resized_crop(img: &Image, b: &CropBox, out: (usize, usize)) -> Image {
    img.crop(b.top, b.left, b.height, b.width).resize(out.0, out.1)
}

pub fn random_resized_crop(img: &Image, cfg: &AugmentationConfig, rng: &mut impl Rng) -> Result<Image> {
    if img.data.is_empty() {
        return Err(Error::dim("random_resized_crop", &[img.channels, img.height, img.width], &[]));
    }
    let b = sample_crop(img.height, img.width, cfg, rng);
    Ok(resized_crop(img, &b, cfg.output_size))
}

// ---- color jitter ---------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JitterStage {
    Brightness,
    Contrast,
    Saturation,
    Hue,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterParams {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    /// Fraction of the hue circle, in `[−hue, hue]`.
    pub hue: f32,
    pub order: [JitterStage; 4],
}

impl JitterParams {
    pub fn identity() -> Self {
        JitterParams {
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
            hue: 0.0,
            order: [
                JitterStage::Brightness,
                JitterStage::Contrast,
                JitterStage::Saturation,
                JitterStage::Hue,
            ],
        }
    }
}

fn factor(strength: f64, rng: &mut impl Rng) -> f32 {
    if strength == 0.0 {
        return 1.0;
    }
    rng.random_range((1.0 - strength).max(0.0)..=1.0 + strength) as f32
}

/// Draws whether jitter fires and, if so, its factors and stage order.
pub fn sample_jitter(cfg: &JitterConfig, rng: &mut impl Rng) -> Option<JitterParams> {
    if !rng.random_bool(cfg.probability) {
        return None;
    }
    let mut order = JitterParams::identity().order;
    order.shuffle(rng);
    Some(JitterParams {
        brightness: factor(cfg.brightness, rng),
        contrast: factor(cfg.contrast, rng),
        saturation: factor(cfg.saturation, rng),
        hue: if cfg.hue == 0.0 {
            0.0
        } else {
            rng.random_range(-cfg.hue..=cfg.hue) as f32
        },
        order,
    })
}

fn require_rgb(img: &Image) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::Channel(img.channels));
    }
    Ok(())
}

fn luma_plane(img: &Image) -> Vec<f32> {
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    (0..r.len())
        .map(|i| LUMA[0] * r[i] + LUMA[1] * g[i] + LUMA[2] * b[i])
        .collect()
}

pub fn adjust_brightness(img: &Image, f: f32) -> Image {
    let mut out = img.clone();
    out.data.iter_mut().for_each(|v| *v = (*v * f).clamp(0.0, 1.0));
    out
}

/// Scales each pixel's distance from the image's mean luma.
pub fn adjust_contrast(img: &Image, f: f32) -> Result<Image> {
    require_rgb(img)?;
    let luma = luma_plane(img);
    let mean = luma.iter().sum::<f32>() / luma.len() as f32;
    let mut out = img.clone();
    out.data
        .iter_mut()
        .for_each(|v| *v = (mean + f * (*v - mean)).clamp(0.0, 1.0));
    Ok(out)
}

/// Scales each pixel's distance from its own luma.
pub fn adjust_saturation(img: &Image, f: f32) -> Result<Image> {
    require_rgb(img)?;
    let luma = luma_plane(img);
    let mut out = img.clone();
    for c in 0..3 {
        for (v, &l) in out.plane_mut(c).iter_mut().zip(&luma) {
            *v = (l + f * (*v - l)).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Rotates hue by `shift` turns through an HSV round trip.
pub fn adjust_hue(img: &Image, shift: f32) -> Result<Image> {
    require_rgb(img)?;
    if shift == 0.0 {
        return Ok(img.clone());
    }
    let mut out = img.clone();
    let n = img.height * img.width;
    for i in 0..n {
        let (h, s, v) = rgb_to_hsv(img.data[i], img.data[n + i], img.data[2 * n + i]);
        let (r, g, b) = hsv_to_rgb((h + shift).rem_euclid(1.0), s, v);
        out.data[i] = r.clamp(0.0, 1.0);
        out.data[n + i] = g.clamp(0.0, 1.0);
        out.data[2 * n + i] = b.clamp(0.0, 1.0);
    }
    Ok(out)
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta == 0.0 {
        return (0.0, s, max);
    }
    let h = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    (h / 6.0, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as i32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

pub fn apply_jitter(img: &Image, p: &JitterParams) -> Result<Image> {
    require_rgb(img)?;
    let mut out = img.clone();
    for stage in p.order {
        out = match stage {
            JitterStage::Brightness => adjust_brightness(&out, p.brightness),
            JitterStage::Contrast => adjust_contrast(&out, p.contrast)?,
            JitterStage::Saturation => adjust_saturation(&out, p.saturation)?,
            JitterStage::Hue => adjust_hue(&out, p.hue)?,
        };
    }
    Ok(out)
}

pub fn color_jitter(img: &Image, cfg: &AugmentationConfig, rng: &mut impl Rng) -> Result<Image> {
    require_rgb(img)?;
    match sample_jitter(&cfg.jitter, rng) {
        Some(p) => apply_jitter(img, &p),
        None => Ok(img.clone()),
    }
}

// ---- grayscale, flip, blur -----------------------------------------------

pub fn to_grayscale(img: &Image) -> Result<Image> {
    require_rgb(img)?;
    let luma = luma_plane(img);
    let mut out = img.clone();
    for c in 0..3 {
        out.plane_mut(c).copy_from_slice(&luma);
    }
    Ok(out)
}

pub fn sample_grayscale(cfg: &AugmentationConfig, rng: &mut impl Rng) -> bool {
    rng.random_bool(cfg.grayscale_probability)
}

pub fn random_grayscale(img: &Image, cfg: &AugmentationConfig, rng: &mut impl Rng) -> Result<Image> {
    require_rgb(img)?;
    if sample_grayscale(cfg, rng) {
        to_grayscale(img)
    } else {
        Ok(img.clone())
    }
}

pub fn hflip(img: &Image) -> Image {
    let mut out = img.clone();
    for row in out.data.chunks_mut(img.width) {
        row.reverse();
    }
    out
}

pub fn sample_flip(cfg: &AugmentationConfig, rng: &mut impl Rng) -> bool {
    rng.random_bool(cfg.hflip_probability)
}

pub fn random_horizontal_flip(img: &Image, cfg: &AugmentationConfig, rng: &mut impl Rng) -> Image {
    if sample_flip(cfg, rng) {
        hflip(img)
    } else {
        img.clone()
    }
}

/// Normalized 3-tap Gaussian; the 2-D kernel is its outer product.
pub fn gaussian_taps(sigma: f64) -> [f32; 3] {
    let side = (-1.0 / (2.0 * sigma * sigma)).exp();
    let total = 1.0 + 2.0 * side;
    [(side / total) as f32, (1.0 / total) as f32, (side / total) as f32]
}

/// Separable 3×3 Gaussian blur. Borders use half-sample symmetric padding
/// (the edge pixel is repeated), under which the blur preserves the image
/// sum exactly.
pub fn blur(img: &Image, sigma: f64) -> Image {
    let k = gaussian_taps(sigma);
    let (h, w) = (img.height, img.width);
    let mut out = img.clone();
    let mut tmp = vec![0.0f32; h * w];
    for c in 0..img.channels {
        let src = img.plane(c);
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for x in 0..w {
                let l = row[x.saturating_sub(1)];
                let r = row[(x + 1).min(w - 1)];
                tmp[y * w + x] = k[0] * l + k[1] * row[x] + k[2] * r;
            }
        }
        let dst = out.plane_mut(c);
        for y in 0..h {
            let up = y.saturating_sub(1);
            let down = (y + 1).min(h - 1);
            for x in 0..w {
                dst[y * w + x] = k[0] * tmp[up * w + x] + k[1] * tmp[y * w + x] + k[2] * tmp[down * w + x];
            }
        }
    }
    out
}

/// Draws whether blur fires and its sigma; never fires when disabled.
pub fn sample_blur(cfg: &AugmentationConfig, rng: &mut impl Rng) -> Option<f64> {
    if !cfg.blur.enabled || !rng.random_bool(cfg.blur.probability) {
        return None;
    }
    let (lo, hi) = cfg.blur.sigma_range;
    Some(if lo < hi { rng.random_range(lo..=hi) } else { lo })
}

pub fn gaussian_blur(img: &Image, cfg: &AugmentationConfig, rng: &mut impl Rng) -> Image {
    match sample_blur(cfg, rng) {
        Some(sigma) => blur(img, sigma),
        None => img.clone(),
    }
}

// ---- full pipeline --------------------------------------------------------

/// Random choices made while producing one view.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub crop: CropBox,
    pub jitter: Option<JitterParams>,
    pub grayscale: bool,
    pub blur_sigma: Option<f64>,
    pub flipped: bool,
}

/// One draw `t(x)` from the augmentation family.
pub fn augment(img: &Image, cfg: &AugmentationConfig, rng: &mut impl Rng) -> Result<(Image, Trace)> {
    let img = if img.channels == 1 { img.to_rgb() } else { img.clone() };
    require_rgb(&img)?;
    let crop = sample_crop(img.height, img.width, cfg, rng);
    let mut out = resized_crop(&img, &crop, cfg.output_size);
    let jitter = sample_jitter(&cfg.jitter, rng);
    if let Some(p) = &jitter {
        out = apply_jitter(&out, p)?;
    }
    let grayscale = sample_grayscale(cfg, rng);
    if grayscale {
        out = to_grayscale(&out)?;
    }
    let blur_sigma = sample_blur(cfg, rng);
    if let Some(s) = blur_sigma {
        out = blur(&out, s);
    }
    let flipped = sample_flip(cfg, rng);
    if flipped {
        out = hflip(&out);
    }
    Ok((
        out,
        Trace {
            crop,
            jitter,
            grayscale,
            blur_sigma,
            flipped,
        },
    ))
}

/// An input image and two independently augmented views of it.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub x: Image,
    pub x1: Image,
    pub x2: Image,
}

/// Stream ids of the two views of sample stream `stream`.
pub fn view_streams(stream: u64) -> (u64, u64) {
    (stream.wrapping_mul(2), stream.wrapping_mul(2).wrapping_add(1))
}

/// Two views drawn from independent streams derived from `(seed, stream)`.
pub fn make_views(x: &Image, cfg: &AugmentationConfig, seed: u64, stream: u64) -> Result<ViewPair> {
    let (s1, s2) = view_streams(stream);
    let mut r1: ChaCha8Rng = stream_rng(seed, s1);
    let mut r2: ChaCha8Rng = stream_rng(seed, s2);
    let (x1, _) = augment(x, cfg, &mut r1)?;
    let (x2, _) = augment(x, cfg, &mut r2)?;
    Ok(ViewPair {
        x: if x.channels == 1 { x.to_rgb() } else { x.clone() },
        x1,
        x2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn gradient_image(h: usize, w: usize) -> Image {
        let mut data = Vec::new();
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    data.push(((x + 2 * y + 5 * c) % 17) as f32 / 16.0);
                }
            }
        }
        Image::new(3, h, w, data).unwrap()
    }

    #[test]
    fn full_scale_square_crop_is_identity() {
        let img = gradient_image(32, 32);
        let cfg = AugmentationConfig {
            crop_scale_range: (1.0, 1.0),
            crop_aspect_range: (1.0, 1.0),
            ..AugmentationConfig::default()
        };
        let mut rng = stream_rng(1, 0);
        assert_eq!(random_resized_crop(&img, &cfg, &mut rng).unwrap(), img);
    }

    #[test]
    fn crop_of_constant_is_constant() {
        let img = Image::filled(3, 40, 24, 0.61);
        let mut rng = stream_rng(2, 0);
        for _ in 0..50 {
            let out = random_resized_crop(&img, &AugmentationConfig::default(), &mut rng).unwrap();
            assert_eq!((out.height, out.width), (32, 32));
            assert!(out.data.iter().all(|&v| (v - 0.61).abs() < 1e-6));
        }
    }

    #[test]
    fn crop_falls_back_to_center_when_nothing_fits() {
        // A 1×8 strip cannot hold any box with aspect in [3/4, 4/3] at scale ≥ 0.9.
        let cfg = AugmentationConfig {
            crop_scale_range: (0.9, 1.0),
            ..AugmentationConfig::default()
        };
        let b = sample_crop(1, 8, &cfg, &mut stream_rng(0, 0));
        assert_eq!(b.scale, None);
        assert_eq!((b.height, b.width), (1, 1));
        assert_eq!(b.left, 3);
    }

    #[test]
    fn jitter_identity_factors() {
        let img = gradient_image(6, 5);
        let out = apply_jitter(&img, &JitterParams::identity()).unwrap();
        for (a, b) in out.data.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_brightness_is_black() {
        let out = adjust_brightness(&gradient_image(4, 4), 0.0);
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn contrast_closed_form() {
        let img = gradient_image(5, 5);
        let luma = luma_plane(&img);
        let m = luma.iter().sum::<f32>() / luma.len() as f32;
        let out = adjust_contrast(&img, 2.0).unwrap();
        for (o, p) in out.data.iter().zip(&img.data) {
            assert!((o - (m + 2.0 * (p - m)).clamp(0.0, 1.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn hue_round_trip_on_full_turn() {
        let img = gradient_image(4, 4);
        let out = adjust_hue(&adjust_hue(&img, 0.3).unwrap(), -0.3).unwrap();
        for (a, b) in out.data.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn jitter_rejects_single_channel() {
        let img = Image::filled(1, 4, 4, 0.5);
        let mut rng = stream_rng(0, 0);
        assert!(matches!(
            color_jitter(&img, &AugmentationConfig::default(), &mut rng),
            Err(Error::Channel(1))
        ));
    }

    #[test]
    fn grayscale_of_pure_red() {
        let img = Image::new(3, 1, 1, vec![1.0, 0.0, 0.0]).unwrap();
        let out = to_grayscale(&img).unwrap();
        assert_eq!(out.data, vec![0.299; 3]);
        let gray = Image::filled(3, 2, 2, 0.4);
        let g = to_grayscale(&gray).unwrap();
        assert!(g.data.iter().all(|&v| (v - 0.4).abs() < 1e-6));
    }

    #[test]
    fn flip_definition_and_involution() {
        let img = Image::new(1, 1, 2, vec![0.1, 0.9]).unwrap();
        assert_eq!(hflip(&img).data, vec![0.9, 0.1]);
        let g = gradient_image(5, 7);
        assert_eq!(hflip(&hflip(&g)), g);
        let sym = Image::new(1, 2, 3, vec![0.1, 0.5, 0.1, 0.3, 0.2, 0.3]).unwrap();
        assert_eq!(hflip(&sym), sym);
    }

    #[test]
    fn blur_preserves_constants_and_mass() {
        let c = Image::filled(3, 8, 8, 0.3);
        let out = blur(&c, 1.3);
        assert!(out.data.iter().all(|&v| (v - 0.3).abs() < 1e-6));
        let taps = gaussian_taps(0.7);
        assert!((taps.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn blur_disabled_never_fires() {
        let cfg = AugmentationConfig::default();
        let mut rng = stream_rng(0, 0);
        assert!((0..100).all(|_| sample_blur(&cfg, &mut rng).is_none()));
        assert!(AugmentationConfig::for_dataset("mnist").blur.enabled);
        assert!(!AugmentationConfig::for_dataset("cifar10").blur.enabled);
    }

    #[test]
    fn identity_pipeline_reproduces_input() {
        let img = gradient_image(32, 32);
        let v = make_views(&img, &AugmentationConfig::identity(), 9, 4).unwrap();
        assert_eq!(v.x1, img);
        assert_eq!(v.x2, img);
        assert_eq!(v.x, img);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = AugmentationConfig::default();
        cfg.grayscale_probability = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = AugmentationConfig::default();
        cfg.crop_scale_range = (0.0, 1.0);
        assert!(cfg.validate().is_err());
        let mut cfg = AugmentationConfig::default();
        cfg.blur.sigma_range = (-0.1, 2.0);
        assert!(cfg.validate().is_err());
        assert!(AugmentationConfig::default().validate().is_ok());
    }
}
