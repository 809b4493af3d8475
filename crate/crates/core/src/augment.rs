//! Rotation, weak and strong augmentation.
//!
//! Weak: horizontal flip with probability 0.5, then a random crop from a
//! reflect-padded copy (padding `side / 8`, i.e. 4 px at 32 px).
//!
//! Strong: the weak transform, then [`STRONG_OPS_PER_IMAGE`] distinct ops drawn
//! uniformly from [`StrongOp::MENU`], each with magnitude `m ~ U[0, 1]`, then a
//! cutout square of side `max(1, round(u * side / 2))`, `u ~ U[0, 1]`, filled
//! with 0.5. Per-op parameterisation:
//!
//! | op          | parameters                                                    |
//! |-------------|---------------------------------------------------------------|
//! | translate   | random axis, shift `±round(0.3 m side)` px, fill 0.5           |
//! | shear       | random axis, factor `±0.3 m`, nearest sampling, fill 0.5       |
//! | color       | brightness, contrast, saturation factors `1 + 0.9 m u`, `u~U[-1,1]` |
//! | posterize   | keep `8 - round(4 m)` bits per channel                         |
//! | solarize    | invert pixels `>= 1 - m`                                      |
//! | sharpness   | blend with 3x3 smooth filter, factor `1 + 0.9 m u`             |
//! | equalize    | per-channel 256-bin histogram equalization                     |
//!
//! All outputs are clamped to `[0, 1]`.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub const STRONG_OPS_PER_IMAGE: usize = 2;
const FILL: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RotationAngle(u8);

impl RotationAngle {
    pub const ALL: [RotationAngle; 4] = [RotationAngle(0), RotationAngle(1), RotationAngle(2), RotationAngle(3)];

    pub fn from_index(index: usize) -> Result<Self> {
        if index < 4 {
            Ok(RotationAngle(index as u8))
        } else {
            Err(Error::InvalidArgument(format!("rotation index {index} is not in 0..4")))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn degrees(self) -> u32 {
        90 * self.0 as u32
    }
}

/// Counter-clockwise rotation by a multiple of 90 degrees.
pub fn rotate(image: &Image, angle: RotationAngle) -> Result<Image> {
    let shape = image.shape();
    if !shape.is_square() {
        return Err(Error::ShapeMismatch { expected: "square image".into(), found: shape.to_string() });
    }
    let n = shape.width;
    let mut out = image.clone();
    if angle.0 == 0 {
        return Ok(out);
    }
    for c in 0..shape.channels {
        for y in 0..n {
            for x in 0..n {
                let v = match angle.0 {
                    1 => image.at(c, x, n - 1 - y),
                    2 => image.at(c, n - 1 - y, n - 1 - x),
                    _ => image.at(c, n - 1 - x, y),
                };
                out.set(c, y, x, v);
            }
        }
    }
    Ok(out)
}

pub fn crop_padding(side: usize) -> usize {
    side / 8
}

/// One realisation of the weak transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeakDraw {
    pub flip: bool,
    /// Crop offsets into the padded image, each in `0..=2 * padding`.
    pub dx: usize,
    pub dy: usize,
}

impl WeakDraw {
    pub fn identity(side: usize) -> Self {
        let p = crop_padding(side);
        Self { flip: false, dx: p, dy: p }
    }

    pub fn sample<R: Rng + ?Sized>(side: usize, rng: &mut R) -> Self {
        let p = crop_padding(side);
        Self { flip: rng.gen_bool(0.5), dx: rng.gen_range(0..=2 * p), dy: rng.gen_range(0..=2 * p) }
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i.clamp(0, n - 1) as usize
}

pub fn weak_with(image: &Image, draw: WeakDraw) -> Image {
    let shape = image.shape();
    let (h, w) = (shape.height, shape.width);
    let p = crop_padding(w) as isize;
    let mut out = image.clone();
    for c in 0..shape.channels {
        for y in 0..h {
            let sy = reflect(y as isize + draw.dy as isize - p, h);
            for x in 0..w {
                let sx = reflect(x as isize + draw.dx as isize - p, w);
                let sx = if draw.flip { w - 1 - sx } else { sx };
                out.set(c, y, x, image.at(c, sy, sx));
            }
        }
    }
    out
}

pub fn weak<R: Rng + ?Sized>(image: &Image, rng: &mut R) -> Image {
    weak_with(image, WeakDraw::sample(image.shape().width, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrongOp {
    Translate,
    Shear,
    Color,
    Posterize,
    Solarize,
    Sharpness,
    Equalize,
}

impl StrongOp {
    pub const MENU: [StrongOp; 7] = [
        StrongOp::Translate,
        StrongOp::Shear,
        StrongOp::Color,
        StrongOp::Posterize,
        StrongOp::Solarize,
        StrongOp::Sharpness,
        StrongOp::Equalize,
    ];

    fn describe(self) -> &'static str {
        match self {
            StrongOp::Translate => "axis~{x,y}; shift=±round(0.3*m*side)px; fill=0.5",
            StrongOp::Shear => "axis~{x,y}; factor=±0.3*m; nearest; fill=0.5",
            StrongOp::Color => "brightness,contrast,saturation factor=1+0.9*m*u, u~U[-1,1]",
            StrongOp::Posterize => "bits=8-round(4*m)",
            StrongOp::Solarize => "invert where v>=1-m",
            StrongOp::Sharpness => "smooth3x3 blend factor=1+0.9*m*u, u~U[-1,1]",
            StrongOp::Equalize => "per-channel 256-bin histogram equalization",
        }
    }

    pub fn apply<R: Rng + ?Sized>(self, image: &mut Image, magnitude: f32, rng: &mut R) {
        let m = magnitude.clamp(0.0, 1.0);
        match self {
            StrongOp::Translate => {
                let side = image.shape().width as f32;
                let shift = (0.3 * m * side).round() as isize * if rng.gen_bool(0.5) { 1 } else { -1 };
                let horizontal = rng.gen_bool(0.5);
                *image = resample(image, |y, x| if horizontal { (y, x - shift as f32) } else { (y - shift as f32, x) });
            }
            StrongOp::Shear => {
                let factor = 0.3 * m * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let horizontal = rng.gen_bool(0.5);
                let centre = (image.shape().width as f32 - 1.0) / 2.0;
                *image = resample(image, |y, x| {
                    if horizontal {
                        (y, x + factor * (y - centre))
                    } else {
                        (y + factor * (x - centre), x)
                    }
                });
            }
            StrongOp::Color => {
                let mut factor = || 1.0 + 0.9 * m * rng.gen_range(-1.0f32..=1.0);
                let (b, c, s) = (factor(), factor(), factor());
                color_jitter(image, b, c, s);
            }
            StrongOp::Posterize => {
                let bits = 8 - (4.0 * m).round() as u32;
                let shift = 8 - bits;
                for v in image.data_mut() {
                    let q = ((*v * 255.0).round() as u32).min(255);
                    *v = ((q >> shift) << shift) as f32 / 255.0;
                }
            }
            StrongOp::Solarize => {
                let threshold = 1.0 - m;
                for v in image.data_mut() {
                    if *v >= threshold {
                        *v = 1.0 - *v;
                    }
                }
            }
            StrongOp::Sharpness => {
                let factor = 1.0 + 0.9 * m * rng.gen_range(-1.0f32..=1.0);
                sharpness(image, factor);
            }
            StrongOp::Equalize => equalize(image),
        }
        image.clamp_unit();
    }
}

fn resample(image: &Image, map: impl Fn(f32, f32) -> (f32, f32)) -> Image {
    let shape = image.shape();
    let mut out = Image::filled(shape, FILL);
    for y in 0..shape.height {
        for x in 0..shape.width {
            let (sy, sx) = map(y as f32, x as f32);
            let (sy, sx) = (sy.round(), sx.round());
            if sy < 0.0 || sx < 0.0 || sy >= shape.height as f32 || sx >= shape.width as f32 {
                continue;
            }
            for c in 0..shape.channels {
                out.set(c, y, x, image.at(c, sy as usize, sx as usize));
            }
        }
    }
    out
}

fn color_jitter(image: &mut Image, brightness: f32, contrast: f32, saturation: f32) {
    let shape = image.shape();
    let plane = shape.height * shape.width;
    let data = image.data_mut();
    for v in data.iter_mut() {
        *v *= brightness;
    }
    let mean = data.iter().sum::<f32>() / data.len() as f32;
    for v in data.iter_mut() {
        *v = mean + (*v - mean) * contrast;
    }
    if shape.channels == 3 {
        for i in 0..plane {
            let (r, g, b) = (data[i], data[plane + i], data[2 * plane + i]);
            let grey = 0.299 * r + 0.587 * g + 0.114 * b;
            for c in 0..3 {
                let v = &mut data[c * plane + i];
                *v = grey + (*v - grey) * saturation;
            }
        }
    }
}

fn sharpness(image: &mut Image, factor: f32) {
    let shape = image.shape();
    let src = image.clone();
    for c in 0..shape.channels {
        for y in 1..shape.height.saturating_sub(1) {
            for x in 1..shape.width.saturating_sub(1) {
                let mut acc = 0.0;
                for dy in 0..3 {
                    for dx in 0..3 {
                        let w = if dy == 1 && dx == 1 { 5.0 } else { 1.0 };
                        acc += w * src.at(c, y + dy - 1, x + dx - 1);
                    }
                }
                let smooth = acc / 13.0;
                image.set(c, y, x, smooth + factor * (src.at(c, y, x) - smooth));
            }
        }
    }
}

fn equalize(image: &mut Image) {
    let shape = image.shape();
    let plane = shape.height * shape.width;
    for ch in image.data_mut().chunks_mut(plane) {
        let mut hist = [0usize; 256];
        let bins: Vec<usize> = ch.iter().map(|&v| ((v * 255.0).round() as usize).min(255)).collect();
        for &b in &bins {
            hist[b] += 1;
        }
        let mut cdf = [0usize; 256];
        let mut run = 0;
        for (i, &h) in hist.iter().enumerate() {
            run += h;
            cdf[i] = run;
        }
        let cdf_min = cdf.iter().copied().find(|&v| v > 0).unwrap_or(0);
        if plane == cdf_min {
            continue;
        }
        let denom = (plane - cdf_min) as f32;
        for (v, &b) in ch.iter_mut().zip(&bins) {
            *v = (cdf[b] - cdf_min) as f32 / denom;
        }
    }
}

pub fn cutout<R: Rng + ?Sized>(image: &mut Image, rng: &mut R) {
    let shape = image.shape();
    let size = ((rng.gen::<f32>() * shape.width as f32 / 2.0).round() as usize).max(1);
    let cy = rng.gen_range(0..shape.height) as isize;
    let cx = rng.gen_range(0..shape.width) as isize;
    let half = size as isize / 2;
    for c in 0..shape.channels {
        for y in (cy - half).max(0)..(cy - half + size as isize).min(shape.height as isize) {
            for x in (cx - half).max(0)..(cx - half + size as isize).min(shape.width as isize) {
                image.set(c, y as usize, x as usize, FILL);
            }
        }
    }
}

pub fn strong<R: Rng + ?Sized>(image: &Image, rng: &mut R) -> Image {
    let mut out = weak(image, rng);
    let picks = sample(rng, StrongOp::MENU.len(), STRONG_OPS_PER_IMAGE);
    for i in picks.iter() {
        let magnitude = rng.gen::<f32>();
        StrongOp::MENU[i].apply(&mut out, magnitude, rng);
    }
    cutout(&mut out, rng);
    out.clamp_unit();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Weak,
    Strong,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpDescriptor {
    pub name: String,
    pub params: String,
}

/// Serializable description of an augmentation policy, recorded in run manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub kind: PolicyKind,
    pub ops: Vec<OpDescriptor>,
    /// Per-call randomness: ChaCha8 keyed by (run seed, stream, iteration).
    pub seed_stream: String,
}

impl AugmentPolicy {
    pub fn weak() -> Self {
        Self {
            kind: PolicyKind::Weak,
            ops: weak_ops(),
            seed_stream: "chacha8(seed, stream, iteration)".into(),
        }
    }

    pub fn strong() -> Self {
        let mut ops = weak_ops();
        ops.push(OpDescriptor {
            name: format!("randaugment-lite(n={STRONG_OPS_PER_IMAGE})"),
            params: "ops drawn without replacement, magnitude m~U[0,1]".into(),
        });
        ops.extend(StrongOp::MENU.iter().map(|op| OpDescriptor {
            name: serde_json::to_value(op).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
            params: op.describe().into(),
        }));
        ops.push(OpDescriptor { name: "cutout".into(), params: "side=max(1,round(u*side/2)), fill=0.5".into() });
        Self { kind: PolicyKind::Strong, ops, seed_stream: "chacha8(seed, stream, iteration)".into() }
    }

    pub fn apply<R: Rng + ?Sized>(&self, image: &Image, rng: &mut R) -> Image {
        match self.kind {
            PolicyKind::Weak => weak(image, rng),
            PolicyKind::Strong => strong(image, rng),
        }
    }
}

fn weak_ops() -> Vec<OpDescriptor> {
    vec![
        OpDescriptor { name: "hflip".into(), params: "p=0.5".into() },
        OpDescriptor { name: "random-crop".into(), params: "reflect padding side/8".into() },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageShape;
    use crate::rng::{stream_rng, Stream};
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn ramp(side: usize) -> Image {
        let shape = ImageShape::square(side);
        Image::new(shape, (0..shape.len()).map(|i| (i % 97) as f32 / 96.0).collect()).unwrap()
    }

    #[test]
    fn rotation_identity_and_inverse() {
        let x = ramp(8);
        assert_eq!(rotate(&x, RotationAngle::ALL[0]).unwrap(), x);
        let r = rotate(&rotate(&x, RotationAngle::ALL[1]).unwrap(), RotationAngle::ALL[3]).unwrap();
        assert_eq!(r, x);
    }

    #[test]
    fn half_turn_reverses_both_axes() {
        let x = ramp(6);
        let r = rotate(&x, RotationAngle::ALL[2]).unwrap();
        for c in 0..3 {
            for y in 0..6 {
                for xx in 0..6 {
                    assert_eq!(r.at(c, y, xx), x.at(c, 5 - y, 5 - xx));
                }
            }
        }
    }

    #[test]
    fn quarter_turn_is_counter_clockwise() {
        let mut x = Image::filled(ImageShape::square(4), 0.0);
        x.set(0, 0, 3, 1.0); // top-right
        let r = rotate(&x, RotationAngle::ALL[1]).unwrap();
        assert_eq!(r.at(0, 0, 0), 1.0); // ends top-left
    }

    #[test]
    fn rotate_rejects_non_square() {
        let img = Image::filled(ImageShape { channels: 3, height: 4, width: 5 }, 0.0);
        assert!(rotate(&img, RotationAngle::ALL[1]).is_err());
        assert!(RotationAngle::from_index(4).is_err());
    }

    #[test]
    fn weak_identity_draw() {
        let x = ramp(16);
        assert_eq!(weak_with(&x, WeakDraw::identity(16)), x);
    }

    #[test]
    fn weak_flip_frequency() {
        let mut rng = stream_rng(0, Stream::LabeledAugment, 0);
        let flips = (0..10_000).filter(|_| WeakDraw::sample(32, &mut rng).flip).count();
        let rate = flips as f64 / 10_000.0;
        assert!((rate - 0.5).abs() <= 0.02, "flip rate {rate}");
    }

    #[test]
    fn strong_is_deterministic_given_rng() {
        let x = ramp(16);
        let a = strong(&x, &mut stream_rng(4, Stream::PositiveAugment, 9));
        let b = strong(&x, &mut stream_rng(4, Stream::PositiveAugment, 9));
        assert_eq!(a, b);
    }

    #[test]
    fn every_strong_op_stays_in_range() {
        let x = ramp(16);
        let mut rng = stream_rng(1, Stream::PositiveAugment, 0);
        for op in StrongOp::MENU {
            for m in [0.0, 0.5, 1.0] {
                let mut y = x.clone();
                op.apply(&mut y, m, &mut rng);
                assert_eq!(y.shape(), x.shape());
                assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)), "{op:?} m={m}");
            }
        }
    }

    #[test]
    fn policy_descriptors_serialize() {
        let s = serde_json::to_string(&AugmentPolicy::strong()).unwrap();
        assert!(s.contains("equalize") && s.contains("cutout"));
        assert_eq!(AugmentPolicy::weak().ops.len(), 2);
    }

    proptest! {
        #[test]
        fn augmentations_preserve_shape_and_range(seed in any::<u64>(), side in 8usize..20) {
            let shape = ImageShape::square(side);
            let mut rng = stream_rng(seed, Stream::NegativeAugment, 0);
            let data = (0..shape.len()).map(|_| rng.gen::<f32>()).collect();
            let x = Image::new(shape, data).unwrap();
            for y in [weak(&x, &mut rng), strong(&x, &mut rng)] {
                prop_assert_eq!(y.shape(), shape);
                prop_assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }

        #[test]
        fn four_quarter_turns_are_identity(seed in any::<u64>(), k in 0usize..4) {
            let shape = ImageShape::square(7);
            let mut rng = stream_rng(seed, Stream::Noise, 0);
            let x = Image::new(shape, (0..shape.len()).map(|_| rng.gen::<f32>()).collect()).unwrap();
            let mut y = rotate(&x, RotationAngle::ALL[k]).unwrap();
            y = rotate(&y, RotationAngle::ALL[(4 - k) % 4]).unwrap();
            prop_assert_eq!(y, x);
        }
    }
}
