//! Procedurally rendered letter glyphs.
//!
//! Every class is a 5x5 bitmap glyph with a canonical upright orientation, so
//! rotation is predictable from shape alone, even under horizontal flips, and
//! no class is a rotation or mirror image of another. Each sample varies glyph
//! size, position, a small tilt, foreground/background colour and pixel noise.

use std::f32::consts::PI;

use rand::Rng as _;

use super::{ImageDataset, Split};
use crate::error::{Error, Result};
use crate::image::{Image, ImageShape};
use crate::rng::{mix64, stream_rng, Stream};

pub const GLYPHS: [(&str, [&str; 5]); 10] = [
    ("A", [".###.", "#...#", "#####", "#...#", "#...#"]),
    ("F", ["#####", "#....", "####.", "#....", "#...."]),
    ("G", [".####", "#....", "#..##", "#...#", ".###."]),
    ("J", ["..###", "...#.", "...#.", "#..#.", ".##.."]),
    ("P", ["####.", "#...#", "####.", "#....", "#...."]),
    ("R", ["####.", "#...#", "####.", "#..#.", "#...#"]),
    ("T", ["#####", "..#..", "..#..", "..#..", "..#.."]),
    ("U", ["#...#", "#...#", "#...#", "#...#", ".###."]),
    ("Y", ["#...#", ".#.#.", "..#..", "..#..", "..#.."]),
    ("4", ["#..#.", "#..#.", "#####", "...#.", "...#."]),
];

const TRAIN_PER_CLASS: usize = 5000;
const TEST_PER_CLASS: usize = 1000;
const SUPERSAMPLE: usize = 3;
const MAX_TILT: f32 = 12.0 * PI / 180.0;
const NOISE_AMPLITUDE: f32 = 0.06;
const MIN_CONTRAST: f32 = 0.35;

pub struct ToyShapes {
    side: usize,
    names: Vec<String>,
    bitmaps: Vec<[[bool; 5]; 5]>,
}

impl ToyShapes {
    pub const ID: &'static str = "toy-shapes";

    pub fn new(side: usize) -> Result<Self> {
        if side < 8 {
            return Err(Error::InvalidArgument(format!("toy-shapes side must be at least 8, got {side}")));
        }
        let names = GLYPHS.iter().map(|(n, _)| n.to_string()).collect();
        let bitmaps = GLYPHS
            .iter()
            .map(|(_, rows)| {
                let mut bm = [[false; 5]; 5];
                for (r, row) in rows.iter().enumerate() {
                    for (c, ch) in row.chars().enumerate() {
                        bm[r][c] = ch == '#';
                    }
                }
                bm
            })
            .collect();
        Ok(Self { side, names, bitmaps })
    }

    fn render(&self, split: Split, class: usize, index: usize) -> Image {
        let key = mix64(((split as u64) << 60) ^ ((class as u64) << 40) ^ index as u64);
        let mut rng = stream_rng(0x70_79_5f_73_68_61_70_65, Stream::ToyShapes, key);
        let s = self.side as f32;

        let glyph = rng.gen_range(0.5 * s..0.8 * s);
        let x0 = rng.gen_range(0.0..=(s - glyph));
        let y0 = rng.gen_range(0.0..=(s - glyph));
        let tilt = rng.gen_range(-MAX_TILT..MAX_TILT);
        let (fg, bg) = loop {
            let fg: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
            let bg: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
            if (luma(fg) - luma(bg)).abs() >= MIN_CONTRAST {
                break (fg, bg);
            }
        };

        let (sin, cos) = tilt.sin_cos();
        let cx = x0 + glyph / 2.0;
        let cy = y0 + glyph / 2.0;
        let bitmap = &self.bitmaps[class];
        let shape = ImageShape::square(self.side);
        let mut img = Image::filled(shape, 0.0);
        let sub = 1.0 / SUPERSAMPLE as f32;
        for y in 0..self.side {
            for x in 0..self.side {
                let mut hits = 0usize;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let px = x as f32 + (sx as f32 + 0.5) * sub - cx;
                        let py = y as f32 + (sy as f32 + 0.5) * sub - cy;
                        // inverse tilt into glyph space
                        let gx = cos * px + sin * py + glyph / 2.0;
                        let gy = -sin * px + cos * py + glyph / 2.0;
                        if gx >= 0.0 && gy >= 0.0 && gx < glyph && gy < glyph {
                            let col = ((gx / glyph) * 5.0) as usize;
                            let row = ((gy / glyph) * 5.0) as usize;
                            if bitmap[row.min(4)][col.min(4)] {
                                hits += 1;
                            }
                        }
                    }
                }
                let alpha = hits as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32;
                for c in 0..3 {
                    let noise = rng.gen_range(-NOISE_AMPLITUDE..NOISE_AMPLITUDE);
                    let v = bg[c] * (1.0 - alpha) + fg[c] * alpha + noise;
                    img.set(c, y, x, v.clamp(0.0, 1.0));
                }
            }
        }
        img
    }
}

fn luma(c: [f32; 3]) -> f32 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

impl ImageDataset for ToyShapes {
    fn id(&self) -> &str {
        Self::ID
    }

    fn class_names(&self) -> &[String] {
        &self.names
    }

    fn shape(&self) -> ImageShape {
        ImageShape::square(self.side)
    }

    fn available(&self, split: Split, _class: usize) -> usize {
        match split {
            Split::Train => TRAIN_PER_CLASS,
            Split::Test => TEST_PER_CLASS,
        }
    }

    fn image(&self, split: Split, class: usize, index: usize) -> Result<Image> {
        if class >= self.names.len() || index >= self.available(split, class) {
            return Err(Error::InvalidArgument(format!("toy-shapes sample {class}/{index} out of range")));
        }
        Ok(self.render(split, class, index))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_is_deterministic_and_in_range() {
        let ds = ToyShapes::new(16).unwrap();
        let a = ds.image(Split::Train, 2, 11).unwrap();
        let b = ds.image(Split::Train, 2, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_ne!(a, ds.image(Split::Train, 2, 12).unwrap());
        assert_ne!(a, ds.image(Split::Test, 2, 11).unwrap());
    }

    type Bitmap = [[bool; 5]; 5];

    fn rot(b: &Bitmap) -> Bitmap {
        let mut r = [[false; 5]; 5];
        for (y, row) in b.iter().enumerate() {
            for (x, &v) in row.iter().enumerate() {
                r[x][4 - y] = v;
            }
        }
        r
    }

    fn flip(b: &Bitmap) -> Bitmap {
        let mut r = *b;
        for row in &mut r {
            row.reverse();
        }
        r
    }

    #[test]
    fn rotation_is_recoverable_under_horizontal_flips() {
        // a glyph whose rotation equals itself or its mirror makes the
        // rotation target ambiguous once flips are part of the augmentation
        let ds = ToyShapes::new(16).unwrap();
        for (i, g) in ds.bitmaps.iter().enumerate() {
            let mut cur = rot(g);
            for quarter in 1..4 {
                assert!(cur != *g && cur != flip(g), "{} at {} quarter turns", GLYPHS[i].0, quarter);
                cur = rot(&cur);
            }
        }
    }

    #[test]
    fn no_glyph_is_a_rotation_or_mirror_of_another() {
        let ds = ToyShapes::new(16).unwrap();
        for (i, a) in ds.bitmaps.iter().enumerate() {
            let mut variants = Vec::new();
            let mut cur = *a;
            for _ in 0..4 {
                variants.push(cur);
                variants.push(flip(&cur));
                cur = rot(&cur);
            }
            for (j, b) in ds.bitmaps.iter().enumerate() {
                if i != j {
                    assert!(!variants.contains(b), "{} vs {}", GLYPHS[i].0, GLYPHS[j].0);
                }
            }
        }
    }
}
