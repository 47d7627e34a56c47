//! The 405-context geometric grid and affine image warps.
//!
//! The grid counts (9 translations x 9 scales x 5 rotations) come from the
//! model definition; the concrete values are this crate's choice and are
//! documented in the README: translations {-4,0,+4}^2 pixels, scales 0.70 to
//! 1.30 in steps of 0.075, angles {-20,-10,0,+10,+20} degrees.

use crate::data::{Image, IMG_SIDE};
use crate::tensor::Scalar;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// One geometric context: translate by (dx, dy) pixels, scale by `scale`,
/// rotate by `angle_deg` degrees, all about the image center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformParams {
    pub dx: f64,
    pub dy: f64,
    pub scale: f64,
    pub angle_deg: f64,
}

impl TransformParams {
    pub const IDENTITY: TransformParams = TransformParams {
        dx: 0.0,
        dy: 0.0,
        scale: 1.0,
        angle_deg: 0.0,
    };
}

pub const NUM_TRANSLATIONS: usize = 9;
pub const NUM_SCALES: usize = 9;
pub const NUM_ANGLES: usize = 5;
pub const NUM_CONTEXTS: usize = NUM_TRANSLATIONS * NUM_SCALES * NUM_ANGLES;

/// Grid index of the identity transform: (4*9 + 4)*5 + 2.
pub const IDENTITY_CONTEXT: usize = (4 * NUM_SCALES + 4) * NUM_ANGLES + 2;

pub fn translation(i: usize) -> (f64, f64) {
    let dx = (i / 3) as f64 * 4.0 - 4.0;
    let dy = (i % 3) as f64 * 4.0 - 4.0;
    (dx, dy)
}

pub fn scale_factor(i: usize) -> f64 {
    // 0.70 + 0.075*i, written over a common denominator so i=4 is exactly 1.
    (56 + 6 * i) as f64 / 80.0
}

pub fn angle_deg(i: usize) -> f64 {
    (i as f64 - 2.0) * 10.0
}

/// The canonical 405-context grid, flattened as (t*9 + s)*5 + r.
pub fn context_grid() -> Vec<TransformParams> {
    let mut grid = Vec::with_capacity(NUM_CONTEXTS);
    for t in 0..NUM_TRANSLATIONS {
        let (dx, dy) = translation(t);
        for s in 0..NUM_SCALES {
            let scale = scale_factor(s);
            for r in 0..NUM_ANGLES {
                grid.push(TransformParams {
                    dx,
                    dy,
                    scale,
                    angle_deg: angle_deg(r),
                });
            }
        }
    }
    grid
}

/// Inverse-mapped affine warp about the image center: scale, then rotate,
/// then translate. Bilinear interpolation; out-of-bounds samples read as 0.
/// Arithmetic is carried out in f64 and rounded to the element type once.
pub fn warp_pixels<E: Scalar>(src: &[E], side: usize, p: &TransformParams) -> Vec<E> {
    let c = (side as f64 - 1.0) / 2.0;
    let theta = p.angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let inv_scale = 1.0 / p.scale;
    let mut out = vec![E::zero(); side * side];
    let sample = |x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= side as i64 || y >= side as i64 {
            0.0
        } else {
            src[y as usize * side + x as usize].as_f64()
        }
    };
    for y in 0..side {
        for x in 0..side {
            let ux = x as f64 - c - p.dx;
            let uy = y as f64 - c - p.dy;
            // inverse rotation then inverse scale
            let sx = (cos * ux + sin * uy) * inv_scale + c;
            let sy = (-sin * ux + cos * uy) * inv_scale + c;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (xi, yi) = (x0 as i64, y0 as i64);
            let v = (1.0 - fx) * (1.0 - fy) * sample(xi, yi)
                + fx * (1.0 - fy) * sample(xi + 1, yi)
                + (1.0 - fx) * fy * sample(xi, yi + 1)
                + fx * fy * sample(xi + 1, yi + 1);
            out[y * side + x] = E::from_f64(v);
        }
    }
    out
}

pub fn warp_affine(img: &Image, p: &TransformParams) -> Image {
    Image {
        pixels: warp_pixels(&img.pixels, IMG_SIDE, p),
    }
}

pub const AUGMENT_TRANSLATION_RANGE: (f64, f64) = (-4.0, 4.0);
pub const AUGMENT_SCALE_RANGE: (f64, f64) = (0.70, 1.30);
pub const AUGMENT_ANGLE_RANGE: (f64, f64) = (-20.0, 20.0);

/// Draw params uniformly from the continuous ranges spanned by the grid
/// (not only grid points) and return the warped image plus the params used.
pub fn random_augment_with(img: &Image, rng: &mut ChaCha8Rng) -> (Image, TransformParams) {
    let p = TransformParams {
        dx: rng.gen_range(AUGMENT_TRANSLATION_RANGE.0..=AUGMENT_TRANSLATION_RANGE.1),
        dy: rng.gen_range(AUGMENT_TRANSLATION_RANGE.0..=AUGMENT_TRANSLATION_RANGE.1),
        scale: rng.gen_range(AUGMENT_SCALE_RANGE.0..=AUGMENT_SCALE_RANGE.1),
        angle_deg: rng.gen_range(AUGMENT_ANGLE_RANGE.0..=AUGMENT_ANGLE_RANGE.1),
    };
    (warp_affine(img, &p), p)
}

pub fn random_augment(img: &Image, seed: u64) -> (Image, TransformParams) {
    let mut rng = crate::tensor::seeded_rng(seed);
    random_augment_with(img, &mut rng)
}

/// Procedural probe glyph: an outlined isoceles triangle, apex up, line
/// width 2 px, inscribed in the central 20x20 box of the 28x28 frame.
pub fn triangle_glyph() -> Image {
    let apex = (13.5, 4.0);
    let left = (4.0, 23.0);
    let right = (23.0, 23.0);
    let segs = [(apex, left), (apex, right), (left, right)];
    let mut img = Image::zeros();
    for y in 0..IMG_SIDE {
        for x in 0..IMG_SIDE {
            let p = (x as f64, y as f64);
            let d = segs
                .iter()
                .map(|&(a, b)| dist_to_segment(p, a, b))
                .fold(f64::INFINITY, f64::min);
            if d <= 1.0 {
                img.set(x, y, 1.0);
            }
        }
    }
    img
}

fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let t = ((wx * vx + wy * vy) / (vx * vx + vy * vy)).clamp(0.0, 1.0);
    let (cx, cy) = (a.0 + t * vx, a.1 + t * vy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}
