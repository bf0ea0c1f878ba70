//! Geometric operations on RGB patches. Sampling outside the source clamps to
//! the nearest edge pixel.

use crate::data::ImagePatch;

fn sample_bilinear(img: &ImagePatch, x: f64, y: f64) -> [f64; 3] {
    let maxx = (img.width - 1) as f64;
    let maxy = (img.height - 1) as f64;
    let x = x.clamp(0.0, maxx);
    let y = y.clamp(0.0, maxy);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let (p00, p10, p01, p11) = (
        img.pixel(x0, y0),
        img.pixel(x1, y0),
        img.pixel(x0, y1),
        img.pixel(x1, y1),
    );
    std::array::from_fn(|c| {
        let top = p00[c] + (p10[c] - p00[c]) * fx;
        let bot = p01[c] + (p11[c] - p01[c]) * fx;
        top + (bot - top) * fy
    })
}

/// Bilinear resize with pixel-center alignment.
pub fn resize_bilinear(img: &ImagePatch, width: usize, height: usize) -> ImagePatch {
    if img.width == width && img.height == height {
        return img.clone();
    }
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        let src_y = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..width {
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            data.extend(sample_bilinear(img, src_x, src_y));
        }
    }
    ImagePatch::from_clamped(width, height, data)
}

fn remap(img: &ImagePatch, width: usize, height: usize, f: impl Fn(usize, usize) -> (usize, usize)) -> ImagePatch {
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let (sx, sy) = f(x, y);
            data.extend(img.pixel(sx, sy));
        }
    }
    ImagePatch::from_clamped(width, height, data)
}

pub fn flip_horizontal(img: &ImagePatch) -> ImagePatch {
    remap(img, img.width, img.height, |x, y| (img.width - 1 - x, y))
}

pub fn flip_vertical(img: &ImagePatch) -> ImagePatch {
    remap(img, img.width, img.height, |x, y| (x, img.height - 1 - y))
}

/// Rotation by `quarter_turns * 90` degrees clockwise.
pub fn rotate_quarter(img: &ImagePatch, quarter_turns: u32) -> ImagePatch {
    let (w, h) = (img.width, img.height);
    match quarter_turns % 4 {
        0 => img.clone(),
        1 => remap(img, h, w, |x, y| (y, h - 1 - x)),
        2 => remap(img, w, h, |x, y| (w - 1 - x, h - 1 - y)),
        _ => remap(img, h, w, |x, y| (w - 1 - y, x)),
    }
}

/// Integer translation; uncovered pixels replicate the nearest edge.
pub fn translate(img: &ImagePatch, dx: i64, dy: i64) -> ImagePatch {
    let (w, h) = (img.width as i64, img.height as i64);
    remap(img, img.width, img.height, |x, y| {
        (
            (x as i64 - dx).clamp(0, w - 1) as usize,
            (y as i64 - dy).clamp(0, h - 1) as usize,
        )
    })
}

fn affine_about_center(img: &ImagePatch, inv: [[f64; 2]; 2]) -> ImagePatch {
    let cx = (img.width as f64 - 1.0) / 2.0;
    let cy = (img.height as f64 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(img.width * img.height * 3);
    for y in 0..img.height {
        for x in 0..img.width {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
            let sy = inv[1][0] * dx + inv[1][1] * dy + cy;
            data.extend(sample_bilinear(img, sx, sy));
        }
    }
    ImagePatch::from_clamped(img.width, img.height, data)
}

/// Rotation about the patch center by `degrees`, bilinear sampling.
pub fn rotate(img: &ImagePatch, degrees: f64) -> ImagePatch {
    let (s, c) = degrees.to_radians().sin_cos();
    affine_about_center(img, [[c, s], [-s, c]])
}

/// Horizontal shear `x' = x + factor * (y - cy)`.
pub fn shear(img: &ImagePatch, factor: f64) -> ImagePatch {
    affine_about_center(img, [[1.0, -factor], [0.0, 1.0]])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> ImagePatch {
        let data = (0..w * h * 3).map(|i| (i % 97) as f64 / 96.0).collect();
        ImagePatch::new(w, h, data).unwrap()
    }

    #[test]
    fn quarter_rotations_compose() {
        let p = ramp(5, 3);
        let r = rotate_quarter(&p, 1);
        assert_eq!((r.width, r.height), (3, 5));
        assert_eq!(rotate_quarter(&r, 3), p);
        assert_eq!(rotate_quarter(&rotate_quarter(&p, 2), 2), p);
    }

    #[test]
    fn zero_transforms_are_identity() {
        let p = ramp(6, 6);
        assert_eq!(translate(&p, 0, 0), p);
        let r = rotate(&p, 0.0);
        for (a, b) in r.data().iter().zip(p.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let s = shear(&p, 0.0);
        for (a, b) in s.data().iter().zip(p.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn resize_constant_stays_constant() {
        let p = ImagePatch::filled(7, 5, [0.2, 0.4, 0.6]);
        let r = resize_bilinear(&p, 16, 16);
        assert!(r.data().chunks(3).all(|c| (c[0] - 0.2).abs() < 1e-12 && (c[2] - 0.6).abs() < 1e-12));
    }
}
