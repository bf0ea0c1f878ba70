//! Dense optical flow (Horn-Schunck) and flow-to-color rendering.

use serde::{Deserialize, Serialize};

use crate::data::{BoundingBox, FlowField, GrayImage, ImagePatch};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HornSchunckParams {
    /// Smoothness weight (alpha squared in the classic formulation).
    pub smoothness: f64,
    pub iterations: usize,
}

impl Default for HornSchunckParams {
    fn default() -> Self {
        Self {
            smoothness: 0.1,
            iterations: 200,
        }
    }
}

/// Horn-Schunck flow from `a` to `b`: a point at `p` in `a` moves to
/// `p + (u, v)` in `b`. Borders replicate edge pixels.
pub fn compute_dense_flow(
    a: &GrayImage,
    b: &GrayImage,
    params: &HornSchunckParams,
) -> Result<FlowField> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Dimension(format!(
            "flow frames differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if !(params.smoothness > 0.0) || params.iterations == 0 {
        return Err(Error::Config(
            "flow needs smoothness > 0 and at least one iteration".into(),
        ));
    }
    let (w, h) = (a.width, a.height);
    let at = |img: &GrayImage, x: isize, y: isize| {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        img.data[yc * w + xc]
    };

    let mut ix = vec![0.0; w * h];
    let mut iy = vec![0.0; w * h];
    let mut it = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let i = y * w + x;
            ix[i] = 0.25
                * (at(a, xi + 1, yi) - at(a, xi - 1, yi) + at(b, xi + 1, yi) - at(b, xi - 1, yi));
            iy[i] = 0.25
                * (at(a, xi, yi + 1) - at(a, xi, yi - 1) + at(b, xi, yi + 1) - at(b, xi, yi - 1));
            it[i] = b.data[i] - a.data[i];
        }
    }

    let mut u = vec![0.0f64; w * h];
    let mut v = vec![0.0f64; w * h];
    let mut next = vec![(0.0f64, 0.0f64); w * h];
    for _ in 0..params.iterations {
        let (uu, vv) = (&u, &v);
        par::for_each_chunk_mut(&mut next, w, |y, row| {
            let avg = |f: &[f64], x: usize| {
                let g = |dx: isize, dy: isize| {
                    let xc = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let yc = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    f[yc * w + xc]
                };
                (g(-1, 0) + g(1, 0) + g(0, -1) + g(0, 1)) / 6.0
                    + (g(-1, -1) + g(1, -1) + g(-1, 1) + g(1, 1)) / 12.0
            };
            for (x, out) in row.iter_mut().enumerate() {
                let i = y * w + x;
                let ub = avg(uu, x);
                let vb = avg(vv, x);
                let t = (ix[i] * ub + iy[i] * vb + it[i])
                    / (params.smoothness + ix[i] * ix[i] + iy[i] * iy[i]);
                *out = (ub - ix[i] * t, vb - iy[i] * t);
            }
        });
        for (i, &(nu, nv)) in next.iter().enumerate() {
            u[i] = nu;
            v[i] = nv;
        }
    }
    FlowField::new(
        w,
        h,
        u.iter().map(|&x| x as f32).collect(),
        v.iter().map(|&x| x as f32).collect(),
    )
}

/// HSV wheel: hue from flow direction, value from magnitude capped at `v_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowColorConfig {
    pub v_max: f64,
}

impl Default for FlowColorConfig {
    fn default() -> Self {
        Self { v_max: 8.0 }
    }
}

impl FlowColorConfig {
    pub fn new(v_max: f64) -> Result<Self> {
        if !(v_max > 0.0 && v_max.is_finite()) {
            return Err(Error::Config(format!("v_max must be positive, got {v_max}")));
        }
        Ok(Self { v_max })
    }
}

/// Standard HSV to RGB, hue in degrees `[0, 360)`.
pub fn hsv_to_rgb(hue: f64, sat: f64, val: f64) -> [f64; 3] {
    let c = val * sat;
    let hp = (hue / 60.0).rem_euclid(6.0);
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = val - c;
    [r + m, g + m, b + m]
}

pub fn flow_color(u: f64, v: f64, cfg: &FlowColorConfig) -> [f64; 3] {
    let mag = u.hypot(v);
    if mag == 0.0 {
        return [0.0; 3];
    }
    let mut hue = v.atan2(u).to_degrees();
    if hue < 0.0 {
        hue += 360.0;
    }
    if hue >= 360.0 {
        hue -= 360.0;
    }
    let value = mag.min(cfg.v_max) / cfg.v_max;
    hsv_to_rgb(hue, 1.0, value)
}

pub fn flow_to_rgb(flow: &FlowField, cfg: &FlowColorConfig) -> ImagePatch {
    let data = flow
        .u
        .iter()
        .zip(&flow.v)
        .flat_map(|(&u, &v)| flow_color(u as f64, v as f64, cfg))
        .collect();
    ImagePatch::from_clamped(flow.width, flow.height, data)
}

pub fn crop_flow_patch(flow: &FlowField, bbox: &BoundingBox) -> Result<FlowField> {
    let r = bbox.clip(flow.width, flow.height).ok_or_else(|| {
        Error::Validation(format!(
            "box {bbox:?} does not intersect {}x{} flow field",
            flow.width, flow.height
        ))
    })?;
    let mut u = Vec::with_capacity(r.area());
    let mut v = Vec::with_capacity(r.area());
    for y in r.y0..r.y1 {
        let s = y * flow.width;
        u.extend_from_slice(&flow.u[s + r.x0..s + r.x1]);
        v.extend_from_slice(&flow.v[s + r.x0..s + r.x1]);
    }
    FlowField::new(r.width(), r.height(), u, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(w: usize, h: usize, shift: isize) -> GrayImage {
        let data = (0..h)
            .flat_map(|y| {
                (0..w).map(move |x| {
                    let xs = (x as isize - shift).rem_euclid(w as isize) as f64;
                    let y = y as f64;
                    let tw = std::f64::consts::TAU / w as f64;
                    0.5 + 0.2 * (3.0 * tw * xs).sin() * (0.3 * y).cos()
                        + 0.15 * (2.0 * tw * xs + 0.21 * y).sin()
                        + 0.1 * (5.0 * tw * xs).cos()
                })
            })
            .collect();
        GrayImage::new(w, h, data).unwrap()
    }

    fn interior_mean(f: &FlowField, margin: usize) -> (f64, f64) {
        let (mut su, mut sv, mut n) = (0.0, 0.0, 0.0);
        for y in margin..f.height - margin {
            for x in margin..f.width - margin {
                let (u, v) = f.at(x, y);
                su += u as f64;
                sv += v as f64;
                n += 1.0;
            }
        }
        (su / n, sv / n)
    }

    #[test]
    fn static_frames_zero_flow() {
        let a = texture(32, 24, 0);
        let f = compute_dense_flow(&a, &a, &HornSchunckParams::default()).unwrap();
        assert!(f.u.iter().chain(&f.v).all(|&x| x == 0.0));
    }

    #[test]
    fn textureless_zero_flow() {
        let a = GrayImage::new(16, 16, vec![0.3; 256]).unwrap();
        let b = GrayImage::new(16, 16, vec![0.3; 256]).unwrap();
        let f = compute_dense_flow(&a, &b, &HornSchunckParams::default()).unwrap();
        assert!(f.u.iter().chain(&f.v).all(|&x| x == 0.0));
    }

    #[test]
    fn known_shift_recovered() {
        let a = texture(64, 48, 0);
        let b = texture(64, 48, 1);
        let p = HornSchunckParams {
            smoothness: 0.1,
            iterations: 200,
        };
        let f = compute_dense_flow(&a, &b, &p).unwrap();
        let (mu, mv) = interior_mean(&f, 8);
        assert!((0.8..=1.2).contains(&mu), "mean u {mu}");
        assert!((-0.1..=0.1).contains(&mv), "mean v {mv}");

        // reversing frame order negates the estimate
        let r = compute_dense_flow(&b, &a, &p).unwrap();
        let (ru, rv) = interior_mean(&r, 8);
        assert!((-1.2..=-0.8).contains(&ru), "reverse mean u {ru}");
        assert!((-0.1..=0.1).contains(&rv));
    }

    #[test]
    fn dimension_mismatch() {
        let a = texture(8, 8, 0);
        let b = texture(8, 9, 0);
        assert!(matches!(
            compute_dense_flow(&a, &b, &HornSchunckParams::default()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn color_wheel() {
        let cfg = FlowColorConfig::new(4.0).unwrap();
        assert_eq!(flow_color(0.0, 0.0, &cfg), [0.0, 0.0, 0.0]);
        assert_eq!(flow_color(4.0, 0.0, &cfg), [1.0, 0.0, 0.0]);
        assert_eq!(flow_color(12.0, 0.0, &cfg), flow_color(4.0, 0.0, &cfg));
        assert!(FlowColorConfig::new(0.0).is_err());
    }

    #[test]
    fn value_monotone_in_magnitude() {
        let cfg = FlowColorConfig::new(5.0).unwrap();
        for angle in [0.0f64, 0.7, 2.0, 4.4] {
            let mut prev = -1.0;
            for k in 0..60 {
                let m = k as f64 * 0.1;
                let c = flow_color(m * angle.cos(), m * angle.sin(), &cfg);
                let val = c.iter().cloned().fold(0.0, f64::max);
                assert!(val >= prev - 1e-12);
                assert!(c.iter().all(|x| (0.0..=1.0).contains(x)));
                prev = val;
            }
        }
    }

    #[test]
    fn crop_inside_clipped_outside() {
        let u: Vec<f32> = (0..20).map(|i| i as f32).collect();
        let f = FlowField::new(5, 4, u, vec![0.0; 20]).unwrap();
        let c = crop_flow_patch(&f, &BoundingBox::new(1, 1, 2, 2).unwrap()).unwrap();
        assert_eq!(c.u, vec![6.0, 7.0, 11.0, 12.0]);
        let c = crop_flow_patch(&f, &BoundingBox::new(3, 0, 5, 1).unwrap()).unwrap();
        assert_eq!(c.width, 2);
        assert!(crop_flow_patch(&f, &BoundingBox::new(10, 10, 2, 2).unwrap()).is_err());
    }
}
