use serde::{Deserialize, Serialize};

use crate::data::ImagePatch;
use crate::imageops::{flip_horizontal, flip_vertical, rotate, rotate_quarter, shear, translate};
use crate::rng::Rng64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub flips: bool,
    pub quarter_rotations: bool,
    /// Largest small-angle rotation in degrees; 0 disables it.
    pub max_angle_deg: f64,
    /// Largest translation in pixels; 0 disables it.
    pub max_shift: i64,
    /// Largest shear factor; 0 disables it.
    pub max_shear: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flips: true,
            quarter_rotations: true,
            max_angle_deg: 12.0,
            max_shift: 2,
            max_shear: 0.15,
        }
    }
}

/// The original patch followed by its transformed copies. Random magnitudes
/// (small angle, shift, shear) are drawn from `seed`.
pub fn augment_patch(patch: &ImagePatch, seed: u64, cfg: &AugmentConfig) -> Vec<ImagePatch> {
    let mut rng = Rng64::new(seed);
    let mut out = vec![patch.clone()];
    if cfg.flips {
        out.push(flip_horizontal(patch));
        out.push(flip_vertical(patch));
    }
    if cfg.quarter_rotations {
        for k in 1..4 {
            out.push(rotate_quarter(patch, k));
        }
    }
    let sign = |rng: &mut Rng64| if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
    if cfg.max_angle_deg > 0.0 {
        let a = sign(&mut rng) * rng.range(0.5, 1.0) * cfg.max_angle_deg;
        out.push(rotate(patch, a));
    }
    if cfg.max_shift > 0 {
        let span = (2 * cfg.max_shift + 1) as usize;
        let dx = rng.below(span) as i64 - cfg.max_shift;
        let dy = rng.below(span) as i64 - cfg.max_shift;
        out.push(translate(patch, dx, dy));
    }
    if cfg.max_shear > 0.0 {
        let k = sign(&mut rng) * rng.range(0.5, 1.0) * cfg.max_shear;
        out.push(shear(patch, k));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_white(w: usize, h: usize) -> ImagePatch {
        let mut p = ImagePatch::filled(w, h, [0.0; 3]);
        for y in 0..h {
            for x in 0..w / 2 {
                p.set_pixel(x, y, [1.0; 3]);
            }
        }
        p
    }

    #[test]
    fn horizontal_flip_swaps_halves() {
        let p = half_white(8, 4);
        let f = flip_horizontal(&p);
        for y in 0..4 {
            for x in 0..8 {
                let expect = if x < 4 { 0.0 } else { 1.0 };
                assert_eq!(f.get(x, y, 0), expect);
            }
        }
    }

    #[test]
    fn half_turn_is_involution() {
        let p = half_white(6, 6);
        assert_eq!(rotate_quarter(&rotate_quarter(&p, 2), 2), p);
    }

    #[test]
    fn outputs_in_range_and_deterministic() {
        let p = half_white(16, 16);
        let a = augment_patch(&p, 3, &AugmentConfig::default());
        let b = augment_patch(&p, 3, &AugmentConfig::default());
        assert_eq!(a, b);
        assert_eq!(a.len(), 9);
        assert_eq!(a[0], p);
        assert!(a
            .iter()
            .all(|q| q.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }
}
