//! Seeded ten-color palette shared by all synthetic colorings.

use crate::rng::stream;
use rand::Rng;

/// Ten RGB triples in `[0, 1]`: evenly spaced hues at full saturation and
/// value, rotated by a seed-derived offset. The same seed always yields the
/// same palette, and train/test splits of one dataset share it.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorPalette {
    pub colors: [[f32; 3]; 10],
}

impl ColorPalette {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = stream(seed, "palette");
        let rot: f64 = rng.gen_range(0.0..1.0);
        let mut colors = [[0.0f32; 3]; 10];
        for (i, slot) in colors.iter_mut().enumerate() {
            let h = (i as f64 / 10.0 + rot) % 1.0;
            *slot = hsv_to_rgb(h, 1.0, 1.0);
        }
        Self { colors }
    }

    pub fn color(&self, index: usize) -> [f32; 3] {
        self.colors[index % 10]
    }
}

/// Standard HSV to RGB conversion for `s = v = 1` and general `s`, `v`.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f32; 3] {
    let i = ((h * 6.0).floor() as i64).rem_euclid(6);
    let f = h * 6.0 - (h * 6.0).floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    let (r, g, b) = match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r as f32, g as f32, b as f32]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_is_deterministic_per_seed() {
        assert_eq!(ColorPalette::from_seed(7), ColorPalette::from_seed(7));
        assert_ne!(ColorPalette::from_seed(7), ColorPalette::from_seed(8));
    }

    #[test]
    fn colors_are_pairwise_distinct() {
        let p = ColorPalette::from_seed(0);
        for i in 0..10 {
            for j in (i + 1)..10 {
                let a = p.colors[i];
                let b = p.colors[j];
                let dist: f32 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum();
                assert!(dist > 0.05, "colors {i} and {j} too close: {a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn colors_stay_in_unit_range() {
        for seed in 0..20 {
            let p = ColorPalette::from_seed(seed);
            for c in &p.colors {
                assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn hsv_primary_corners() {
        assert_eq!(hsv_to_rgb(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
        let g = hsv_to_rgb(1.0 / 3.0, 1.0, 1.0);
        assert!(g[1] == 1.0 && g[0] < 1e-6 && g[2] == 0.0);
    }
}
