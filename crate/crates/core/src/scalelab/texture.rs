use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multi-octave 3D value noise evaluated at world points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextureSpec {
    pub seed: u64,
    /// Lattice frequency of the first octave, in cells per meter.
    pub base_frequency: f64,
    pub octaves: u32,
    /// Amplitude ratio between successive octaves.
    pub persistence: f64,
    /// Peak-to-peak intensity swing at unit albedo.
    pub contrast: f64,
}

impl Default for TextureSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            base_frequency: 0.5,
            octaves: 2,
            persistence: 0.5,
            contrast: 0.8,
        }
    }
}

impl TextureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_frequency > 0.0 && self.base_frequency.is_finite()) {
            return Err(Error::Config(format!("texture base_frequency must be > 0, got {}", self.base_frequency)));
        }
        if self.octaves == 0 || self.octaves > 16 {
            return Err(Error::Config(format!("texture octaves must lie in 1..=16, got {}", self.octaves)));
        }
        if !(self.persistence > 0.0 && self.persistence <= 1.0) {
            return Err(Error::Config(format!("texture persistence must lie in (0, 1], got {}", self.persistence)));
        }
        if !(0.3..=1.0).contains(&self.contrast) {
            return Err(Error::Config(format!("texture contrast must lie in [0.3, 1], got {}", self.contrast)));
        }
        Ok(())
    }

    /// Noise in `[0, 1]`.
    pub fn noise(&self, p: &Vector3<f64>) -> f64 {
        let mut total = 0.0;
        let mut norm = 0.0;
        let mut amplitude = 1.0;
        let mut freq = self.base_frequency;
        for octave in 0..self.octaves {
            total += amplitude * lattice_noise(self.seed, octave, &(p * freq));
            norm += amplitude;
            amplitude *= self.persistence;
            freq *= 2.0;
        }
        total / norm
    }

    /// Shaded intensity in `[0, 1]` for albedo `albedo <= 1`.
    pub fn intensity(&self, p: &Vector3<f64>, albedo: f64) -> f64 {
        albedo * (0.5 + self.contrast * (self.noise(p) - 0.5))
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn lattice_value(seed: u64, octave: u32, i: i64, j: i64, k: i64) -> f64 {
    let mut h = splitmix(seed ^ ((octave as u64) << 56));
    for c in [i, j, k] {
        h = splitmix(h ^ c as u64);
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

fn lattice_noise(seed: u64, octave: u32, p: &Vector3<f64>) -> f64 {
    let base = p.map(f64::floor);
    let (i, j, k) = (base.x as i64, base.y as i64, base.z as i64);
    let f = p - base;
    let (wx, wy, wz) = (fade(f.x), fade(f.y), fade(f.z));
    let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
    let v = |di, dj, dk| lattice_value(seed, octave, i + di, j + dj, k + dk);
    let x00 = lerp(v(0, 0, 0), v(1, 0, 0), wx);
    let x10 = lerp(v(0, 1, 0), v(1, 1, 0), wx);
    let x01 = lerp(v(0, 0, 1), v(1, 0, 1), wx);
    let x11 = lerp(v(0, 1, 1), v(1, 1, 1), wx);
    lerp(lerp(x00, x10, wy), lerp(x01, x11, wy), wz)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_is_deterministic_and_bounded() {
        let t = TextureSpec::default();
        let mut lo: f64 = 1.0;
        let mut hi: f64 = 0.0;
        for i in 0..2000 {
            let p = Vector3::new(i as f64 * 0.137, 1.65, i as f64 * 0.071 - 40.0);
            let n = t.noise(&p);
            assert_eq!(n, t.noise(&p));
            lo = lo.min(n);
            hi = hi.max(n);
        }
        assert!(lo >= 0.0 && hi <= 1.0);
        assert!(hi - lo > 0.3, "texture too flat: {lo}..{hi}");
    }

    #[test]
    fn noise_is_continuous() {
        let t = TextureSpec::default();
        let p = Vector3::new(2.999_999_9, 1.0, -0.000_000_1);
        let q = Vector3::new(3.000_000_1, 1.0, 0.000_000_1);
        assert!((t.noise(&p) - t.noise(&q)).abs() < 1e-5);
    }

    #[test]
    fn seeds_differ() {
        let a = TextureSpec::default();
        let b = TextureSpec { seed: 8, ..a };
        let p = Vector3::new(0.3, 0.7, 1.1);
        assert_ne!(a.noise(&p), b.noise(&p));
    }

    #[test]
    fn validation() {
        assert!(TextureSpec::default().validate().is_ok());
        assert!(TextureSpec { contrast: 0.2, ..Default::default() }.validate().is_err());
        assert!(TextureSpec { octaves: 0, ..Default::default() }.validate().is_err());
    }
}
