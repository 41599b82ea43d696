//! Seeded procedural images used by the mock backends and the test corpus.
//!
//! Images are sampled from a continuous pattern over normalized coordinates,
//! so the same seed rendered at 512² and 2048² shows the same content.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::ImageBuffer;

#[derive(Debug, Clone)]
struct Wave {
    freq: [f64; 2],
    phase: f64,
    amp: [f64; 3],
}

/// A band-limited color texture defined on `[0, 1]²`.
#[derive(Debug, Clone)]
pub struct ProceduralPattern {
    base: [f64; 3],
    waves: Vec<Wave>,
}

impl ProceduralPattern {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = [
            rng.random_range(0.35..0.65),
            rng.random_range(0.35..0.65),
            rng.random_range(0.35..0.65),
        ];
        let waves = (0..8)
            .map(|_| {
                let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let cycles: f64 = rng.random_range(1.5..14.0);
                Wave {
                    freq: [cycles * angle.cos(), cycles * angle.sin()],
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    amp: [
                        rng.random_range(-0.07..0.07),
                        rng.random_range(-0.07..0.07),
                        rng.random_range(-0.07..0.07),
                    ],
                }
            })
            .collect();
        Self { base, waves }
    }

    pub fn eval(&self, u: f64, v: f64) -> [f32; 3] {
        let mut c = self.base;
        for w in &self.waves {
            let s = (std::f64::consts::TAU * (w.freq[0] * u + w.freq[1] * v) + w.phase).sin();
            for ch in 0..3 {
                c[ch] += w.amp[ch] * s;
            }
        }
        c.map(|x| x.clamp(0.0, 1.0) as f32)
    }

    pub fn render(&self, width: usize, height: usize) -> ImageBuffer {
        ImageBuffer::from_fn(width, height, |x, y| {
            self.eval((x as f64 + 0.5) / width as f64, (y as f64 + 0.5) / height as f64)
        })
    }
}

/// Renders the seeded pattern at the requested size.
pub fn procedural_image(width: usize, height: usize, seed: u64) -> ImageBuffer {
    ProceduralPattern::new(seed).render(width, height)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_deterministic_and_distinct() {
        assert_eq!(procedural_image(16, 16, 7), procedural_image(16, 16, 7));
        assert_ne!(procedural_image(16, 16, 7), procedural_image(16, 16, 8));
    }

    #[test]
    fn values_in_unit_range() {
        let img = procedural_image(64, 64, 3);
        assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
