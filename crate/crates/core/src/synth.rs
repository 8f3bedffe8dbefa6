//! Seeded synthetic scenes: a few flat-edged regions (rectangles and discs)
//! over a background, each with its own smooth reflectance spectrum, under a
//! gentle spatial illumination ramp.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::HsiCube;

#[derive(Clone, Copy, Debug)]
struct Spectrum {
    base: f32,
    peak: f32,
    center: f32,
    spread: f32,
}

impl Spectrum {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        Spectrum {
            base: rng.random_range(0.1..0.4),
            peak: rng.random_range(0.2..0.5),
            center: rng.random(),
            spread: rng.random_range(0.2..0.6),
        }
    }

    /// Reflectance at normalized band position `t` in `[0, 1]`.
    fn at(&self, t: f32) -> f32 {
        let d = (t - self.center) / self.spread;
        self.base + self.peak * (-0.5 * d * d).exp()
    }
}

#[derive(Clone, Copy, Debug)]
enum Region {
    Rect { r0: f32, c0: f32, r1: f32, c1: f32 },
    Disc { r: f32, c: f32, radius: f32 },
}

impl Region {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        if rng.random_bool(0.5) {
            let (r0, c0) = (rng.random_range(0.0..0.7), rng.random_range(0.0..0.7));
            Region::Rect { r0, c0, r1: r0 + rng.random_range(0.15..0.45), c1: c0 + rng.random_range(0.15..0.45) }
        } else {
            Region::Disc { r: rng.random(), c: rng.random(), radius: rng.random_range(0.1..0.3) }
        }
    }

    fn contains(&self, y: f32, x: f32) -> bool {
        match *self {
            Region::Rect { r0, c0, r1, c1 } => y >= r0 && y < r1 && x >= c0 && x < c1,
            Region::Disc { r, c, radius } => (y - r).powi(2) + (x - c).powi(2) < radius * radius,
        }
    }
}

/// A `height x width x bands` cube with values in `[0, 1]`, deterministic in `seed`.
pub fn piecewise_smooth_cube(height: usize, width: usize, bands: usize, seed: u64) -> HsiCube {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = Spectrum::draw(&mut rng);
    let regions: Vec<(Region, Spectrum)> = (0..rng.random_range(3..6))
        .map(|_| (Region::draw(&mut rng), Spectrum::draw(&mut rng)))
        .collect();
    let tilt = (rng.random_range(-0.15f32..0.15), rng.random_range(-0.15f32..0.15));

    let mut values = vec![0.0f32; height * width * bands];
    let plane = height * width;
    for r in 0..height {
        let y = (r as f32 + 0.5) / height as f32;
        for c in 0..width {
            let x = (c as f32 + 0.5) / width as f32;
            // later regions sit on top
            let spectrum = regions
                .iter()
                .rev()
                .find(|(reg, _)| reg.contains(y, x))
                .map_or(background, |&(_, s)| s);
            let shade = 1.0 + tilt.0 * (y - 0.5) + tilt.1 * (x - 0.5);
            for b in 0..bands {
                let t = if bands > 1 { b as f32 / (bands - 1) as f32 } else { 0.5 };
                values[b * plane + r * width + c] = (spectrum.at(t) * shade).clamp(0.0, 1.0);
            }
        }
    }
    HsiCube::new(height, width, bands, values).expect("generated values are finite")
}
