//! Synthetic phantoms and Gaussian noise at a target PSNR.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::tomo::Sinogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhantomKind {
    /// Centered disk of radius `side / 4` and value 1, edge-antialiased.
    Disk,
    /// Modified (high-contrast) Shepp–Logan head phantom.
    SheppLogan,
    /// Seeded Voronoi cells with constant values in `[0.2, 1]`.
    Grains,
}

impl PhantomKind {
    pub fn name(self) -> &'static str {
        match self {
            PhantomKind::Disk => "disk",
            PhantomKind::SheppLogan => "shepp_logan",
            PhantomKind::Grains => "grains",
        }
    }
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PhantomKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "disk" => Ok(PhantomKind::Disk),
            "shepp_logan" | "shepplogan" => Ok(PhantomKind::SheppLogan),
            "grains" => Ok(PhantomKind::Grains),
            other => Err(invalid(format!("unknown phantom kind '{other}'"))),
        }
    }
}

pub fn make_phantom(kind: PhantomKind, side: usize, seed: u64) -> Result<Image> {
    if side < 16 {
        return Err(invalid(format!("phantom side must be at least 16, got {side}")));
    }
    Ok(match kind {
        PhantomKind::Disk => disk(side),
        PhantomKind::SheppLogan => shepp_logan(side),
        PhantomKind::Grains => grains(side, seed),
    })
}

fn disk(side: usize) -> Image {
    const SUB: usize = 4;
    let c = (side as f64 - 1.0) / 2.0;
    let r2 = (side as f64 / 4.0).powi(2);
    Image::from_fn(side, side, |i, j| {
        let mut hits = 0;
        for a in 0..SUB {
            for b in 0..SUB {
                let y = i as f64 - c + (a as f64 + 0.5) / SUB as f64 - 0.5;
                let x = j as f64 - c + (b as f64 + 0.5) / SUB as f64 - 0.5;
                if x * x + y * y <= r2 {
                    hits += 1;
                }
            }
        }
        hits as f64 / (SUB * SUB) as f64
    })
}

/// `(intensity, semi-axis a, semi-axis b, x0, y0, rotation in degrees)`
const SHEPP_LOGAN: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

/// Shepp–Logan intensity at normalized coordinates in `[-1, 1]²` (y up).
pub fn shepp_logan_value(x: f64, y: f64) -> f64 {
    SHEPP_LOGAN
        .iter()
        .filter(|&&(_, a, b, x0, y0, deg)| {
            let (s, c) = deg.to_radians().sin_cos();
            let (dx, dy) = (x - x0, y - y0);
            let u = dx * c + dy * s;
            let v = -dx * s + dy * c;
            (u / a).powi(2) + (v / b).powi(2) <= 1.0
        })
        .map(|e| e.0)
        .sum()
}

fn shepp_logan(side: usize) -> Image {
    let c = (side as f64 - 1.0) / 2.0;
    let half = side as f64 / 2.0;
    Image::from_fn(side, side, |i, j| {
        shepp_logan_value((j as f64 - c) / half, (c - i as f64) / half)
    })
}

fn grains(side: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = (side * side / 128).max(8);
    let cells: Vec<(f64, f64, f64)> = (0..count)
        .map(|_| {
            (
                rng.random_range(0.0..side as f64),
                rng.random_range(0.0..side as f64),
                rng.random_range(0.2..=1.0),
            )
        })
        .collect();
    Image::from_fn(side, side, |i, j| {
        let (y, x) = (i as f64, j as f64);
        let mut best = (f64::INFINITY, 0.0);
        for &(cy, cx, v) in &cells {
            let d = (cy - y).powi(2) + (cx - x).powi(2);
            if d < best.0 {
                best = (d, v);
            }
        }
        best.1
    })
}

/// Noise standard deviation giving `target_psnr_db` relative to `peak`.
pub fn noise_sigma(peak: f64, target_psnr_db: f64) -> f64 {
    peak * 10f64.powf(-target_psnr_db / 20.0)
}

fn noisy(values: &Image, target_psnr_db: f64, seed: u64) -> Result<Image> {
    if !(target_psnr_db > 0.0) || !target_psnr_db.is_finite() {
        return Err(invalid(format!("target PSNR must be positive, got {target_psnr_db}")));
    }
    let peak = values.max();
    if !(peak > 0.0) {
        return Err(invalid("signal has no positive peak to reference the PSNR to"));
    }
    let sigma = noise_sigma(peak, target_psnr_db);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(values.map_with(|v| {
        let z: f64 = StandardNormal.sample(&mut rng);
        v + sigma * z
    }))
}

/// Adds i.i.d. Gaussian noise with `σ = max(sino) · 10^(−dB/20)`.
pub fn add_noise(sino: &Sinogram, target_psnr_db: f64, seed: u64) -> Result<Sinogram> {
    sino.with_values(noisy(sino.values(), target_psnr_db, seed)?)
}

/// Image-domain counterpart of [`add_noise`].
pub fn add_image_noise(img: &Image, target_psnr_db: f64, seed: u64) -> Result<Image> {
    noisy(img, target_psnr_db, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::psnr;
    use crate::tomo::{project, Geometry};
    use std::f64::consts::PI;

    #[test]
    fn disk_mass_and_values() {
        let d = make_phantom(PhantomKind::Disk, 64, 0).unwrap();
        let mass = PI * 16.0 * 16.0;
        assert!((d.sum() - mass).abs() <= 0.01 * mass);
        let c = 31.5;
        for i in 0..64 {
            for j in 0..64 {
                let r = ((i as f64 - c).powi(2) + (j as f64 - c).powi(2)).sqrt();
                if (r - 16.0).abs() > 1.0 {
                    assert!(d[(i, j)] == 0.0 || d[(i, j)] == 1.0);
                }
            }
        }
    }

    #[test]
    fn shepp_logan_center_is_sum_of_covering_ellipses() {
        // ellipses 1 and 2 cover the origin: 1.0 − 0.8
        assert!((shepp_logan_value(0.0, 0.0) - 0.2).abs() < 1e-15);
        let p = make_phantom(PhantomKind::SheppLogan, 65, 0).unwrap();
        assert!((p[(32, 32)] - 0.2).abs() < 1e-15);
        assert_eq!(p[(0, 0)], 0.0);
        assert!(p.max() <= 1.0 + 1e-12 && p.min() >= -1e-12);
    }

    #[test]
    fn grains_are_seeded_and_bounded() {
        let a = make_phantom(PhantomKind::Grains, 32, 9).unwrap();
        let b = make_phantom(PhantomKind::Grains, 32, 9).unwrap();
        let c = make_phantom(PhantomKind::Grains, 32, 10).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(a, c);
        assert!(a.min() >= 0.2 && a.max() <= 1.0);
        assert!(make_phantom(PhantomKind::Grains, 15, 0).is_err());
        assert!("voronoi".parse::<PhantomKind>().is_err());
        assert_eq!("shepp-logan".parse::<PhantomKind>().unwrap(), PhantomKind::SheppLogan);
    }

    #[test]
    fn noise_level_matches_target() {
        assert!((noise_sigma(1.0, 20.0) - 0.1).abs() < 1e-15);
        let img = make_phantom(PhantomKind::SheppLogan, 64, 0).unwrap();
        let g = Geometry::equally_spaced(256, 64).unwrap();
        let clean = project(&img, &g).unwrap();
        for target in [26.0, 20.0, 14.0] {
            let n = add_noise(&clean, target, 3).unwrap();
            let db = psnr(clean.values(), n.values(), clean.values().max()).unwrap();
            assert!((db - target).abs() <= 0.3, "{target}: {db}");
        }
        let quiet = add_noise(&clean, 140.0, 3).unwrap();
        assert!(psnr(clean.values(), quiet.values(), clean.values().max()).unwrap() >= 100.0);
        let again = add_noise(&clean, 20.0, 3).unwrap();
        assert_eq!(again, add_noise(&clean, 20.0, 3).unwrap());
    }

    #[test]
    fn noise_rejects_zero_signal() {
        assert!(add_image_noise(&Image::zeros(4, 4), 20.0, 0).is_err());
        assert!(add_image_noise(&Image::filled(4, 4, 1.0), 0.0, 0).is_err());
    }
}
