//! Generated test scenes: one textured square on a flat background, with the
//! square's ground-truth mask.

use std::path::Path;

use rand::Rng;

use crate::error::Result;
use crate::evaluation::GroundTruthMask;
use crate::imaging::{save_gray, save_rgb, Image};
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub size: usize,
    pub square: usize,
    /// Place the square at the image centre instead of a random offset.
    pub centred: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            size: 128,
            square: 32,
            centred: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub image: Image,
    pub mask: GroundTruthMask,
    /// Top-left corner of the square.
    pub origin: (usize, usize),
}

impl Scene {
    pub fn in_square(&self, x: usize, y: usize, side: usize) -> bool {
        let (ox, oy) = self.origin;
        (ox..ox + side).contains(&x) && (oy..oy + side).contains(&y)
    }
}

fn random_colour(rng: &mut impl Rng) -> [f32; 3] {
    [
        rng.gen_range(0.0..1.0),
        rng.gen_range(0.0..1.0),
        rng.gen_range(0.0..1.0),
    ]
}

/// Square filled with an oriented high-contrast grating between two colours
/// on a flat, moderately toned background.
pub fn textured_square(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    let mut rng = rng_from_seed(seed);
    let n = spec.size;
    let s = spec.square.min(n);
    let origin = if spec.centred {
        ((n - s) / 2, (n - s) / 2)
    } else {
        let margin = (n - s) / 8;
        (
            rng.gen_range(margin..=n - s - margin),
            rng.gen_range(margin..=n - s - margin),
        )
    };
    let background = {
        let base: f32 = rng.gen_range(0.3..0.7);
        let tint = random_colour(&mut rng);
        [0, 1, 2].map(|c| (base + 0.2 * (tint[c] - 0.5)).clamp(0.0, 1.0))
    };
    let dark = random_colour(&mut rng).map(|v| v * 0.25);
    let light = random_colour(&mut rng).map(|v| 0.75 + v * 0.25);
    let angle: f32 = rng.gen_range(0.0..std::f32::consts::PI);
    let period: f32 = rng.gen_range(4.0..8.0);
    let (ca, sa) = (angle.cos(), angle.sin());

    let (ox, oy) = origin;
    let image = Image::from_rgb_fn(n, n, |x, y| {
        if (ox..ox + s).contains(&x) && (oy..oy + s).contains(&y) {
            let u = (x as f32 * ca + y as f32 * sa) / period;
            if u.rem_euclid(1.0) < 0.5 {
                dark
            } else {
                light
            }
        } else {
            background
        }
    })?;
    let mask = GroundTruthMask::from_fn(n, n, |x, y| {
        (ox..ox + s).contains(&x) && (oy..oy + s).contains(&y)
    });
    Ok(Scene {
        image,
        mask,
        origin,
    })
}

/// Writes `count` scenes as `img_XXX.png` into `images/` and their masks into
/// `masks/` under `root`.
pub fn write_corpus(
    root: impl AsRef<Path>,
    count: usize,
    spec: &SceneSpec,
    seed: u64,
) -> Result<()> {
    let root = root.as_ref();
    let images = root.join("images");
    let masks = root.join("masks");
    std::fs::create_dir_all(&images)?;
    std::fs::create_dir_all(&masks)?;
    for i in 0..count {
        let scene = textured_square(spec, seed.wrapping_add(i as u64))?;
        let name = format!("img_{i:03}.png");
        save_rgb(&scene.image, images.join(&name))?;
        let m: Vec<f64> = scene.mask.labels.iter().map(|&b| b as f64).collect();
        save_gray(&m, spec.size, spec.size, masks.join(&name))?;
    }
    Ok(())
}
