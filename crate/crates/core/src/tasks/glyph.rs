//! Procedural glyph classes for toy few-shot classification.
//!
//! A class is a random 3–5 segment polyline (fixed by its stroke seed) under
//! one of four right-angle rotations. Each render adds sub-pixel translation
//! and Gaussian pixel noise, then clamps to `[0, 1]`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Tensor;

use super::{Episode, TaskError};

pub const DEFAULT_IMAGE_SIZE: usize = 14;
pub const PIXEL_NOISE_STD: f64 = 0.05;
const STROKE_HALF_WIDTH: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn degrees(self) -> u32 {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }

    /// Rotates a point of the unit square about its centre.
    fn apply(self, (x, y): (f64, f64)) -> (f64, f64) {
        let (u, v) = (x - 0.5, y - 0.5);
        let (u, v) = match self {
            Rotation::R0 => (u, v),
            Rotation::R90 => (-v, u),
            Rotation::R180 => (-u, -v),
            Rotation::R270 => (v, -u),
        };
        (u + 0.5, v + 0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlyphSpec {
    pub stroke_seed: u64,
    pub rotation: Rotation,
    pub image_size: usize,
    /// Maximum translation in pixels, applied independently per render.
    pub jitter: f64,
}

impl GlyphSpec {
    /// Polyline vertices in unit-square coordinates, after rotation.
    pub fn vertices(&self) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.stroke_seed);
        let segments = rng.random_range(3..=5);
        (0..=segments)
            .map(|_| {
                let p = (rng.random_range(0.15..0.85), rng.random_range(0.15..0.85));
                self.rotation.apply(p)
            })
            .collect()
    }

    /// Noise-free, centred render.
    pub fn render_clean(&self) -> Tensor {
        self.rasterize((0.0, 0.0), None::<&mut ChaCha8Rng>)
    }

    /// Jittered, noisy render.
    pub fn render(&self, rng: &mut impl Rng) -> Tensor {
        let offset = if self.jitter > 0.0 {
            (
                rng.random_range(-self.jitter..=self.jitter),
                rng.random_range(-self.jitter..=self.jitter),
            )
        } else {
            (0.0, 0.0)
        };
        self.rasterize(offset, Some(rng))
    }

    fn rasterize<R: Rng>(&self, offset: (f64, f64), noise: Option<&mut R>) -> Tensor {
        let n = self.image_size;
        let scale = n as f64;
        let pts: Vec<(f64, f64)> = self
            .vertices()
            .into_iter()
            .map(|(x, y)| (x * scale + offset.0, y * scale + offset.1))
            .collect();
        let mut data = Vec::with_capacity(n * n);
        for row in 0..n {
            for col in 0..n {
                let p = (col as f64 + 0.5, row as f64 + 0.5);
                let d = pts
                    .windows(2)
                    .map(|w| segment_distance(p, w[0], w[1]))
                    .fold(f64::INFINITY, f64::min);
                data.push((1.0 + STROKE_HALF_WIDTH - d).clamp(0.0, 1.0));
            }
        }
        if let Some(rng) = noise {
            let normal = Normal::new(0.0, PIXEL_NOISE_STD).expect("valid noise std");
            for v in &mut data {
                *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
            }
        }
        Tensor::new(&[n, n], data)
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// A contiguous range of stroke seeds, each used under all four rotations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlyphPool {
    pub first_seed: u64,
    pub characters: usize,
    pub image_size: usize,
    pub jitter: f64,
}

impl GlyphPool {
    pub fn class_count(&self) -> usize {
        self.characters * Rotation::ALL.len()
    }

    pub fn class(&self, index: usize) -> GlyphSpec {
        assert!(index < self.class_count(), "glyph class {index} out of range");
        GlyphSpec {
            stroke_seed: self.first_seed + (index / 4) as u64,
            rotation: Rotation::ALL[index % 4],
            image_size: self.image_size,
            jitter: self.jitter,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.image_size * self.image_size
    }
}

/// Samples an N-way K-shot H-query episode from `pool`.
///
/// Rows are grouped by class in sampling order; images are flattened to
/// `image_size²` features.
pub fn sample_glyph_episode(
    rng: &mut impl Rng,
    pool: &GlyphPool,
    way: usize,
    shot: usize,
    query: usize,
) -> Result<Episode, TaskError> {
    if way < 2 {
        return Err(TaskError::InvalidWay(way));
    }
    if way > pool.class_count() {
        return Err(TaskError::PoolTooSmall {
            way,
            available: pool.class_count(),
        });
    }
    if shot == 0 || query == 0 {
        return Err(TaskError::MalformedEpisode("shot and query must be positive".into()));
    }
    let classes = sample(rng, pool.class_count(), way).into_vec();
    let dim = pool.feature_dim();
    let mut train_x = Vec::with_capacity(way * shot * dim);
    let mut test_x = Vec::with_capacity(way * query * dim);
    let mut train_y = Vec::with_capacity(way * shot * way);
    let mut test_y = Vec::with_capacity(way * query * way);
    for (label, &class) in classes.iter().enumerate() {
        let spec = pool.class(class);
        let one_hot = |buf: &mut Vec<f64>| buf.extend((0..way).map(|k| if k == label { 1.0 } else { 0.0 }));
        for _ in 0..shot {
            train_x.extend_from_slice(spec.render(rng).data());
            one_hot(&mut train_y);
        }
        for _ in 0..query {
            test_x.extend_from_slice(spec.render(rng).data());
            one_hot(&mut test_y);
        }
    }
    Episode::new(
        (
            Tensor::new(&[way * shot, dim], train_x),
            Tensor::new(&[way * shot, way], train_y),
        ),
        (
            Tensor::new(&[way * query, dim], test_x),
            Tensor::new(&[way * query, way], test_y),
        ),
        way,
        shot,
        query,
        0,
    )
}
