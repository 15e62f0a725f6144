//! Integer pixel shifts with zero fill. A shift is linear, so its adjoint
//! (the opposite shift) carries gradients back to the unshifted image.

use rand::Rng as _;

use crate::rng::Rng;

pub const MAX_SHIFT: i64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shift {
    pub dy: i64,
    pub dx: i64,
}

impl Shift {
    pub fn random(rng: &mut Rng) -> Self {
        Self {
            dy: rng.random_range(-MAX_SHIFT..=MAX_SHIFT),
            dx: rng.random_range(-MAX_SHIFT..=MAX_SHIFT),
        }
    }

    fn inverse(self) -> Self {
        Self {
            dy: -self.dy,
            dx: -self.dx,
        }
    }

    /// Shifts every `[h, w]` plane of `data`; a no-op for non-image shapes.
    pub fn apply(self, data: &[f64], image_shape: &[usize]) -> Vec<f64> {
        let (h, w) = match image_shape {
            [_, h, w] => (*h as i64, *w as i64),
            _ => return data.to_vec(),
        };
        let plane = (h * w) as usize;
        let mut out = vec![0.0; data.len()];
        for (src, dst) in data.chunks(plane).zip(out.chunks_mut(plane)) {
            for y in 0..h {
                let sy = y - self.dy;
                if !(0..h).contains(&sy) {
                    continue;
                }
                for x in 0..w {
                    let sx = x - self.dx;
                    if (0..w).contains(&sx) {
                        dst[(y * w + x) as usize] = src[(sy * w + sx) as usize];
                    }
                }
            }
        }
        out
    }

    /// Adjoint of [`Shift::apply`].
    pub fn pull_back(self, grad: &[f64], image_shape: &[usize]) -> Vec<f64> {
        self.inverse().apply(grad, image_shape)
    }
}
