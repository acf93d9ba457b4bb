//! Random geometric augmentations applied as one bilinear warp with
//! clamp-to-edge sampling. The warp is linear in the image, so its adjoint
//! carries gradients back to the un-augmented image.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Augmentation {
    /// Integer translation in `[-pixels, pixels]` along each axis.
    Jitter { pixels: u32 },
    /// Rotation in `[-degrees, degrees]` about the centre.
    Rotate { degrees: f64 },
    /// Isotropic scaling in `[min, max]` about the centre.
    Scale { min: f64, max: f64 },
}

/// Jitter ±4 px, rotation ±10°, scale 0.95–1.05.
pub fn default_augmentations() -> Vec<Augmentation> {
    vec![
        Augmentation::Jitter { pixels: 4 },
        Augmentation::Rotate { degrees: 10.0 },
        Augmentation::Scale {
            min: 0.95,
            max: 1.05,
        },
    ]
}

/// Affine map from output pixel coordinates to source coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Affine {
    m: [[f64; 2]; 2],
    t: [f64; 2],
}

impl Affine {
    const IDENTITY: Affine = Affine {
        m: [[1.0, 0.0], [0.0, 1.0]],
        t: [0.0, 0.0],
    };

    fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.m[0][0] * p[0] + self.m[0][1] * p[1] + self.t[0],
            self.m[1][0] * p[0] + self.m[1][1] * p[1] + self.t[1],
        ]
    }

    /// `self ∘ other`.
    fn compose(&self, other: &Affine) -> Affine {
        let mut m = [[0.0; 2]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.m[i][0] * other.m[0][j] + self.m[i][1] * other.m[1][j];
            }
        }
        let t = self.apply(other.t);
        Affine { m, t }
    }

    /// Linear map `a` applied about `centre`.
    fn about(centre: [f64; 2], a: [[f64; 2]; 2]) -> Affine {
        let ac = [
            a[0][0] * centre[0] + a[0][1] * centre[1],
            a[1][0] * centre[0] + a[1][1] * centre[1],
        ];
        Affine {
            m: a,
            t: [centre[0] - ac[0], centre[1] - ac[1]],
        }
    }
}

/// A sampled warp with precomputed bilinear taps per output pixel.
#[derive(Debug, Clone)]
pub struct Warp {
    height: usize,
    width: usize,
    taps: Vec<[(usize, f64); 4]>,
    identity: bool,
}

impl Warp {
    /// Samples one warp from the augmentation list (applied in list order).
    pub fn sample<R: Rng + ?Sized>(augs: &[Augmentation], height: usize, width: usize, rng: &mut R) -> Warp {
        let centre = [(width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0];
        // Inverse maps compose in reverse: src = inv_1(inv_2(...inv_n(p))).
        let mut inverse = Affine::IDENTITY;
        for aug in augs {
            let inv = match *aug {
                Augmentation::Jitter { pixels } => {
                    let p = pixels as i64;
                    let dx = rng.random_range(-p..=p) as f64;
                    let dy = rng.random_range(-p..=p) as f64;
                    Affine {
                        m: Affine::IDENTITY.m,
                        t: [-dx, -dy],
                    }
                }
                Augmentation::Rotate { degrees } => {
                    let theta = if degrees > 0.0 {
                        rng.random_range(-degrees..=degrees).to_radians()
                    } else {
                        0.0
                    };
                    let (s, c) = (-theta).sin_cos();
                    Affine::about(centre, [[c, -s], [s, c]])
                }
                Augmentation::Scale { min, max } => {
                    let scale = if max > min { rng.random_range(min..=max) } else { min };
                    let k = 1.0 / scale;
                    Affine::about(centre, [[k, 0.0], [0.0, k]])
                }
            };
            inverse = inverse.compose(&inv);
        }
        Self::from_affine(inverse, height, width)
    }

    pub fn identity(height: usize, width: usize) -> Warp {
        Self::from_affine(Affine::IDENTITY, height, width)
    }

    fn from_affine(a: Affine, height: usize, width: usize) -> Warp {
        let identity = a == Affine::IDENTITY;
        let clamp_x = |x: i64| x.clamp(0, width as i64 - 1) as usize;
        let clamp_y = |y: i64| y.clamp(0, height as i64 - 1) as usize;
        let mut taps = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                let [sx, sy] = a.apply([x as f64, y as f64]);
                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = (sx - x0, sy - y0);
                let (x0, y0) = (x0 as i64, y0 as i64);
                let i = |yy: i64, xx: i64| clamp_y(yy) * width + clamp_x(xx);
                taps.push([
                    (i(y0, x0), (1.0 - fx) * (1.0 - fy)),
                    (i(y0, x0 + 1), fx * (1.0 - fy)),
                    (i(y0 + 1, x0), (1.0 - fx) * fy),
                    (i(y0 + 1, x0 + 1), fx * fy),
                ]);
            }
        }
        Warp {
            height,
            width,
            taps,
            identity,
        }
    }

    /// Applies the warp to every channel of a `(c, h, w)` tensor.
    pub fn forward(&self, image: &Tensor) -> Tensor {
        if self.identity {
            return image.clone();
        }
        let n = self.height * self.width;
        let channels = image.len() / n;
        let src = image.data();
        let mut out = vec![0.0; image.len()];
        for c in 0..channels {
            let plane = &src[c * n..(c + 1) * n];
            for (o, taps) in out[c * n..(c + 1) * n].iter_mut().zip(&self.taps) {
                *o = taps.iter().map(|&(i, w)| w * plane[i]).sum();
            }
        }
        Tensor::from_raw(image.shape().to_vec(), out)
    }

    /// Transpose of [`Warp::forward`].
    pub fn adjoint(&self, grad: &Tensor) -> Tensor {
        if self.identity {
            return grad.clone();
        }
        let n = self.height * self.width;
        let channels = grad.len() / n;
        let g = grad.data();
        let mut out = vec![0.0; grad.len()];
        for c in 0..channels {
            let dst = &mut out[c * n..(c + 1) * n];
            for (gv, taps) in g[c * n..(c + 1) * n].iter().zip(&self.taps) {
                for &(i, w) in taps {
                    dst[i] += w * gv;
                }
            }
        }
        Tensor::from_raw(grad.shape().to_vec(), out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn no_augmentation_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = Warp::sample(&[], 5, 5, &mut rng);
        let img = random_tensor(&mut rng, vec![2, 5, 5]);
        assert_eq!(w.forward(&img), img);
    }

    #[test]
    fn zero_range_augmentations_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let augs = [
            Augmentation::Jitter { pixels: 0 },
            Augmentation::Rotate { degrees: 0.0 },
            Augmentation::Scale { min: 1.0, max: 1.0 },
        ];
        let w = Warp::sample(&augs, 6, 6, &mut rng);
        let img = random_tensor(&mut rng, vec![1, 6, 6]);
        for (a, b) in w.forward(&img).data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn jitter_shifts_content() {
        let mut img = Tensor::zeros(vec![1, 9, 9]);
        img.data_mut()[4 * 9 + 4] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Warp::sample(&[Augmentation::Jitter { pixels: 2 }], 9, 9, &mut rng);
        let out = w.forward(&img);
        assert_eq!(out.data().iter().filter(|v| **v == 1.0).count(), 1);
        assert_eq!(out.data().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn adjoint_satisfies_inner_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let w = Warp::sample(&default_augmentations(), 12, 12, &mut rng);
            let x = random_tensor(&mut rng, vec![3, 12, 12]);
            let y = random_tensor(&mut rng, vec![3, 12, 12]);
            let lhs: f64 = w.forward(&x).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(w.adjoint(&y).data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
    }
}
