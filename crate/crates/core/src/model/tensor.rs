use serde::{Deserialize, Serialize};

use crate::error::{ImiError, Result};

/// Dense row-major tensor of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(ImiError::Validation(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(ImiError::Validation(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ImiError::Numeric(format!("tensor entry {i} is {}", data[i])));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    /// Builds a tensor without the finiteness scan. Used on hot paths where
    /// the caller checks finiteness of the final result.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `(channels, height, width)` view of a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[c, h, w] => Ok((c, h, w)),
            other => Err(ImiError::Validation(format!(
                "expected a (channels, height, width) tensor, got shape {other:?}"
            ))),
        }
    }

    /// Slice holding channel `c` of a rank-3 tensor.
    pub fn channel(&self, c: usize) -> Result<&[f64]> {
        let (channels, h, w) = self.chw()?;
        if c >= channels {
            return Err(ImiError::Addressing(format!(
                "channel {c} out of range for {channels} channels"
            )));
        }
        Ok(&self.data[c * h * w..(c + 1) * h * w])
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
    }
}

/// Arithmetic mean of a feature map; this is how a unit's scalar
/// activation is aggregated from its spatial map.
pub fn spatial_mean(map: &[f64]) -> Result<f64> {
    if map.is_empty() {
        return Err(ImiError::Degenerate("empty feature map".into()));
    }
    let mean = map.iter().sum::<f64>() / map.len() as f64;
    if !mean.is_finite() {
        return Err(ImiError::Numeric(format!("feature map mean is {mean}")));
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_length() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(ImiError::Numeric(_))
        ));
    }

    #[test]
    fn mean_of_constant_map_is_constant() {
        for n in [1, 4, 49, 1024] {
            assert_eq!(spatial_mean(&vec![1.0; n]).unwrap(), 1.0);
        }
    }

    #[test]
    fn mean_of_small_map() {
        assert_eq!(spatial_mean(&[1.0, 2.0, 3.0, 6.0]).unwrap(), 3.0);
    }

    #[test]
    fn mean_is_linear_in_the_map() {
        let map = [0.3, -1.2, 4.5, 2.25, -0.75];
        let base = spatial_mean(&map).unwrap();
        for c in [-3.0, 0.0, 0.5, 7.0] {
            let scaled: Vec<f64> = map.iter().map(|v| c * v).collect();
            let got = spatial_mean(&scaled).unwrap();
            assert!((got - c * base).abs() <= 1e-12 * (1.0 + base.abs() * c.abs()));
        }
    }

    #[test]
    fn channel_out_of_range_is_addressing_error() {
        let t = Tensor::zeros(vec![2, 3, 3]);
        assert!(matches!(t.channel(2), Err(ImiError::Addressing(_))));
    }
}
