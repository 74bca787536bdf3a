//! Dense row-major grids shared by every module.
//!
//! Pixel `(u, v)` lives at index `v * width + u`; pixel centers sit on
//! integer coordinates, so `u` ranges over `[0, width - 1]`.

use crate::error::{Error, Result};

/// H×W real-valued grid with a per-pixel validity mask.
///
/// Invalid pixels always store `0.0` so that grids compare and serialize
/// deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl ScalarGrid {
    /// All-invalid grid.
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    /// Grid where every pixel is valid and holds `value`.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
            valid: vec![true; width * height],
        }
    }

    /// Every pixel valid.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::from_parts(width, height, values, vec![true; n])
    }

    pub fn from_parts(
        width: usize,
        height: usize,
        mut values: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if values.len() != width * height || valid.len() != width * height {
            return Err(Error::invalid(format!(
                "grid buffers of length {}/{} do not match {}x{}",
                values.len(),
                valid.len(),
                width,
                height
            )));
        }
        for (x, &ok) in values.iter_mut().zip(&valid) {
            if !ok {
                *x = 0.0;
            }
        }
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    /// Builds a grid by evaluating `f(u, v)`; `None` marks the pixel invalid.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Option<f64>) -> Self {
        let mut g = Self::invalid(width, height);
        for v in 0..height {
            for u in 0..width {
                if let Some(x) = f(u, v) {
                    g.set(u, v, x);
                }
            }
        }
        g
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn index(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    /// Value at `(u, v)` if the pixel is valid.
    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        let i = self.index(u, v);
        self.valid[i].then(|| self.values[i])
    }

    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.valid[self.index(u, v)]
    }

    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        let i = self.index(u, v);
        self.values[i] = value;
        self.valid[i] = true;
    }

    pub fn invalidate(&mut self, u: usize, v: usize) {
        let i = self.index(u, v);
        self.values[i] = 0.0;
        self.valid[i] = false;
    }

    pub fn count_valid(&self) -> usize {
        self.valid.iter().filter(|&&b| b).count()
    }

    /// Applies `f` to valid pixels; invalid ones stay invalid.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let values = self
            .values
            .iter()
            .zip(&self.valid)
            .map(|(&x, &ok)| if ok { f(x) } else { 0.0 })
            .collect();
        Self {
            width: self.width,
            height: self.height,
            values,
            valid: self.valid.clone(),
        }
    }

    pub(crate) fn ensure_shape(&self, shape: (usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape,
                got: self.shape(),
            });
        }
        Ok(())
    }
}

/// Single-channel intensity image, values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "image buffer of length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        let w = self.width;
        self.data[v * w + u] = value;
    }

    /// Checks that every intensity lies in `[0, 1]`.
    pub fn ensure_unit_range(&self) -> Result<()> {
        match self.data.iter().position(|x| !(0.0..=1.0).contains(x)) {
            Some(i) => Err(Error::invalid(format!(
                "intensity {} at pixel ({}, {}) is outside [0, 1]",
                self.data[i],
                i % self.width,
                i / self.width
            ))),
            None => Ok(()),
        }
    }

    pub(crate) fn ensure_shape(&self, shape: (usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape,
                got: self.shape(),
            });
        }
        Ok(())
    }
}

/// Pairwise summation with a fixed split, so the result depends only on the
/// order of `xs` and never on how the caller parallelized producing it.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}
