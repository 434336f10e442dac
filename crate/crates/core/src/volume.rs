//! Dense `T x H x W` volumes stored row-major as `(t, y, x)`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(t: usize, h: usize, w: usize) -> Self {
        Dims { t, h, w }
    }

    pub fn len(&self) -> usize {
        self.t * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, t: usize, y: usize, x: usize) -> usize {
        (t * self.h + y) * self.w + x
    }

    #[inline]
    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        let x = i % self.w;
        let y = (i / self.w) % self.h;
        (i / (self.w * self.h), y, x)
    }

    pub(crate) fn tuple(&self) -> (usize, usize, usize) {
        (self.t, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    dims: Dims,
    data: Vec<T>,
}

/// Probabilities or binary ground truth in `[0, 1]`.
pub type MaskVolume = Volume<f64>;

/// One clip of foreground probabilities from the localization stage.
pub type ClipMask = Volume<f32>;

pub type BinaryVolume = Volume<bool>;

/// Component ids; 0 is background.
pub type LabelVolume = Volume<u32>;

impl<T: Clone> Volume<T> {
    pub fn filled(dims: Dims, value: T) -> Self {
        Volume {
            dims,
            data: vec![value; dims.len()],
        }
    }
}

impl<T> Volume<T> {
    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::VolumeLength {
                dims: dims.tuple(),
                expected: dims.len(),
                got: data.len(),
            });
        }
        Ok(Volume { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for t in 0..dims.t {
            for y in 0..dims.h {
                for x in 0..dims.w {
                    data.push(f(t, y, x));
                }
            }
        }
        Volume { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, t: usize, y: usize, x: usize) -> &T {
        &self.data[self.dims.index(t, y, x)]
    }

    #[inline]
    pub fn set(&mut self, t: usize, y: usize, x: usize, value: T) {
        let i = self.dims.index(t, y, x);
        self.data[i] = value;
    }

    pub fn ensure_same_dims<U>(&self, other: &Volume<U>) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch {
                left: self.dims.tuple(),
                right: other.dims.tuple(),
            });
        }
        Ok(())
    }
}

impl MaskVolume {
    /// Checked constructor: every value must lie in `[0, 1]`.
    pub fn probabilities(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if let Some((offset, &value)) = data.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::ProbabilityOutOfRange { offset, value });
        }
        Volume::from_vec(dims, data)
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

impl ClipMask {
    pub fn to_mask_volume(&self) -> MaskVolume {
        Volume {
            dims: self.dims,
            data: self.data.iter().map(|&v| v as f64).collect(),
        }
    }
}
