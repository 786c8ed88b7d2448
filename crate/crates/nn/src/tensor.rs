use crate::{NnError, Result, Scalar};

/// A single channels-first feature map (`C x H x W`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(NnError::Shape(format!(
                "buffer of {} values does not fit {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(NnError::Shape(format!(
                "cannot add {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Ok(self.with_data(data))
    }

    /// Stacks two maps of equal spatial size along the channel axis.
    pub fn concat_channels(&self, other: &Self) -> Result<Self> {
        if self.height != other.height || self.width != other.width {
            return Err(NnError::Shape(format!(
                "cannot concatenate {:?} with {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Self {
            channels: self.channels + other.channels,
            height: self.height,
            width: self.width,
            data,
        })
    }

    /// Copies channels `start..end` into a new map.
    pub fn slice_channels(&self, start: usize, end: usize) -> Self {
        let p = self.plane();
        Self {
            channels: end - start,
            height: self.height,
            width: self.width,
            data: self.data[start * p..end * p].to_vec(),
        }
    }

    /// Crops a window; used to train fully-convolutional models on patches.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(NnError::Shape(format!(
                "crop {height}x{width}@({top},{left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.channels * height * width);
        for c in 0..self.channels {
            for y in top..top + height {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + left..row + left + width]);
            }
        }
        Ok(Self {
            channels: self.channels,
            height,
            width,
            data,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::of(v.to_f64().unwrap_or(0.0))).collect(),
        }
    }
}

impl<T: Scalar> Tensor<T> {
    pub(crate) fn with_data(&self, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
        }
    }
}
