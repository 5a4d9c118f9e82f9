//! Row-major 2-D grids shared by every module.

use crate::{Error, Result};

/// Pixel coordinate as `(row, col)`.
pub type Pixel = (usize, usize);

/// Dense row-major `h x w` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    h: usize,
    w: usize,
    data: Vec<T>,
}

/// Intensities in `[0, 1]`.
pub type Image = Grid<f32>;
/// `0` = background, `1` = foreground.
pub type BinaryMask = Grid<u8>;
/// Boundary distance map, values in `(0, 1]`.
pub type DistanceMap = Grid<f32>;

impl<T: Clone> Grid<T> {
    pub fn filled(h: usize, w: usize, value: T) -> Self {
        Self {
            h,
            w,
            data: vec![value; h * w],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::shape(format!(
                "grid {h}x{w} needs {} values, got {}",
                h * w,
                data.len()
            )));
        }
        Ok(Self { h, w, data })
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        Self { h, w, data }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> &T {
        &self.data[y * self.w + x]
    }

    #[inline]
    pub fn get_mut(&mut self, y: usize, x: usize) -> &mut T {
        &mut self.data[y * self.w + x]
    }

    /// Bounds-checked access with signed coordinates.
    #[inline]
    pub fn try_get(&self, y: i64, x: i64) -> Option<&T> {
        if y < 0 || x < 0 || y >= self.h as i64 || x >= self.w as i64 {
            None
        } else {
            Some(&self.data[y as usize * self.w + x as usize])
        }
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

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn indexed(&self) -> impl Iterator<Item = (Pixel, &T)> {
        let w = self.w;
        self.data.iter().enumerate().map(move |(i, v)| ((i / w, i % w), v))
    }

    pub fn ensure_same_shape<U>(&self, other: &Grid<U>, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }
}

impl Grid<u8> {
    /// Number of foreground pixels.
    pub fn count_foreground(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn foreground(&self) -> impl Iterator<Item = Pixel> + '_ {
        self.indexed().filter(|(_, &v)| v != 0).map(|(p, _)| p)
    }
}
