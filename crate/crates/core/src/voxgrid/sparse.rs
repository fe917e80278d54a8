use crate::error::{Error, Result};

/// Coordinates with a fixed-width feature vector each, at a power-of-two
/// stride. Coordinates are kept sorted lexicographically and unique.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor<T = f32> {
    stride: i32,
    width: usize,
    coords: Vec<[i32; 3]>,
    feats: Vec<T>,
}

impl<T: Copy> SparseTensor<T> {
    pub fn empty(stride: i32, width: usize) -> Self {
        Self {
            stride,
            width,
            coords: Vec::new(),
            feats: Vec::new(),
        }
    }

    /// Validates the invariants and sorts the entries.
    pub fn from_entries(
        stride: i32,
        width: usize,
        entries: impl IntoIterator<Item = ([i32; 3], Vec<T>)>,
    ) -> Result<Self> {
        if stride < 1 || (stride & (stride - 1)) != 0 {
            return Err(Error::usage(format!("stride {stride} is not a power of two")));
        }
        let mut items: Vec<([i32; 3], Vec<T>)> = entries.into_iter().collect();
        items.sort_by(|a, b| a.0.cmp(&b.0));
        let mut coords = Vec::with_capacity(items.len());
        let mut feats = Vec::with_capacity(items.len() * width);
        for (c, f) in items {
            if c.iter().any(|x| x.rem_euclid(stride) != 0) {
                return Err(Error::usage(format!("coordinate {c:?} not divisible by stride {stride}")));
            }
            if f.len() != width {
                return Err(Error::usage(format!(
                    "feature width {} at {c:?}, expected {width}",
                    f.len()
                )));
            }
            if coords.last() == Some(&c) {
                return Err(Error::usage(format!("duplicate coordinate {c:?}")));
            }
            coords.push(c);
            feats.extend_from_slice(&f);
        }
        Ok(Self {
            stride,
            width,
            coords,
            feats,
        })
    }

    /// Trusted constructor for kernels that already produce sorted, unique
    /// coordinates.
    pub(crate) fn from_sorted(stride: i32, width: usize, coords: Vec<[i32; 3]>, feats: Vec<T>) -> Self {
        debug_assert_eq!(coords.len() * width, feats.len());
        debug_assert!(coords.windows(2).all(|w| w[0] < w[1]));
        Self {
            stride,
            width,
            coords,
            feats,
        }
    }

    pub fn stride(&self) -> i32 {
        self.stride
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[i32; 3]] {
        &self.coords
    }

    pub fn feats(&self) -> &[T] {
        &self.feats
    }

    pub fn feats_mut(&mut self) -> &mut [T] {
        &mut self.feats
    }

    pub fn feature(&self, row: usize) -> &[T] {
        &self.feats[row * self.width..(row + 1) * self.width]
    }

    pub fn find(&self, c: [i32; 3]) -> Option<usize> {
        self.coords.binary_search(&c).ok()
    }

    pub fn into_parts(self) -> (Vec<[i32; 3]>, Vec<T>) {
        (self.coords, self.feats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_entries() {
        assert!(SparseTensor::from_entries(3, 1, vec![([0, 0, 0], vec![1.0f32])]).is_err());
        assert!(SparseTensor::from_entries(2, 1, vec![([1, 0, 0], vec![1.0f32])]).is_err());
        assert!(SparseTensor::from_entries(1, 2, vec![([1, 0, 0], vec![1.0f32])]).is_err());
        assert!(SparseTensor::from_entries(
            1,
            1,
            vec![([1, 0, 0], vec![1.0f32]), ([1, 0, 0], vec![2.0])]
        )
        .is_err());
    }

    #[test]
    fn sorts_entries() {
        let t = SparseTensor::from_entries(
            2,
            1,
            vec![([2, 0, 0], vec![1.0f32]), ([0, -2, 4], vec![2.0])],
        )
        .unwrap();
        assert_eq!(t.coords(), &[[0, -2, 4], [2, 0, 0]]);
        assert_eq!(t.feats(), &[2.0, 1.0]);
        assert_eq!(t.find([2, 0, 0]), Some(1));
    }
}
