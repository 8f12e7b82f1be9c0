use serde::{Deserialize, Serialize};

/// Extent of a 4D radio-map tensor, laid out row-major in `(x, y, t, f)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MapShape {
    pub n_x: usize,
    pub n_y: usize,
    pub n_t: usize,
    pub n_f: usize,
}

/// Coordinates of one voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Voxel {
    pub x: usize,
    pub y: usize,
    pub t: usize,
    pub f: usize,
}

impl MapShape {
    pub const fn new(n_x: usize, n_y: usize, n_t: usize, n_f: usize) -> Self {
        Self { n_x, n_y, n_t, n_f }
    }

    pub fn from_array(dims: [usize; 4]) -> Self {
        Self::new(dims[0], dims[1], dims[2], dims[3])
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n_x, self.n_y, self.n_t, self.n_f]
    }

    pub fn len(&self) -> usize {
        self.n_x * self.n_y * self.n_t * self.n_f
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of voxels in one spatial row (fixed `x`).
    pub fn x_stride(&self) -> usize {
        self.n_y * self.n_t * self.n_f
    }

    #[inline]
    pub fn flat(&self, v: Voxel) -> usize {
        ((v.x * self.n_y + v.y) * self.n_t + v.t) * self.n_f + v.f
    }

    #[inline]
    pub fn voxel(&self, index: usize) -> Voxel {
        let f = index % self.n_f;
        let rest = index / self.n_f;
        let t = rest % self.n_t;
        let rest = rest / self.n_t;
        let y = rest % self.n_y;
        let x = rest / self.n_y;
        Voxel { x, y, t, f }
    }

    /// `t / (n_t - 1)`, or 0 for a single slot.
    pub fn t_norm(&self, t: usize) -> f64 {
        if self.n_t > 1 {
            t as f64 / (self.n_t - 1) as f64
        } else {
            0.0
        }
    }

    /// `f / (n_f - 1)`, or 0 for a single band.
    pub fn f_norm(&self, f: usize) -> f64 {
        if self.n_f > 1 {
            f as f64 / (self.n_f - 1) as f64
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn flat_index_roundtrips(nx in 1usize..6, ny in 1usize..6, nt in 1usize..5, nf in 1usize..5, seed in 0usize..10_000) {
            let shape = MapShape::new(nx, ny, nt, nf);
            let i = seed % shape.len();
            prop_assert_eq!(shape.flat(shape.voxel(i)), i);
        }
    }

    #[test]
    fn layout_is_row_major_xytf() {
        let s = MapShape::new(2, 3, 4, 5);
        assert_eq!(s.flat(Voxel { x: 0, y: 0, t: 0, f: 1 }), 1);
        assert_eq!(s.flat(Voxel { x: 0, y: 0, t: 1, f: 0 }), 5);
        assert_eq!(s.flat(Voxel { x: 0, y: 1, t: 0, f: 0 }), 20);
        assert_eq!(s.flat(Voxel { x: 1, y: 0, t: 0, f: 0 }), 60);
        assert_eq!(s.x_stride(), 60);
        assert_eq!(s.f_norm(4), 1.0);
        assert_eq!(MapShape::new(1, 1, 1, 1).t_norm(0), 0.0);
    }
}
