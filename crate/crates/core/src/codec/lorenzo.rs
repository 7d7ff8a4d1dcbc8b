//! First-order Lorenzo prediction in any number of dimensions.
//!
//! The prediction at `i` is the inclusion-exclusion sum over the corner of
//! the unit hypercube behind `i`; neighbours outside the array count as 0.

use crate::field::strides;

pub struct Lorenzo {
    shape: Vec<usize>,
    /// `(dimension mask, flat offset, sign)` per non-empty neighbour subset.
    terms: Vec<(u32, usize, f64)>,
    coord: Vec<usize>,
}

impl Lorenzo {
    pub fn new(shape: &[usize]) -> Self {
        assert!(shape.len() <= 16, "rank above 16 is not supported");
        let st = strides(shape);
        let d = shape.len();
        let terms = (1u32..(1 << d))
            .map(|mask| {
                let offset = (0..d).filter(|&k| mask & (1 << k) != 0).map(|k| st[k]).sum();
                let sign = if mask.count_ones() % 2 == 1 { 1.0 } else { -1.0 };
                (mask, offset, sign)
            })
            .collect();
        Self {
            shape: shape.to_vec(),
            terms,
            coord: vec![0; d],
        }
    }

    /// Prediction for flat index `index`; calls must visit indices in
    /// row-major order starting at 0, and `recon[..index]` must be final.
    pub fn predict(&mut self, recon: &[f64], index: usize) -> f64 {
        if index > 0 {
            self.advance();
        }
        let mut avail = 0u32;
        for (k, &c) in self.coord.iter().enumerate() {
            if c > 0 {
                avail |= 1 << k;
            }
        }
        let mut p = 0.0;
        for &(mask, offset, sign) in &self.terms {
            if mask & !avail == 0 {
                p += sign * recon[index - offset];
            }
        }
        p
    }

    fn advance(&mut self) {
        for k in (0..self.shape.len()).rev() {
            self.coord[k] += 1;
            if self.coord[k] < self.shape[k] {
                return;
            }
            self.coord[k] = 0;
        }
    }
}
