//! Sobol low-discrepancy sequence for candidate generation.
//!
//! Gray-code construction with Joe–Kuo direction numbers. Supports up to
//! [`MAX_DIMENSION`] dimensions, which covers every built-in scenario. The
//! all-zeros first element of the raw sequence is skipped so the stream
//! starts at the box midpoint.

use crate::error::{Error, Result};

/// Highest supported dimension count.
pub const MAX_DIMENSION: usize = 10;

const BITS: u32 = 32;

/// Primitive-polynomial parameters (degree, coefficients, initial m values)
/// for dimensions 2..=10; dimension 1 is the van der Corput sequence in
/// base 2.
const JOE_KUO: [(u32, u32, &[u32]); 9] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
];

/// Stateful Sobol generator over the unit hypercube.
#[derive(Debug, Clone)]
pub struct SobolSequence {
    dim: usize,
    /// Direction integers, one row of 32 per dimension.
    directions: Vec<[u32; BITS as usize]>,
    /// Current integer state per dimension.
    state: Vec<u32>,
    /// Raw sequence index of the *next* point (0-based, pre-skip).
    index: u64,
}

impl SobolSequence {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIMENSION {
            return Err(Error::config(format!(
                "Sobol dimension must be in 1..={MAX_DIMENSION}, got {dim}"
            )));
        }
        let mut directions = Vec::with_capacity(dim);
        directions.push(std::array::from_fn(|k| 1u32 << (BITS - 1 - k as u32)));
        for d in 1..dim {
            let (s, a, m_init) = JOE_KUO[d - 1];
            let s = s as usize;
            let mut v = [0u32; BITS as usize];
            for (k, &m) in m_init.iter().enumerate() {
                v[k] = m << (BITS - 1 - k as u32);
            }
            for k in s..BITS as usize {
                let mut value = v[k - s] ^ (v[k - s] >> s);
                for i in 1..s {
                    if (a >> (s - 1 - i)) & 1 == 1 {
                        value ^= v[k - i];
                    }
                }
                v[k] = value;
            }
            directions.push(v);
        }
        let mut seq = Self {
            dim,
            directions,
            state: vec![0; dim],
            index: 0,
        };
        // Skip the all-zeros point.
        seq.advance();
        Ok(seq)
    }

    fn advance(&mut self) {
        // Gray-code update: flip by the direction of the lowest zero bit.
        let c = self.index.trailing_ones() as usize;
        debug_assert!(c < BITS as usize, "Sobol sequence exhausted");
        for d in 0..self.dim {
            self.state[d] ^= self.directions[d][c];
        }
        self.index += 1;
    }

    /// Next point in `[0, 1)^dim`.
    pub fn next_point(&mut self) -> Vec<f64> {
        let scale = 1.0 / (1u64 << BITS) as f64;
        let point = self.state.iter().map(|&s| s as f64 * scale).collect();
        self.advance();
        point
    }

    /// Generates `count` points at once.
    pub fn take_points(&mut self, count: usize) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.next_point()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unsupported_dimensions() {
        assert!(SobolSequence::new(0).is_err());
        assert!(SobolSequence::new(MAX_DIMENSION + 1).is_err());
    }

    #[test]
    fn first_points_match_reference_sequence() {
        // Standard Sobol (origin skipped): 0.5, then 0.75/0.25, 0.25/0.75.
        let mut seq = SobolSequence::new(2).unwrap();
        assert_eq!(seq.next_point(), vec![0.5, 0.5]);
        assert_eq!(seq.next_point(), vec![0.75, 0.25]);
        assert_eq!(seq.next_point(), vec![0.25, 0.75]);
        assert_eq!(seq.next_point(), vec![0.375, 0.375]);
        assert_eq!(seq.next_point(), vec![0.875, 0.875]);
    }

    #[test]
    fn deterministic_across_instances() {
        let a = SobolSequence::new(5).unwrap().take_points(64);
        let b = SobolSequence::new(5).unwrap().take_points(64);
        assert_eq!(a, b);
    }

    #[test]
    fn points_fill_the_cube_evenly() {
        // Every dyadic half of every axis receives its fair share.
        let points = SobolSequence::new(MAX_DIMENSION).unwrap().take_points(256);
        for d in 0..MAX_DIMENSION {
            let low = points.iter().filter(|p| p[d] < 0.5).count();
            assert!(
                (120..=136).contains(&low),
                "dim {d}: {low}/256 points below 0.5"
            );
            assert!(points.iter().all(|p| (0.0..1.0).contains(&p[d])));
        }
    }
}
