//! Alternating-run encoding of binary masks.
//!
//! Runs alternate 0-bits then 1-bits in row-major order. The first run
//! always counts 0-bits and is zero when the mask starts with a 1.

use crate::error::{Error, Result};
use crate::grid::BitGrid;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct RleMask {
    pub runs: Vec<u32>,
}

impl RleMask {
    pub fn total(&self) -> usize {
        self.runs.iter().map(|&r| r as usize).sum()
    }

    /// Number of 1-bits without decoding.
    pub fn count_ones(&self) -> usize {
        self.runs.iter().skip(1).step_by(2).map(|&r| r as usize).sum()
    }

    /// True when no run after the leading one is empty.
    pub fn is_canonical(&self) -> bool {
        self.runs.iter().skip(1).all(|&r| r > 0)
    }
}

pub fn rle_encode(mask: &BitGrid) -> RleMask {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for &bit in mask.bits() {
        if bit == current {
            len += 1;
        } else {
            runs.push(len);
            current = bit;
            len = 1;
        }
    }
    if len > 0 || runs.is_empty() {
        runs.push(len);
    }
    RleMask { runs }
}

pub fn rle_decode(rle: &RleMask, height: usize, width: usize) -> Result<BitGrid> {
    let expected = height * width;
    let got = rle.total();
    if got != expected {
        return Err(Error::LengthMismatch { expected, got });
    }
    let mut bits = Vec::with_capacity(expected);
    let mut value = false;
    for &run in &rle.runs {
        bits.extend(std::iter::repeat_n(value, run as usize));
        value = !value;
    }
    BitGrid::from_bits(height, width, bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_zero_grid_is_single_run() {
        let g = BitGrid::new(4, 4);
        assert_eq!(rle_encode(&g).runs, vec![16]);
        assert_eq!(rle_decode(&RleMask { runs: vec![16] }, 4, 4).unwrap(), g);
    }

    #[test]
    fn all_one_grid_has_leading_empty_run() {
        let g = BitGrid::from_bits(4, 4, vec![true; 16]).unwrap();
        assert_eq!(rle_encode(&g).runs, vec![0, 16]);
        assert_eq!(rle_decode(&RleMask { runs: vec![0, 16] }, 4, 4).unwrap(), g);
    }

    #[test]
    fn short_row_scan() {
        let g = BitGrid::from_bits(1, 5, vec![false, false, true, true, false]).unwrap();
        let rle = rle_encode(&g);
        assert_eq!(rle.runs, vec![2, 2, 1]);
        assert_eq!(rle.count_ones(), 2);
        assert!(rle.is_canonical());
    }

    #[test]
    fn decode_rejects_wrong_total() {
        let err = rle_decode(&RleMask { runs: vec![3, 4] }, 4, 4).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { expected: 16, got: 7 }));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn round_trip(h in 1usize..24, w in 1usize..24, seed in any::<u64>(), density in 0.0f64..1.0) {
            // cheap LCG so density actually varies per case
            let mut s = seed | 1;
            let bits: Vec<bool> = (0..h * w)
                .map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    ((s >> 11) as f64 / (1u64 << 53) as f64) < density
                })
                .collect();
            let g = BitGrid::from_bits(h, w, bits).unwrap();
            let rle = rle_encode(&g);
            prop_assert!(rle.is_canonical());
            prop_assert_eq!(rle.total(), h * w);
            prop_assert_eq!(rle.count_ones(), g.count_ones());
            prop_assert_eq!(rle_decode(&rle, h, w).unwrap(), g);
        }
    }
}
