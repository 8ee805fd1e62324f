use crate::error::{Error, Result};

/// Fixed 2-D sinusoidal encodings for a `rows × cols` token grid.
///
/// The first `width / 2` channels encode the row, the second half the
/// column. Within each half, channel `j` uses frequency
/// `1 / 10000^(2⌊j/2⌋ / half)` with `sin` on even and `cos` on odd channels,
/// so position 0 encodes as `0, 1, 0, 1, ...`. Output is row-major
/// `[rows·cols, width]`.
pub fn sincos_2d(rows: usize, cols: usize, width: usize) -> Result<Vec<f32>> {
    if width == 0 || width % 2 != 0 {
        return Err(Error::Config(format!(
            "positional encoding width must be even and positive, got {width}"
        )));
    }
    let half = width / 2;
    let freq = |j: usize| 1.0 / 10000f64.powf((2 * (j / 2)) as f64 / half as f64);
    let mut out = Vec::with_capacity(rows * cols * width);
    for r in 0..rows {
        for c in 0..cols {
            for (pos, _) in [(r, 0), (c, 1)] {
                for j in 0..half {
                    let a = pos as f64 * freq(j);
                    out.push(if j % 2 == 0 { a.sin() } else { a.cos() } as f32);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_is_alternating_zero_one() {
        let pe = sincos_2d(3, 4, 8).unwrap();
        assert_eq!(&pe[0..8], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn odd_width_rejected() {
        assert!(sincos_2d(2, 2, 7).is_err());
    }

    #[test]
    fn positions_are_distinct() {
        let (rows, cols, w) = (6, 12, 32);
        let pe = sincos_2d(rows, cols, w).unwrap();
        for a in 0..rows * cols {
            for b in a + 1..rows * cols {
                let d: f32 = (0..w).map(|k| (pe[a * w + k] - pe[b * w + k]).abs()).sum();
                assert!(d > 1e-3, "tokens {a} and {b} collide");
            }
        }
    }
}
