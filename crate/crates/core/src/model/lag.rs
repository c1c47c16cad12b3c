use ndarray::{Array3, ArrayView3};

use crate::error::{Result, SpireError};

/// Stacks each channel with its next `lags` time-shifted copies.
///
/// Input is batch-major `(B, T, C)`; output is `(B, T - lags, C * (lags + 1))`
/// where feature `j * C + c` at time `t` holds input channel `c` at `t + j`.
pub fn lag_augment(x: ArrayView3<f64>, lags: usize) -> Result<Array3<f64>> {
    let (batch, t_len, channels) = x.dim();
    if lags >= t_len {
        return Err(SpireError::Argument(format!(
            "lag count {lags} must be smaller than sequence length {t_len}"
        )));
    }
    let out_len = t_len - lags;
    let mut out = Array3::zeros((batch, out_len, channels * (lags + 1)));
    for b in 0..batch {
        for t in 0..out_len {
            for j in 0..=lags {
                for c in 0..channels {
                    out[[b, t, j * channels + c]] = x[[b, t + j, c]];
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};

    #[test]
    fn shape_arithmetic() {
        let x = Array3::<f64>::zeros((2, 250, 3));
        let y = lag_augment(x.view(), 3).unwrap();
        assert_eq!(y.dim(), (2, 247, 12));
    }

    #[test]
    fn zero_lags_is_identity() {
        let x = Array::from_shape_fn((2, 5, 3), |(b, t, c)| (b * 100 + t * 10 + c) as f64);
        assert_eq!(lag_augment(x.view(), 0).unwrap(), x);
    }

    #[test]
    fn single_channel_expansion() {
        let x = array![[[1.0], [2.0], [3.0], [4.0]]];
        let y = lag_augment(x.view(), 1).unwrap();
        assert_eq!(y, array![[[1.0, 2.0], [2.0, 3.0], [3.0, 4.0]]]);
    }

    #[test]
    fn too_many_lags_rejected() {
        let x = Array3::<f64>::zeros((1, 4, 2));
        assert!(matches!(lag_augment(x.view(), 4), Err(SpireError::Argument(_))));
    }

    #[test]
    fn matches_stacked_slices() {
        // Block j of the features is the slice x[:, j : j + T - L].
        let x = Array::from_shape_fn((1, 9, 2), |(_, t, c)| (t * t + 3 * c) as f64);
        let lags = 3;
        let y = lag_augment(x.view(), lags).unwrap();
        for j in 0..=lags {
            let block = y.slice(ndarray::s![.., .., j * 2..(j + 1) * 2]);
            let slice = x.slice(ndarray::s![.., j..j + 9 - lags, ..]);
            assert_eq!(block, slice);
        }
    }
}
