//! Singular value clipping.
//!
//! Every weight entry is reshaped to 2-D as out-channels x everything-else
//! (moving the output axis to the front when it is not already first) and
//! its singular values are capped at 1. Biases are untouched. Matrices
//! already inside the bound are left bit-exact.

use crate::nn::init::{ParamKind, ParamSet};
use crate::nn::svd::{clip_singular_values, MatrixMut};

const CAP: f64 = 1.0;

/// Clips all weight matrices of `set` in place.
pub fn singular_value_clip(set: &mut ParamSet) {
    for entry in &mut set.entries {
        let ParamKind::Weight { out_axis } = entry.kind else {
            continue;
        };
        let shape = entry.tensor.shape.clone();
        let rows = shape[out_axis];
        let cols = entry.tensor.numel() / rows;
        if out_axis == 0 {
            clip_singular_values(
                MatrixMut { data: &mut entry.tensor.data, rows, cols },
                CAP,
            );
        } else {
            // move the output axis to the front: pre x rows x post -> rows x (pre*post)
            let pre: usize = shape[..out_axis].iter().product();
            let post: usize = shape[out_axis + 1..].iter().product();
            let mut matrix = vec![0.0; rows * cols];
            for i in 0..pre {
                for r in 0..rows {
                    for p in 0..post {
                        matrix[r * cols + i * post + p] = entry.tensor.data[(i * rows + r) * post + p];
                    }
                }
            }
            let changed = clip_singular_values(MatrixMut { data: &mut matrix, rows, cols }, CAP);
            if changed {
                for i in 0..pre {
                    for r in 0..rows {
                        for p in 0..post {
                            entry.tensor.data[(i * rows + r) * post + p] = matrix[r * cols + i * post + p];
                        }
                    }
                }
            }
        }
    }
}

/// Largest singular value over all weight matrices, for diagnostics and
/// invariant checks.
pub fn max_weight_singular_value(set: &ParamSet) -> f64 {
    use crate::nn::svd::singular_values;
    let mut max = 0.0f64;
    for entry in &set.entries {
        let ParamKind::Weight { out_axis } = entry.kind else {
            continue;
        };
        let shape = &entry.tensor.shape;
        let rows = shape[out_axis];
        let cols = entry.tensor.numel() / rows;
        let matrix: Vec<f64> = if out_axis == 0 {
            entry.tensor.data.clone()
        } else {
            let pre: usize = shape[..out_axis].iter().product();
            let post: usize = shape[out_axis + 1..].iter().product();
            let mut m = vec![0.0; rows * cols];
            for i in 0..pre {
                for r in 0..rows {
                    for p in 0..post {
                        m[r * cols + i * post + p] = entry.tensor.data[(i * rows + r) * post + p];
                    }
                }
            }
            m
        };
        let sv = singular_values(&matrix, rows, cols);
        if let Some(&s) = sv.first() {
            max = max.max(s);
        }
    }
    max
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::svd::singular_values;
    use crate::nn::Tensor;
    use rand::Rng;

    #[test]
    fn identity_weight_unchanged_bias_untouched() {
        let mut set = ParamSet::new();
        let eye = Tensor::from_slice(vec![2, 2], &[1.0, 0.0, 0.0, 1.0]);
        set.push("w", eye.clone(), ParamKind::Weight { out_axis: 0 });
        set.push("b", Tensor::from_slice(vec![2], &[5.0, -5.0]), ParamKind::Bias);
        singular_value_clip(&mut set);
        assert_eq!(set.get("w"), &eye);
        assert_eq!(set.get("b").data, vec![5.0, -5.0]);
    }

    #[test]
    fn diagonal_clips_to_unit() {
        let mut set = ParamSet::new();
        set.push(
            "w",
            Tensor::from_slice(vec![2, 2], &[2.0, 0.0, 0.0, 0.5]),
            ParamKind::Weight { out_axis: 0 },
        );
        singular_value_clip(&mut set);
        let w = set.get("w");
        assert!((w.data[0] - 1.0).abs() < 1e-12);
        assert!((w.data[3] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn scaled_random_matrix_respects_cap_and_small_sigmas() {
        let mut rng = crate::seed::rng_from_seed(7);
        let data: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let before = singular_values(&data, 8, 8);
        let scale = 3.0 / before[0];
        let scaled: Vec<f64> = data.iter().map(|v| v * scale).collect();
        let pre = singular_values(&scaled, 8, 8);

        let mut set = ParamSet::new();
        set.push("w", Tensor::from_slice(vec![8, 8], &scaled), ParamKind::Weight { out_axis: 0 });
        singular_value_clip(&mut set);
        let after = singular_values(&set.get("w").data, 8, 8);
        assert!(after[0] <= 1.0 + 1e-6, "sigma_max {}", after[0]);
        for (b, a) in pre.iter().zip(&after) {
            if *b <= 1.0 {
                assert!((a - b).abs() < 1e-9, "small sigma not preserved: {b} -> {a}");
            }
        }
    }

    #[test]
    fn transposed_conv_axis_is_clipped() {
        // kernel [Ci, Co, 1, 1, K] with out axis 1
        let mut rng = crate::seed::rng_from_seed(9);
        let data: Vec<f64> = (0..3 * 4 * 2).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut set = ParamSet::new();
        set.push(
            "w",
            Tensor::from_slice(vec![3, 4, 1, 1, 2], &data),
            ParamKind::Weight { out_axis: 1 },
        );
        singular_value_clip(&mut set);
        assert!(max_weight_singular_value(&set) <= 1.0 + 1e-6);
    }
}
