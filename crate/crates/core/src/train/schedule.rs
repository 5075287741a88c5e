use crate::error::{Error, Result};

/// Polynomial decay: `base_lr * (1 - iteration / total)^power`.
pub fn poly_lr(base_lr: f64, iteration: usize, total: usize, power: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::InvalidArgument("poly_lr needs a positive iteration budget".into()));
    }
    if iteration > total {
        return Err(Error::InvalidArgument(format!("iteration {iteration} beyond budget {total}")));
    }
    Ok(base_lr * (1.0 - iteration as f64 / total as f64).powf(power))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints_and_midpoint() {
        assert_eq!(poly_lr(1e-4, 0, 100, 0.9).unwrap(), 1e-4);
        assert_eq!(poly_lr(1e-4, 100, 100, 0.9).unwrap(), 0.0);
        let mid = poly_lr(1.0, 50, 100, 0.9).unwrap();
        assert!((mid - 0.535887).abs() < 1e-6);
        assert!((mid - 0.5f64.powf(0.9)).abs() < 1e-15);
        assert!(poly_lr(1e-4, 0, 0, 0.9).is_err());
        assert!(poly_lr(1e-4, 5, 4, 0.9).is_err());
    }

    proptest! {
        #[test]
        fn strictly_decreasing_inside(total in 2usize..500, power in 0.1f64..3.0) {
            let lrs: Vec<f64> = (0..=total).map(|i| poly_lr(1e-4, i, total, power).unwrap()).collect();
            for pair in lrs.windows(2) {
                prop_assert!(pair[1] < pair[0]);
            }
        }
    }
}
