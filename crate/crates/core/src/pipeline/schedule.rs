use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Floor of the cosine phase as a fraction of the base rate.
pub const LR_MIN_FRACTION: f64 = 0.002;

/// Per-epoch learning rate: linear warmup reaching `lr_base` at epoch
/// `warmup_epochs − 1`, then cosine decay from `lr_base` toward
/// `lr_min = 0.002 · lr_base`.
pub fn lr_at(epoch: usize, lr_base: f64, epochs: usize, warmup_epochs: usize) -> Result<f64> {
    if epoch >= epochs {
        return Err(Error::Range(format!("epoch {epoch} outside 0..{epochs}")));
    }
    if warmup_epochs >= epochs {
        return Err(Error::Config(format!(
            "warmup_epochs {warmup_epochs} must be below epochs {epochs}"
        )));
    }
    if epoch < warmup_epochs {
        return Ok(lr_base * (epoch + 1) as f64 / warmup_epochs as f64);
    }
    let lr_min = LR_MIN_FRACTION * lr_base;
    let t = (epoch - warmup_epochs) as f64 / (epochs - warmup_epochs) as f64;
    Ok(lr_min + 0.5 * (lr_base - lr_min) * (1.0 + (PI * t).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_endpoint() {
        assert_eq!(lr_at(9, 0.1, 200, 10).unwrap(), 0.1);
        assert!((lr_at(0, 0.1, 200, 10).unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn cosine_start_and_midpoint() {
        assert!((lr_at(10, 0.1, 200, 10).unwrap() - 0.1).abs() < 1e-15);
        let mid = lr_at(10 + 95, 0.1, 200, 10).unwrap();
        assert!((mid - (0.1 + 0.0002) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn final_epoch_near_floor() {
        let (base, epochs, warm) = (0.1, 1000, 10);
        let last = lr_at(epochs - 1, base, epochs, warm).unwrap();
        let floor = LR_MIN_FRACTION * base;
        let step = lr_at(epochs - 2, base, epochs, warm).unwrap() - last;
        assert!(last >= floor && last - floor <= step.max(1e-12));
    }

    #[test]
    fn out_of_range() {
        assert!(matches!(lr_at(200, 0.1, 200, 10), Err(Error::Range(_))));
    }

    #[test]
    fn continuous_and_monotone_after_warmup() {
        let lrs: Vec<f64> = (0..120).map(|e| lr_at(e, 0.05, 120, 7).unwrap()).collect();
        assert_eq!(lrs[6], 0.05);
        assert_eq!(lrs[7], 0.05);
        assert!(lrs[7..].windows(2).all(|w| w[1] <= w[0]));
        assert!(lrs[..7].windows(2).all(|w| w[1] > w[0]));
    }
}
