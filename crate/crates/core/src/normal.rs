//! Standard normal CDF and quantile.

use statrs::distribution::{ContinuousCDF, Normal};

fn standard() -> Normal {
    Normal::standard()
}

/// Standard normal cumulative distribution function.
pub fn cdf(z: f64) -> f64 {
    standard().cdf(z)
}

/// Standard normal quantile function. `p` must lie in (0, 1).
pub fn quantile(p: f64) -> f64 {
    standard().inverse_cdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values from high-precision tables of the normal distribution.
    const CDF_TABLE: [(f64, f64); 6] = [
        (0.0, 0.5),
        (1.0, 0.841_344_746_068_542_9),
        (-1.0, 0.158_655_253_931_457_05),
        (1.959_963_984_540_054, 0.975),
        (-3.0, 0.001_349_898_031_630_094_6),
        (2.5, 0.993_790_334_674_223_8),
    ];

    #[test]
    fn cdf_error_below_1e7() {
        for (z, p) in CDF_TABLE {
            assert!((cdf(z) - p).abs() < 1e-7, "cdf({z}) = {} vs {p}", cdf(z));
        }
    }

    #[test]
    fn median_maps_to_half() {
        assert_eq!(cdf(0.0), 0.5);
    }

    #[test]
    fn quantile_inverts_cdf() {
        assert!((quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-7);
        for z in [-2.5, -1.0, 0.3, 1.7] {
            assert!((quantile(cdf(z)) - z).abs() < 1e-7);
        }
    }
}
