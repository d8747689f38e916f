//! Uniform sampling of width/depth operating points during training.

use rand::Rng;

use crate::config::ModelConfig;
use crate::model::SubnetConfig;

/// Draws `w` and `d` independently and uniformly from their full ranges.
pub fn sample_subnet<R: Rng>(config: &ModelConfig, rng: &mut R) -> SubnetConfig {
    SubnetConfig {
        w: rng.gen_range(1..=config.max_width),
        d: rng.gen_range(1..=config.max_depth),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn every_cell_is_hit_roughly_uniformly() {
        let config = ModelConfig::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = vec![vec![0u32; config.max_depth]; config.max_width];
        let draws = 16_000;
        for _ in 0..draws {
            let s = sample_subnet(&config, &mut rng);
            counts[s.w - 1][s.d - 1] += 1;
        }
        let expected = draws as f64 / 16.0; // 1000 per cell
        for (wi, row) in counts.iter().enumerate() {
            for (di, &c) in row.iter().enumerate() {
                assert!(
                    (c as f64 - expected).abs() < 0.25 * expected,
                    "cell ({}, {}) count {c} far from {expected}",
                    wi + 1,
                    di + 1
                );
            }
        }
    }

    #[test]
    fn degenerate_grid_always_returns_the_only_cell() {
        let mut config = ModelConfig::desk();
        config.max_width = 1;
        config.max_depth = 1;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            assert_eq!(sample_subnet(&config, &mut rng), SubnetConfig::new(1, 1));
        }
    }
}
