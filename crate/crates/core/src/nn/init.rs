use super::config::{ModelConfig, TensorRole};
use super::store::{Tensor, TensorData, WeightStore};
use crate::rng::SplitMix64;

/// Deterministic float32 weights for `cfg`. Each weight tensor draws from its
/// own splitmix64 stream seeded with `seed ^ fnv1a64(name)`; values are
/// uniform in `+-1/sqrt(fan_in)`, computed in f64 then rounded.
pub fn init_weights(cfg: &ModelConfig, seed: u64) -> WeightStore {
    let mut store = WeightStore::new(cfg.config_hash(), Some(seed));
    for spec in cfg.tensor_specs() {
        let n = spec.numel();
        let values: Vec<f32> = match spec.role {
            TensorRole::Weight { fan_in } => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut rng = SplitMix64::for_name(seed, &spec.name);
                (0..n).map(|_| rng.uniform(-bound, bound) as f32).collect()
            }
            TensorRole::Bias | TensorRole::NormShift | TensorRole::RunningMean => vec![0.0; n],
            TensorRole::NormScale | TensorRole::RunningVar => vec![1.0; n],
        };
        let tensor = Tensor::new(spec.shape, TensorData::F32(values)).expect("spec shape matches");
        store.insert(spec.name, tensor).expect("spec names are unique");
    }
    store
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_store() {
        let cfg = ModelConfig::default();
        assert_eq!(init_weights(&cfg, 5), init_weights(&cfg, 5));
        assert_ne!(init_weights(&cfg, 5), init_weights(&cfg, 6));
    }

    #[test]
    fn biases_and_norms() {
        let store = init_weights(&ModelConfig::default(), 3);
        for (name, t) in &store.tensors {
            let v = t.data.to_f64();
            if name.ends_with(".bias") || name.ends_with(".running_mean") {
                assert!(v.iter().all(|&x| x == 0.0), "{name}");
            }
            if name.ends_with(".running_var") || (name.contains("bn") && name.ends_with(".weight")) {
                assert!(v.iter().all(|&x| x == 1.0), "{name}");
            }
        }
    }

    #[test]
    fn conv_weights_within_fan_in_bound() {
        let store = init_weights(&ModelConfig::default(), 9);
        let t = store.get("backbone.stage2.conv1.weight").unwrap();
        assert_eq!(t.shape, vec![32, 32, 3, 3]);
        let bound = 1.0 / (288f64).sqrt();
        let v = t.data.to_f64();
        assert!(v.iter().all(|x| x.abs() <= bound));
        // Not degenerate: the draws spread over most of the interval.
        let max = v.iter().cloned().fold(0.0, f64::max);
        assert!(max > 0.9 * bound);
    }

    #[test]
    fn stream_matches_independent_recomputation() {
        let cfg = ModelConfig::default();
        let store = init_weights(&cfg, 42);
        let name = "head.dir.weight";
        let bound = 1.0 / (384f64).sqrt();
        let mut state = 42u64 ^ crate::rng::fnv1a64(name);
        let first = store.get(name).unwrap().data.to_f64();
        for &got in first.iter().take(8) {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            let u = (z >> 11) as f64 / (1u64 << 53) as f64;
            assert_eq!(got, f64::from((-bound + 2.0 * bound * u) as f32));
        }
    }
}
