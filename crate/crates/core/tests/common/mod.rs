#![allow(dead_code)]

use jointdrive::data::{generate_samples, GenConfig, Sample};
use jointdrive::model::ModelConfig;

pub fn samples(seed: u64, scenarios: u64) -> Vec<Sample> {
    let cfg = GenConfig {
        seed,
        scenarios,
        ..GenConfig::default()
    };
    generate_samples(&cfg, &ModelConfig::tiny().grid).unwrap()
}

use jointdrive::model::{AssembleMode, Model};
use jointdrive::train::{prepare, Prepared};
use jointdrive_numerics::ParamStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The sample with the most other vehicles among a small generated set.
pub fn busy_sample() -> Sample {
    samples(0, 1).into_iter().max_by_key(|s| s.others.len()).unwrap()
}

pub fn prepared(sample: &Sample, cfg: &ModelConfig) -> Prepared {
    prepare(sample, cfg, AssembleMode::Inference, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
}

/// Zero-initialised output layers get random values so that every path
/// carries signal (needed for non-trivial gradient and sensitivity checks).
pub fn wake_zero_layers(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let p = store.get_mut(id);
        if p.name.contains("rebuild") || p.name.contains("mlp2") {
            for v in p.value.data_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
    }
}

pub fn tiny(variant: jointdrive::model::Variant) -> ModelConfig {
    ModelConfig {
        variant,
        ..ModelConfig::tiny()
    }
}

pub fn built(variant: jointdrive::model::Variant) -> (ParamStore, Model) {
    Model::build(tiny(variant), 0).unwrap()
}
