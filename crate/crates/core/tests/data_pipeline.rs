use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use traitnet::data::synthetic::{generate_synthetic, write_synthetic};
use traitnet::data::{
    augment, compute_stats, normalize, AugmentConfig, CropSetting, Dataset, Sample, Sampler, SamplerStrategy,
    TraitVector,
};
use traitnet::tensor::Tensor;

const DRAWS: usize = 100_000;

fn traits() -> TraitVector {
    TraitVector {
        fresh_weight: 4.0,
        dry_weight: 0.2,
        height: 3.0,
        diameter: 6.0,
        leaf_area: 20.0,
    }
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn two_single_value_images_normalize_to_plus_minus_one() {
    let make = |id: &str, v: f64| {
        Sample::new(id, Tensor::full([3, 2, 2], v), Tensor::full([1, 2, 2], v), traits(), "a").unwrap()
    };
    let (a, b) = (make("a", 0.0), make("b", 2.0));
    let stats = compute_stats(&[&a, &b]).unwrap();
    assert_eq!(stats.mean, [1.0; 4]);
    assert_eq!(stats.std, [1.0; 4]);
    assert!(normalize(&a, &stats).rgb.data().iter().all(|&v| v == -1.0));
    assert!(normalize(&b, &stats).depth.data().iter().all(|&v| v == 1.0));
}

#[test]
fn single_image_is_the_only_draw_for_every_strategy() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for strategy in [
        SamplerStrategy::Random,
        SamplerStrategy::FreshweightBins { bins: 10 },
        SamplerStrategy::VarietyStratified,
    ] {
        let s = Sampler::new(strategy, &[3.0], &strings(&["x"])).unwrap();
        assert!(s.epoch(&mut rng).iter().all(|&i| i == 0));
        assert!((0..100).all(|_| s.draw(&mut rng) == 0));
    }
}

#[test]
fn bins_of_one_and_nine_are_drawn_equally() {
    // one heavy plant alone in the upper bin, nine light plants in the lower
    let mut fw = vec![1.0; 9];
    fw.push(10.0);
    let vars = vec!["a".to_string(); 10];
    let s = Sampler::new(SamplerStrategy::FreshweightBins { bins: 2 }, &fw, &vars).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let hits = (0..DRAWS).filter(|_| s.draw(&mut rng) == 9).count();
    let freq = hits as f64 / DRAWS as f64;
    assert!((freq - 0.5).abs() < 0.01, "lone-bin frequency {freq}");
}

#[test]
fn variety_stratified_draws_each_variety_equally() {
    let vars = strings(&["a", "a", "a", "a", "a", "a", "b", "b", "c", "d"]);
    let s = Sampler::new(SamplerStrategy::VarietyStratified, &[1.0; 10], &vars).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for _ in 0..DRAWS {
        *counts.entry(vars[s.draw(&mut rng)].as_str()).or_default() += 1;
    }
    for (v, c) in counts {
        let freq = c as f64 / DRAWS as f64;
        assert!((freq - 0.25).abs() < 0.01, "variety {v}: {freq}");
    }
}

#[test]
fn freshweight_bin_frequencies_match_definition() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let fw: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).powi(2) % 50.0).collect();
    let vars = vec!["a".to_string(); fw.len()];
    let s = Sampler::new(SamplerStrategy::FreshweightBins { bins: 10 }, &fw, &vars).unwrap();
    let mut counts = vec![0usize; fw.len()];
    for _ in 0..DRAWS {
        counts[s.draw(&mut r)] += 1;
    }
    for (i, &c) in counts.iter().enumerate() {
        let freq = c as f64 / DRAWS as f64;
        assert!((freq - s.probabilities()[i]).abs() < 0.01);
    }
}

#[test]
fn augmentation_is_reproducible_per_seed() {
    let data = generate_synthetic(3, 32, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let sample = &data.plants[0].sample;
    let cfg = AugmentConfig::default();
    let run = |seed| augment(sample, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
    assert_eq!(run(11), run(11));
    assert_ne!(run(11), run(12));
}

fn tree_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in ["", "rgb", "depth"] {
        for entry in fs::read_dir(dir.join(sub)).unwrap() {
            let p = entry.unwrap().path();
            if p.is_file() {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn synthetic_dataset_bytes_are_reproducible_and_load_back() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let manifest = write_synthetic(a.path(), 16, 32, 99).unwrap();
    write_synthetic(b.path(), 16, 32, 99).unwrap();
    let bytes = tree_bytes(a.path());
    assert_eq!(bytes.len(), 33);
    assert_eq!(bytes, tree_bytes(b.path()));
    assert_eq!(manifest.test_ids.len(), 2);

    let loaded = Dataset::load(Dataset::manifest_path(a.path()), CropSetting::Auto).unwrap();
    let fresh = generate_synthetic(16, 32, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    assert_eq!(loaded.samples, fresh.samples());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synthetic_traits_are_valid_for_all_seeds(seed in any::<u64>(), size in 24usize..72) {
        let data = generate_synthetic(6, size, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for p in &data.plants {
            prop_assert!(p.sample.traits.validate().is_ok());
            prop_assert!(p.pixel_count > 0);
            let k2 = p.sample.traits.dry_weight / p.sample.traits.fresh_weight;
            prop_assert!((0.03 - 1e-12..=0.08 + 1e-12).contains(&k2), "k2 = {}", k2);
        }
    }
}
