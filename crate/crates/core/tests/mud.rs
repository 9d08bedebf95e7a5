use std::collections::BTreeSet;

use fedmed::mud::{
    build_clients, generate_phantom, paper_scenario, partition_clients, sample_affine, shard_sizes, NoiseKind,
    NoiseLevel, PhantomSpec,
};
use fedmed::seeding::rng_from;
use proptest::prelude::*;

fn phantom(n: usize, seed: u64) -> fedmed::corpus::Corpus {
    generate_phantom(&PhantomSpec { n_volumes: n, slices_per_volume: 2, image_size: 16, seed, ..Default::default() }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shard_sizes_cover_total_and_track_proportions(total in 4usize..5000) {
        let props = [0.4, 0.3, 0.2, 0.1];
        let sizes = shard_sizes(total, &props).unwrap();
        prop_assert_eq!(sizes.iter().sum::<usize>(), total);
        for (s, p) in sizes.iter().zip(props) {
            prop_assert!(*s >= 1);
            prop_assert!((*s as f64 - p * total as f64).abs() <= 2.0);
        }
    }

    #[test]
    fn draws_stay_inside_every_level(seed in any::<u64>()) {
        let mut rng = rng_from(seed);
        for level in [NoiseLevel::NONE, NoiseLevel::SLIGHT, NoiseLevel::SEVERE] {
            let p = sample_affine(&level, &mut rng);
            prop_assert!(level.contains(&p));
        }
        prop_assert!(sample_affine(&NoiseLevel::NONE, &mut rng).is_identity());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn partition_is_a_disjoint_cover(n in 8usize..30, seed in any::<u64>()) {
        let corpus = phantom(n, 1);
        let shards = partition_clients(&corpus, &paper_scenario(NoiseKind::Slight), &mut rng_from(seed)).unwrap();
        let all: Vec<&String> = shards.iter().flat_map(|s| &s.subjects).collect();
        let set: BTreeSet<&String> = all.iter().copied().collect();
        prop_assert_eq!(all.len(), set.len());
        prop_assert_eq!(set.into_iter().cloned().collect::<Vec<_>>(), corpus.subjects());
    }
}

#[test]
fn client_datasets_are_reproducible_and_pair_matching_slices() {
    let corpus = phantom(20, 2);
    let build = |seed| build_clients(&corpus, &paper_scenario(NoiseKind::Severe), &mut rng_from(seed)).unwrap();
    let (a, b) = (build(5), build(5));
    assert_eq!(a, b);
    assert_ne!(a, build(6));
    for c in &a {
        assert_eq!(c.pairs.len(), c.clean.len());
        for (p, clean) in c.pairs.iter().zip(&c.clean) {
            assert!(p.distorted && !clean.distorted);
            assert_eq!((&p.subject_a, &p.subject_b, p.slice_index), (&clean.subject_a, &clean.subject_b, clean.slice_index));
            assert!(c.noise.contains(&p.applied_a) && c.noise.contains(&p.applied_b));
            assert_eq!(clean.img_a, *corpus.volume_a(&clean.subject_a).unwrap().slice(clean.slice_index).unwrap());
            assert_eq!(clean.img_b, *corpus.volume_b(&clean.subject_b).unwrap().slice(clean.slice_index).unwrap());
        }
    }
    let total: f64 = a.iter().map(|c| c.proportion).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn phantom_is_seeded_and_modalities_differ() {
    let spec = PhantomSpec { n_volumes: 3, slices_per_volume: 4, image_size: 16, seed: 7, ..Default::default() };
    let (x, y) = (generate_phantom(&spec).unwrap(), generate_phantom(&spec).unwrap());
    assert_eq!(x.aligned_pairs().unwrap(), y.aligned_pairs().unwrap());
    let z = generate_phantom(&PhantomSpec { seed: 8, ..spec }).unwrap();
    assert_ne!(x.aligned_pairs().unwrap(), z.aligned_pairs().unwrap());
    let pairs = x.aligned_pairs().unwrap();
    assert_eq!(pairs.len(), 12);
    assert!(pairs.iter().all(|(a, b)| a != b && a.dims() == (16, 16)));
    // slices at different depths of one volume are distinct
    let distinct: BTreeSet<Vec<u64>> = pairs[..4].iter().map(|(a, _)| a.pixels().iter().map(|v| v.to_bits()).collect()).collect();
    assert_eq!(distinct.len(), 4);
}
