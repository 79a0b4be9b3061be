use otsing_core::sdot::{optimize_offsets, stats_from_pool};
use otsing_core::{BaseMeasure, PointCloud, PotentialOffsets, SeededRng, SolverConfig};

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

fn measures() -> Vec<BaseMeasure> {
    vec![
        BaseMeasure::uniform_box(vec![-2.0, 0.0, 1.0], vec![2.0, 0.5, 3.0]).unwrap(),
        BaseMeasure::gaussian(vec![1.0, -1.0, 0.0], 0.7).unwrap(),
    ]
}

#[test]
fn shorter_streams_are_prefixes() {
    let rng = SeededRng::new(42).derive_label("prefix");
    for m in measures() {
        let long = m.sample_flat(&rng, 10_000).unwrap();
        for count in [1, 7, 4095, 4096, 4097, 8193] {
            let short = m.sample_flat(&rng, count).unwrap();
            assert_eq!(short[..], long[..short.len()], "count {count}");
        }
    }
}

#[test]
fn samples_do_not_depend_on_thread_count() {
    let rng = SeededRng::new(9);
    for m in measures() {
        let one = pool(1).install(|| m.sample_flat(&rng, 20_000).unwrap());
        let four = pool(4).install(|| m.sample_flat(&rng, 20_000).unwrap());
        assert_eq!(one, four);
    }
}

#[test]
fn cell_statistics_do_not_depend_on_thread_count() {
    let m = BaseMeasure::uniform_box(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
    let pts = m.sample(&SeededRng::new(1), 9).unwrap();
    let cloud = PointCloud::from_rows(&pts, vec![1.0 / 9.0; 9]).unwrap();
    let h = PotentialOffsets::new((0..9).map(|k| 0.05 * k as f64 - 0.2).collect());
    let samples = m.sample_flat(&SeededRng::new(2), 30_000).unwrap();
    let one = pool(1).install(|| stats_from_pool(&cloud, &h, &samples).unwrap());
    let three = pool(3).install(|| stats_from_pool(&cloud, &h, &samples).unwrap());
    assert_eq!(one.sample_count, three.sample_count);
    // bitwise, including the centroid sums
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&one.centroid), bits(&three.centroid));
}

#[test]
fn solve_is_reproducible_across_thread_counts() {
    let m = BaseMeasure::uniform_box(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
    let pts = m.sample(&SeededRng::new(4), 5).unwrap();
    let cloud = PointCloud::from_rows(&pts, vec![0.2; 5]).unwrap();
    let cfg = SolverConfig {
        mc_samples: 20_000,
        max_iters: 300,
        ..SolverConfig::default()
    };
    let rng = SeededRng::new(8);
    let (h1, r1) = pool(1).install(|| optimize_offsets(&cloud, &m, &rng, &cfg).unwrap());
    let (h2, r2) = pool(4).install(|| optimize_offsets(&cloud, &m, &rng, &cfg).unwrap());
    assert_eq!(h1, h2);
    assert_eq!(r1, r2);
}
