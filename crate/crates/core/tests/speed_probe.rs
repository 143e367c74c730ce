use nwc_core::codec::Architecture;
use nwc_core::matrix::Matrix;
use nwc_core::rng::SplitMix64;
use nwc_core::train::{evaluate_levels, train_codec, TrainConfig};

#[test]
#[ignore]
fn level_separation_smoke() {
    let mut rng = SplitMix64::new(1);
    let data = Matrix::from_fn(50_000, 16, |_, _| rng.student_t4_unit() as f32);
    let heldout = Matrix::from_fn(2_000, 16, |_, _| rng.student_t4_unit() as f32);
    let arch = Architecture::standard(4);
    let mut config = TrainConfig::multi_level(&[0.29, 0.83, 10.0, 20.0]);
    config.batch_size = 64;
    config.steps = 3000;
    config.seed = 99;
    let t0 = std::time::Instant::now();
    let out = train_codec(&data, &arch, &config).unwrap();
    println!("trained in {:.1}s", t0.elapsed().as_secs_f64());
    let tail: Vec<&str> = out.log_csv.lines().rev().take(3).collect();
    println!("last log lines: {tail:#?}");
    for e in evaluate_levels(&out.model, &heldout).unwrap() {
        println!(
            "level {}: rate {:.3} bits/chunk  mse {:.5}",
            e.level, e.mean_rate_bits, e.mean_mse
        );
    }
}
