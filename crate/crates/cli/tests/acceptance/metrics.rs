use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stsm_harness::MetricsReport;

use crate::{ensure, err};

fn close(got: f64, want: f64) -> bool {
    (got - want).abs() <= 1e-12
}

/// A fixed 3x3 matrix worked by hand, the perfect case and balanced random
/// guessing over eleven classes.
pub fn run() -> Result<String, String> {
    // rows are true classes: [45 3 2] [4 30 6] [1 2 7], n = 100
    // OA = 82/100
    // AA = (45/50 + 30/40 + 7/10) / 3 = 47/60
    // row sums 50 40 10, column sums 50 35 15
    // pe = (50*50 + 40*35 + 10*15) / 100^2 = 81/200
    // kappa = (41/50 - 81/200) / (1 - 81/200) = 83/119
    let fixed = MetricsReport::from_confusion(3, vec![45, 3, 2, 4, 30, 6, 1, 2, 7]).map_err(err)?;
    ensure(close(fixed.oa, 41.0 / 50.0), || format!("OA {}", fixed.oa))?;
    ensure(close(fixed.aa, 47.0 / 60.0), || format!("AA {}", fixed.aa))?;
    ensure(close(fixed.kappa, 83.0 / 119.0), || format!("kappa {}", fixed.kappa))?;

    let truth: Vec<usize> = (0..110).map(|i| i % 11).collect();
    let perfect = MetricsReport::from_predictions(&truth, &truth, 11).map_err(err)?;
    ensure(
        perfect.oa == 1.0 && perfect.aa == 1.0 && perfect.kappa == 1.0,
        || format!("perfect case gave {} {} {}", perfect.oa, perfect.aa, perfect.kappa),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let truth: Vec<usize> = (0..11_000).map(|i| i % 11).collect();
    let guess: Vec<usize> = (0..11_000).map(|_| rng.gen_range(0..11)).collect();
    let random = MetricsReport::from_predictions(&guess, &truth, 11).map_err(err)?;
    ensure(random.kappa.abs() < 0.05, || format!("random kappa {}", random.kappa))?;
    Ok(format!(
        "fixed OA {:.4} AA {:.4} kappa {:.4}; perfect 1/1/1; random kappa {:+.4}",
        fixed.oa, fixed.aa, fixed.kappa, random.kappa
    ))
}
