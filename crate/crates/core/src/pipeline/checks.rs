//! Numeric invariant suite behind `glis losses-check`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::losses::{conf_loss, text_loss, total_loss, LossWeights, TokenDistribution};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn row(name: &str, passed: bool, detail: String) -> CheckRow {
    CheckRow {
        name: name.to_string(),
        passed,
        detail,
    }
}

fn sample_point(rng: &mut ChaCha8Rng, n: usize) -> (Vec<u8>, Vec<f64>) {
    let y = (0..n).map(|_| rng.gen_range(0..=1u8)).collect();
    let o = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
    (y, o)
}

/// Worst relative error between the analytic gradient of `conf_loss` and
/// central differences over `points` random points.
pub fn gradient_check(rng: &mut ChaCha8Rng, points: usize, h: f64, lambda_conf: f64) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..points {
        let n = rng.gen_range(1..=6);
        let (y, o) = sample_point(rng, n);
        let (_, grad) = conf_loss(&y, &o, lambda_conf).expect("interior point");
        for k in 0..n {
            let mut plus = o.clone();
            let mut minus = o.clone();
            plus[k] += h;
            minus[k] -= h;
            let fp = conf_loss(&y, &plus, lambda_conf).expect("interior point").0;
            let fm = conf_loss(&y, &minus, lambda_conf).expect("interior point").0;
            let numeric = (fp - fm) / (2.0 * h);
            let rel = (numeric - grad[k]).abs() / grad[k].abs().max(1e-12);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Smallest second difference of `conf_loss` along single coordinates.
pub fn convexity_check(rng: &mut ChaCha8Rng, points: usize, h: f64, lambda_conf: f64) -> f64 {
    let mut least = f64::INFINITY;
    for _ in 0..points {
        let n = rng.gen_range(1..=6);
        let (y, o) = sample_point(rng, n);
        let f0 = conf_loss(&y, &o, lambda_conf).expect("interior point").0;
        for k in 0..n {
            let mut plus = o.clone();
            let mut minus = o.clone();
            plus[k] += h;
            minus[k] -= h;
            let fp = conf_loss(&y, &plus, lambda_conf).expect("interior point").0;
            let fm = conf_loss(&y, &minus, lambda_conf).expect("interior point").0;
            least = least.min(fp - 2.0 * f0 + fm);
        }
    }
    least
}

/// Largest superposition residual of `total_loss` in any one component.
pub fn superposition_check(rng: &mut ChaCha8Rng, points: usize, w: &LossWeights) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..points {
        let base: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.0..5.0));
        let (a, b) = (rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0));
        for k in 0..4 {
            let with = |x: f64| {
                let mut c = base;
                c[k] = x;
                total_loss(c[0], c[1], c[2], c[3], w)
            };
            // f(a + b) - f(a) - f(b) + f(0) vanishes for affine f.
            let residual = with(a + b) - with(a) - with(b) + with(0.0);
            worst = worst.max(residual.abs());
        }
    }
    worst
}

/// Runs the loss invariant suite; every row must pass.
pub fn run_loss_checks(seed: u64, w: &LossWeights) -> Vec<CheckRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();

    let grad = gradient_check(&mut rng, 50, 1e-6, w.lambda_conf);
    rows.push(row(
        "conf_loss gradient vs central differences",
        grad <= 1e-5,
        format!("max relative error {grad:.3e} (limit 1e-5)"),
    ));

    let convex = convexity_check(&mut rng, 50, 1e-4, w.lambda_conf);
    rows.push(row(
        "conf_loss convex per component",
        convex >= 0.0,
        format!("min second difference {convex:.3e}"),
    ));

    let mut text_ok = true;
    for _ in 0..50 {
        let n = rng.gen_range(1..=8);
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(1e-3..=1.0)).collect();
        let all_one = p.iter().all(|&x| x == 1.0);
        let v = text_loss(&TokenDistribution::new(p).expect("valid probabilities"));
        text_ok &= v >= 0.0 && ((v == 0.0) == all_one);
    }
    let ones = text_loss(&TokenDistribution::new(vec![1.0; 4]).expect("valid probabilities"));
    text_ok &= ones == 0.0;
    rows.push(row(
        "text_loss nonnegative, zero iff all ones",
        text_ok,
        format!("all-ones value {ones}"),
    ));

    let sup = superposition_check(&mut rng, 50, w);
    rows.push(row(
        "total_loss superposition",
        sup <= 1e-12,
        format!("max residual {sup:.3e} (limit 1e-12)"),
    ));

    let unit = total_loss(1.0, 1.0, 1.0, 1.0, w);
    let expected = w.lambda1 + w.lambda2 + w.lambda3 + w.lambda4;
    rows.push(row(
        "total_loss of unit components",
        unit == expected,
        format!("{unit} (expected {expected})"),
    ));
    rows
}

/// Plain-text pass/fail table.
pub fn format_table(rows: &[CheckRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for r in rows {
        let mark = if r.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("{mark}  {:<width$}  {}\n", r.name, r.detail));
    }
    out
}
