use mlrvar::var_process::seeded_rng;
use mlrvar::linalg::{self, Mat, Vector};
use rand::Rng;
use rand_distr::StandardNormal;
fn main() {
    let mut rng = seeded_rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..20000 {
        let (m, n) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let r = rng.random_range(0..=m.min(n));
        let a = Mat::from_fn(m, r, |_, _| rng.sample(StandardNormal)) * Mat::from_fn(r, n, |_, _| rng.sample(StandardNormal));
        let a = if rng.random_bool(0.3) { a.map(|x: f64| (x * 2.0).round() / 2.0) } else { a };
        let s = linalg::svd(&a).unwrap();
        let rec = &s.u * Mat::from_diagonal(&Vector::from_vec(s.singular_values.clone())) * s.v.transpose();
        let e = (rec - &a).norm() / (1.0 + a.norm());
        let o = linalg::orthonormality_error(&s.u).max(linalg::orthonormality_error(&s.v));
        worst = worst.max(e);
        if e > 1e-12 || o > 1e-10 { println!("{m}x{n} r{r} err {e} ortho {o}"); }
    }
    println!("worst {worst}");
}
