use mlrvar::mlr::*;
use mlrvar::regression::*;
use mlrvar::shorr::*;
use mlrvar::tensor3::hosvd_truncated;
use mlrvar::var_process::*;
fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args[1].parse().unwrap();
    let p: usize = args[2].parse().unwrap();
    let r: usize = args[3].parse().unwrap();
    let t: usize = args[4].parse().unwrap();
    let reps: usize = args[5].parse().unwrap();
    let ngrid: usize = args[6].parse().unwrap();
    let sp: [usize; 3] = [args[7].parse().unwrap(), args[8].parse().unwrap(), args[9].parse().unwrap()];
    let dgp = make_dgp(&DgpSpec::SparseFactor { n, p, ranks: [r, r, r], sparsity: sp }, 1).unwrap();
    let m = dgp.var_model().unwrap();
    let (mut e_mlr, mut e_spec, mut e_var, mut e_best) = (0.0, 0.0, 0.0, 0.0);
    let s = std::time::Instant::now();
    for rep in 0..reps {
        let ts = simulate(m, t, 500, 100 + rep as u64).unwrap();
        let d = build_design(&ts, p).unwrap();
        let nn = initial_estimate(&d, [r, r, r], &InitStrategy::Nn(None)).unwrap();
        let mlr = fit_mlr(&d, [r, r, r], &MlrOptions::default()).unwrap();
        let u0 = hosvd_truncated(&nn, [r, r, r]).unwrap();
        let l1: Vec<f64> = u0.factors.iter().map(mlrvar::linalg::l1_norm).collect();
        let maxprod = (l1[0] * l1[1]).max(l1[0] * l1[2]).max(l1[1] * l1[2]);
        let lams: Vec<f64> = (0..ngrid).map(|k| {
            let tau = 1e-3 * (300f64).powf(k as f64 / (ngrid - 1) as f64);
            2.0 * 4.0 * tau / maxprod
        }).collect();
        let fits = fit_shorr_path(&d, [r, r, r], &lams, &nn, &ShorrOptions::default());
        let te = d.t_eff() as f64;
        let mut best = (f64::INFINITY, 0.0, f64::INFINITY, 0.0, f64::INFINITY);
        for f in fits.iter().flatten() {
            let rss = d.rss(&f.coeff);
            let err = f.coeff.sub(m.coeff()).unwrap().frobenius_norm().powi(2);
            let df = f.nonzeros() as f64;
            let b1 = (rss / (te * n as f64)).ln() + df * te.ln() / te;
            let b2 = n as f64 * (rss / (te * n as f64)).ln() + df * te.ln() / te;
            if b1 < best.0 { best.0 = b1; best.1 = err; }
            if b2 < best.2 { best.2 = b2; best.3 = err; }
            best.4 = best.4.min(err);
        }
        e_mlr += mlr.coeff.sub(m.coeff()).unwrap().frobenius_norm().powi(2);
        e_spec += best.1; e_var += best.3; e_best += best.4;
    }
    let k = reps as f64;
    println!("{:?} mlr {:.4} shorr_spec {:.4} shorr_varbic {:.4} oracle {:.4}", s.elapsed(), e_mlr / k, e_spec / k, e_var / k, e_best / k);
}
