use mlrvar::regression::*;
use mlrvar::selection::*;
use mlrvar::mlr::default_nn_lambda;
use mlrvar::var_process::*;
fn main() {
    let reps: usize = std::env::args().nth(1).unwrap().parse().unwrap();
    let mults: Vec<f64> = std::env::args().nth(2).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    for diag in [vec![2.0, 2.0, 2.0], vec![4.0, 3.0, 2.0], vec![1.0, 1.0, 1.0], vec![2.0, 1.0, 0.5]] {
        let mut ok = vec![0; mults.len() + 1];
        for rep in 0..reps {
            let dgp = make_dgp(&DgpSpec::superdiagonal(10, 5, diag.clone()), 1000 + rep as u64).unwrap();
            let m = dgp.var_model().unwrap();
            let ts = simulate(m, 400, 500, rep as u64).unwrap();
            let d = build_design(&ts, 5).unwrap();
            let l = default_nn_lambda(&d).unwrap();
            for (i, mu) in mults.iter().enumerate() {
                let f = fit_nn(&d, l * mu, &ConvexOptions { tol: 1e-6, ..Default::default() }).unwrap();
                let c = select_ranks(&f.coeff, RidgeParam::Auto { t: 400 }).unwrap();
                if c.ranks == [3, 3, 3] { ok[i] += 1 }
                if rep == 0 && i == 0 {
                    for mode in mlrvar::tensor3::Mode::ALL {
                        let s = mlrvar::linalg::singular_values(&f.coeff.matricize(mode)).unwrap();
                        println!("  sv {:?}", &s[..5].iter().map(|x| (x * 1000.0).round() / 1000.0).collect::<Vec<_>>());
                    }
                }
            }
            let o = fit_ols(&d).unwrap();
            if select_ranks(&o, RidgeParam::Auto { t: 400 }).unwrap().ranks == [3, 3, 3] { ok[mults.len()] += 1 }
        }
        println!("{diag:?} {:?} (last = ols)", ok.iter().map(|k| *k as f64 / reps as f64).collect::<Vec<_>>());
    }
}
