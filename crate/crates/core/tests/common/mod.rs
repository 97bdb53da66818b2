//! Exact-rational transcription of one optimizer step on a one-dimensional,
//! two-particle instance. Shared by the oracle and acceptance suites.

use num::{BigRational, Signed, ToPrimitive, Zero};

use mreo::config::BetaSchedule;
use mreo::optimizer::StepDraws;
use mreo::problems::testbed;
use mreo::{AlgoConfig, Ensemble, Execution, GainForm, Optimizer};

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(f64::MIN_POSITIVE)
}

type Q = BigRational;
type QMat = Vec<Vec<Q>>;

fn q(v: f64) -> Q {
    BigRational::from_float(v).expect("finite")
}

fn qi(v: i64) -> Q {
    BigRational::from_integer(v.into())
}

fn mul(a: &QMat, b: &QMat) -> QMat {
    let (r, k, c) = (a.len(), b.len(), b[0].len());
    (0..r)
        .map(|i| {
            (0..c)
                .map(|j| (0..k).fold(Q::zero(), |acc, l| acc + &a[i][l] * &b[l][j]))
                .collect()
        })
        .collect()
}

fn transpose(a: &QMat) -> QMat {
    (0..a[0].len()).map(|j| a.iter().map(|row| row[j].clone()).collect()).collect()
}

fn zip(a: &QMat, b: &QMat, f: impl Fn(&Q, &Q) -> Q) -> QMat {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| f(x, y)).collect())
        .collect()
}

fn scale(a: &QMat, s: &Q) -> QMat {
    a.iter().map(|r| r.iter().map(|v| v * s).collect()).collect()
}

fn row_means(a: &QMat) -> QMat {
    let n = qi(a[0].len() as i64);
    a.iter()
        .map(|r| {
            let m = r.iter().fold(Q::zero(), |acc, v| acc + v) / &n;
            vec![m; r.len()]
        })
        .collect()
}

fn inverse_2x2(m: &QMat) -> QMat {
    let det = &m[0][0] * &m[1][1] - &m[0][1] * &m[1][0];
    assert!(!det.is_zero());
    vec![
        vec![&m[1][1] / &det, -&m[0][1] / &det],
        vec![-&m[1][0] / &det, &m[0][0] / &det],
    ]
}

/// One-dimensional, two-particle state fed to the transcription.
#[derive(Clone)]
struct Small {
    x: Vec<f64>,
    f: Vec<f64>,
    f_hat: f64,
    partners: Vec<usize>,
}

fn innovations(s: &Small) -> QMat {
    let n = s.x.len();
    vec![
        (0..n).map(|j| q(s.f_hat) - q(s.f[j])).collect(),
        (0..n).map(|j| q(s.x[s.partners[j]]) - q(s.x[j])).collect(),
    ]
}

struct Params {
    alpha: f64,
    rho: f64,
    rho_c: f64,
    tau: f64,
    tau_prev: f64,
    beta: f64,
}

/// `(G, corrections)` straight from the formula, in exact arithmetic.
fn oracle_gain(cur: &Small, prev: Option<&Small>, form: GainForm, p: &Params) -> (QMat, QMat) {
    let size = qi(cur.x.len() as i64);
    let x: QMat = vec![cur.x.iter().map(|v| q(*v)).collect()];
    let inn = innovations(cur);
    let (tau, tau_p) = (q(p.tau), q(p.tau_prev));

    let (xp, f, fp, df) = match form {
        GainForm::Ensemble => {
            let f = scale(&inn, &qi(-1));
            let fp = row_means(&f);
            let mut df = vec![vec![Q::zero(); cur.x.len()]; 2];
            for v in df[0].iter_mut() {
                *v = q(cur.f_hat) * (&tau - &tau_p);
            }
            (x.clone(), f, fp, df)
        }
        GainForm::Lagged => {
            let prev = prev.unwrap_or(cur);
            let xp: QMat = vec![prev.x.iter().map(|v| q(*v)).collect()];
            let fp = innovations(prev);
            let df = zip(&inn, &fp, |a, b| a - b);
            (xp, inn.clone(), fp, df)
        }
    };
    let weighted = zip(
        &zip(&scale(&transpose(&f), &tau), &scale(&transpose(&fp), &tau_p), |a, b| a - b),
        &scale(&transpose(&df), &tau),
        |a, b| a - b,
    );
    let xc = zip(&x, &row_means(&x), |a, b| a - b);
    let first = mul(&xc, &weighted);
    let drift = zip(&scale(&row_means(&x), &tau), &scale(&row_means(&xp), &tau_p), |a, b| a - b);
    let fc = zip(&f, &row_means(&f), |a, b| a - b);
    let second = mul(&drift, &transpose(&fc));
    let cross = scale(&zip(&first, &second, |a, b| a + b), &(qi(1) / &size));

    let ic = zip(&inn, &row_means(&inn), |a, b| a - b);
    let s = scale(&mul(&ic, &transpose(&ic)), &(qi(1) / (&size - qi(1))));
    let alpha = q(p.alpha);
    let noise = vec![
        vec![q(p.rho) * q(p.rho), Q::zero()],
        vec![Q::zero(), q(p.rho_c) * q(p.rho_c)],
    ];
    let c = zip(&scale(&s, &alpha), &scale(&noise, &(qi(1) - &alpha)), |a, b| a + b);
    let g = mul(&cross, &inverse_2x2(&c));
    let d = scale(&mul(&g, &inn), &q(p.beta));
    (g, d)
}

pub fn quad() -> testbed::Testbed {
    testbed::from_fn("quad", 1, vec![-4.0], vec![4.0], |x| (x[0] - 0.5).powi(2))
}

pub fn small_config(form: GainForm) -> AlgoConfig {
    AlgoConfig {
        alpha: 0.8,
        rho: Some(0.5),
        rho_c: Some(vec![0.25]),
        beta_schedule: BetaSchedule::Exponential,
        beta_max: 2.0,
        beta_kappa: Some(2),
        gain_form: form,
        execution: Execution::Sequential,
        ..AlgoConfig::default().with_run(2, 2, 1)
    }
}

fn assert_q_close(got: f64, want: &Q, what: &str) {
    let w = want.to_f64().unwrap();
    let diff = (q(got) - want).abs().to_f64().unwrap();
    assert!(
        diff <= 1e-12 * w.abs().max(1e-300),
        "{what}: got {got:e}, oracle {w:e}"
    );
}

pub fn check_two_steps(form: GainForm) {
    let problem = quad();
    let opt = Optimizer::new(&problem, small_config(form)).unwrap();
    let (mut state, _) = opt
        .initialize_with(Ensemble::from_columns(&[vec![0.0], vec![2.0]]).unwrap())
        .unwrap();

    let mut prev: Option<Small> = None;
    for (i, sigma2) in [(1usize, vec![1, 0]), (2, vec![0, 1])] {
        let cur = Small {
            x: state.ensemble.matrix().iter().copied().collect(),
            f: state.costs.values().to_vec(),
            f_hat: state.extremal.best_cost,
            partners: vec![1, 0],
        };
        let params = Params {
            alpha: 0.8,
            rho: 0.5,
            rho_c: 0.25,
            tau: state.clock.tau_at(i),
            tau_prev: state.clock.tau_at(i - 1),
            beta: opt.config().beta(i),
        };
        assert_eq!(params.beta, 2.0);
        let (g, d) = oracle_gain(&cur, prev.as_ref(), form, &params);

        let draws = StepDraws {
            prediction: None,
            partners: Some(cur.partners.clone()),
            sigma2: sigma2.clone(),
        };
        let report = opt.step_with(&mut state, &draws).unwrap();

        for c in 0..2 {
            assert_q_close(report.gain.matrix()[(0, c)], &g[0][c], &format!("{form:?} step {i} G[{c}]"));
        }
        for j in 0..2 {
            let cand = q(cur.x[j]) + &d[0][sigma2[j]];
            assert_q_close(report.candidate.matrix()[(0, j)], &cand, &format!("{form:?} step {i} candidate {j}"));
            let cand = cand.to_f64().unwrap();
            let cand_cost = (cand - 0.5).powi(2);
            let keep = if cand_cost <= cur.f[j] { cand } else { cur.x[j] };
            assert!(rel_close(state.ensemble.matrix()[(0, j)], keep, 1e-12));
        }
        prev = Some(cur);
    }
}

