mod common;

use common::{mean_sd, neg_hessian};
use mcem::em::run_em;
use mcem::inference::{information_decomposition_check, louis_information_exact};
use mcem::mcem::*;
use mcem::mcml::{mcml_maximize, mcml_surface};
use mcem::models::{CensoredData, CensoredModel};
use mcem::optim::{maximize, FnObjective};
use mcem::parallel::{run_replicates, ExecMode};
use mcem::saem::{run_saem, SaemConfig, SaemVariant};
use mcem::samplers::Direct;
use mcem::{Model, StreamKey, Theta, Trajectory};
use nalgebra::DVector;

fn fixture() -> CensoredModel {
    CensoredModel::new(CensoredData::fixture())
}

/// Observed log-likelihood written out independently of the model code:
/// normal log-densities of the observed values plus `m` log survival terms.
fn loglik(data: &CensoredData, mu: f64, sigma: f64) -> f64 {
    let obs: f64 = data.observed.iter().map(|z| -sigma.ln() - 0.5 * ((z - mu) / sigma).powi(2)).sum();
    let tail = 0.5 * libm::erfc((data.c - mu) / (sigma * std::f64::consts::SQRT_2));
    obs + data.m as f64 * tail.ln()
}

/// Direct maximization over `(μ, log σ)` with a central-difference gradient.
fn direct_mle(data: &CensoredData) -> (f64, f64) {
    let f = |v: &DVector<f64>| loglik(data, v[0], v[1].exp());
    let objective = FnObjective {
        value: f,
        gradient: |v: &DVector<f64>| {
            DVector::from_fn(2, |j, _| {
                let h = 1e-6;
                let mut up = v.clone();
                up[j] += h;
                let mut dn = v.clone();
                dn[j] -= h;
                (f(&up) - f(&dn)) / (2.0 * h)
            })
        },
    };
    let res = maximize(&objective, &DVector::from_vec(vec![0.0, 0.0]), 1e-7, 200);
    assert!(res.converged, "direct maximization did not converge");
    (res.argmax[0], res.argmax[1].exp())
}

fn oracle(model: &CensoredModel) -> Theta {
    model.em_oracle(&model.theta(0.0, 1.0), 1e-13).unwrap()
}

#[test]
fn fixture_shape() {
    let data = CensoredData::fixture();
    assert_eq!(data.n(), 50);
    assert_eq!(data.m, 6);
    assert_eq!(data.observed.len(), 44);
    assert_eq!(data.c, 1.0);
    assert!(data.observed.iter().all(|&z| z <= 1.0));
}

#[test]
fn em_oracle_matches_direct_maximization() {
    let model = fixture();
    let (mu, sigma) = direct_mle(&model.data);
    let em = oracle(&model);
    assert!((em.values[0] - mu).abs() < 1e-4, "mu {} vs {mu}", em.values[0]);
    assert!((em.values[1] - sigma).abs() < 1e-4, "sigma {} vs {sigma}", em.values[1]);
}

#[test]
fn model_loglik_matches_independent_formula() {
    let model = fixture();
    for (mu, sigma) in [(0.0, 1.0), (0.3, 0.7), (-0.5, 1.6)] {
        let a = model.observed_loglik(&model.theta(mu, sigma)).unwrap();
        let b = loglik(&model.data, mu, sigma);
        assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
    }
}

#[test]
fn em_is_monotone_and_reaches_oracle() {
    let model = fixture();
    let t = run_em(&model, &model.theta(1.0, 2.0), 1e-12, 500).unwrap();
    let ll: Vec<f64> = t.records.iter().map(|r| model.observed_loglik(&r.theta).unwrap()).collect();
    assert!(ll.windows(2).all(|w| w[1] >= w[0] - 1e-10));
    assert!(t.last_theta().unwrap().max_abs_diff(&oracle(&model)) < 1e-8);
}

#[test]
fn louis_matches_finite_difference_hessian() {
    let model = fixture();
    let t = oracle(&model);
    let exact = louis_information_exact(&model, &t).unwrap().info_matrix();
    let fd = neg_hessian(|v| loglik(&model.data, v[0], v[1]), &t.values, 1e-4);
    let scale = exact.abs().max();
    for i in 0..2 {
        for j in 0..2 {
            assert!((exact[(i, j)] - fd[i][j]).abs() < 1e-3 * scale, "({i},{j}): {} vs {}", exact[(i, j)], fd[i][j]);
        }
    }
    assert!(information_decomposition_check(&model, &t).unwrap() < 1e-3);
}

#[test]
fn complete_score_matches_differences() {
    let model = fixture();
    let t = model.theta(0.0, 1.0);
    let x = vec![1.2, 1.5, 2.0, 1.1, 1.9, 3.0];
    let score = model.complete_score(&t, &x);
    let h = 1e-6;
    for j in 0..2 {
        let mut up = t.values.clone();
        up[j] += h;
        let mut dn = t.values.clone();
        dn[j] -= h;
        let fd =
            (model.complete_loglik(&t.with_values(up), &x) - model.complete_loglik(&t.with_values(dn), &x)) / (2.0 * h);
        assert!((score[j] - fd).abs() < 1e-6 * (1.0 + fd.abs()), "component {j}: {} vs {fd}", score[j]);
    }
}

#[test]
fn no_censoring_gives_mean_and_sd_in_one_step() {
    let xs = vec![-0.8, -0.1, 0.2, 0.4, 0.9];
    let model = CensoredModel::new(CensoredData::new(xs.clone(), 0, 1.0).unwrap());
    let t = model.em_oracle(&model.theta(3.0, 5.0), 1e-12).unwrap();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((t.values[0] - mean).abs() < 1e-14);
    assert!((t.values[1] - sd).abs() < 1e-14);
    // With nothing missing the complete and observed likelihoods coincide.
    let probe = model.theta(0.1, 0.9);
    let diff = model.complete_loglik(&probe, &vec![]) - model.observed_loglik(&probe).unwrap();
    let diff2 = model.complete_loglik(&t, &vec![]) - model.observed_loglik(&t).unwrap();
    assert!((diff - diff2).abs() < 1e-12);
}

#[test]
fn symmetric_data_have_zero_location_score() {
    let model = CensoredModel::new(CensoredData::new(vec![-1.5, -0.5, 0.5, 1.5], 0, 2.0).unwrap());
    let s = model.complete_score(&model.theta(0.0, 1.3), &vec![]);
    assert!(s[0].abs() < 1e-15);
}

fn engine_finals(job: impl Fn(u64) -> mcem::Result<Trajectory> + Sync + Send) -> Vec<Theta> {
    let seeds: Vec<u64> = (1..=30).collect();
    run_replicates(ExecMode::default(), &seeds, job)
        .into_iter()
        .map(|r| r.unwrap().last_theta().unwrap().clone())
        .collect()
}

fn assert_near_oracle(name: &str, finals: &[Theta], target: &Theta) {
    for j in 0..2 {
        let v: Vec<f64> = finals.iter().map(|t| t.values[j]).collect();
        let (mean, sd) = mean_sd(&v);
        assert!(sd > 0.0, "{name}: no spread");
        assert!(
            (mean - target.values[j]).abs() <= 3.0 * sd,
            "{name} component {j}: mean {mean}, sd {sd}, oracle {}",
            target.values[j]
        );
    }
}

#[test]
fn every_engine_lands_near_oracle() {
    let model = fixture();
    let target = oracle(&model);
    let t0 = model.theta(0.0, 1.0);
    let wt = WeiTannerConfig { schedule: vec![(50, 100), (20, 1000)] };
    let runs: Vec<(&str, Vec<Theta>)> = vec![
        ("wei-tanner", engine_finals(|s| run_wei_tanner(&model, &t0, &wt, &Direct, StreamKey::new(s)))),
        (
            "booth-hobert",
            engine_finals(|s| run_booth_hobert(&model, &t0, &BoothHobertConfig::default(), &Direct, StreamKey::new(s))),
        ),
        ("caffo", engine_finals(|s| run_caffo(&model, &t0, &CaffoConfig::default(), &Direct, StreamKey::new(s)))),
        (
            "chan-ledolter",
            engine_finals(|s| {
                run_chan_ledolter(&model, &t0, &ChanLedolterConfig::default(), &Direct, StreamKey::new(s))
            }),
        ),
        (
            "saem-gu-kong",
            engine_finals(|s| {
                run_saem(&model, &t0, SaemVariant::GuKong, &SaemConfig::default(), &Direct, StreamKey::new(s))
            }),
        ),
        (
            "saem-delyon",
            engine_finals(|s| {
                run_saem(&model, &t0, SaemVariant::Delyon, &SaemConfig::default(), &Direct, StreamKey::new(s))
            }),
        ),
    ];
    for (name, finals) in &runs {
        assert_near_oracle(name, finals, &target);
    }
    let seeds: Vec<u64> = (1..=30).collect();
    let mcml = run_replicates(ExecMode::default(), &seeds, |s| {
        let surface = mcml_surface(&model, &t0, 1000, &Direct, StreamKey::new(s)).unwrap();
        mcml_maximize(&surface, &t0).unwrap()
    });
    assert_near_oracle("mcml", &mcml, &target);
}
