//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::time::Instant;

use hmc_kappa::integrator::{leapfrog_trajectory, mode_energy_error, mode_propagate, PhasePoint};
use hmc_kappa::linalg::{haar_orthogonal, SpdMatrix};
use hmc_kappa::precond::{
    block_kappas, forward_kl_diagonal, precondition_covariance, reverse_kl_diagonal, BlockModel,
    LossMode, LowRankObjective,
};
use hmc_kappa::quadrature::adaptive_simpson;
use hmc_kappa::randmat::{asymptotic_kappa, mp_density, mp_support, preconditioned_kappa_law_check, wishart_sample};
use hmc_kappa::rng::seeded;
use hmc_kappa::sampler::{alpha_for_acceptance, run_chain_exact_gaussian, step_size_exact};
use hmc_kappa::spectra::{decay_assumption_ratio, kappa_spd, random_spectrum};
use hmc_kappa::{ChainConfig, GeneratorParams, IntegrationTimeLaw, PreconditionerSpec, Spectrum};
use hmc_kappa_lab::experiments::{
    burnin_config, burnin_plan, inference_config, kappa_inference, lowrank_config, lowrank_train,
    table1, table1_config, wishart_config, wishart_kappa,
};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// N = 2048 generator spectrum satisfying the decay assumption (ratio ≈ 0.033).
fn wide_spectrum() -> Result<Spectrum, String> {
    let params = GeneratorParams::new(1.0, 1.5, 0.25, 2.0).map_err(|e| e.to_string())?;
    let s = random_spectrum(2048, &params, &mut seeded(2048)).map_err(|e| e.to_string())?;
    let ratio = decay_assumption_ratio(&s);
    if ratio >= 0.05 {
        return Err(format!("decay ratio {ratio:.4} not below 0.05"));
    }
    Ok(s)
}

fn chain_at(s: &Spectrum, abar: f64, proposals: usize, seed: u64) -> Result<(f64, hmc_kappa::ChainResult), String> {
    let law = IntegrationTimeLaw::default_for(s.sigma_max()).map_err(|e| e.to_string())?;
    let alpha = alpha_for_acceptance(abar).map_err(|e| e.to_string())?;
    let cfg = ChainConfig {
        step_size: step_size_exact(s, alpha, &law),
        law,
        n_proposals: proposals,
        seed,
        record_samples: false,
    };
    let res = run_chain_exact_gaussian(s, &cfg).map_err(|e| e.to_string())?;
    Ok((alpha, res))
}

fn small_dimension_note() -> String {
    let flat = Spectrum::flat(256, 1.0).unwrap();
    let params = GeneratorParams::new(1.0, 1.5, 0.25, 2.0).unwrap();
    let gen = random_spectrum(256, &params, &mut seeded(256)).unwrap();
    format!(
        "decay ratio is bounded below by N^(-1/2) = {:.4} at N=256 (flat {:.4}, generator {:.4}); criteria 1-2 run at N=2048",
        256f64.powf(-0.5),
        decay_assumption_ratio(&flat),
        decay_assumption_ratio(&gen)
    )
}

fn criterion_1() -> Check {
    let s = wide_spectrum()?;
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, abar) in [0.8, 0.95].into_iter().enumerate() {
        let (_, res) = chain_at(&s, abar, 20_000, 10 + i as u64)?;
        ok &= (res.accept_rate - abar).abs() <= 0.02;
        parts.push(format!("target {abar}: {:.4}", res.accept_rate));
    }
    ensure(ok, format!("N=2048, 2e4 proposals, {}", parts.join(", ")))
}

fn criterion_2() -> Check {
    let s = wide_spectrum()?;
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, abar) in [0.8, 0.95].into_iter().enumerate() {
        let (alpha, res) = chain_at(&s, abar, 1_000_000, 20 + i as u64)?;
        let m = res.delta_moments();
        let mean_err = rel(m.mean, alpha / 2.0);
        let var_err = rel(m.variance, alpha);
        ok &= mean_err < 0.05 && var_err < 0.10 && m.skewness.abs() < 0.1;
        parts.push(format!(
            "target {abar}: mean err {:.2}%, var err {:.2}%, skew {:.3}",
            100.0 * mean_err,
            100.0 * var_err,
            m.skewness
        ));
    }
    ensure(ok, format!("N=2048, 1e6 proposals, {}", parts.join("; ")))
}

fn criterion_3() -> Check {
    let mut config = inference_config(false, 3);
    config.dims = vec![256];
    let rec = kappa_inference(&config).map_err(|e| e.to_string())?;
    let spectra = rec.get_f64("spectra").unwrap_or(0.0);
    let r2 = rec.summary["r2_inferred_known"]["raw"]["r2"].as_f64().unwrap_or(f64::NAN);
    let log_r2 = rec.summary["r2_inferred_known"]["log"]["r2"].as_f64().unwrap_or(f64::NAN);
    let bias = rec.get_f64("mean_bias_plugin").unwrap_or(f64::NAN);
    ensure(
        spectra >= 100.0 && r2 >= 0.95 && bias > 0.0,
        format!(
            "{spectra} spectra at N=256, R2 known-sigma1 {r2:.4} (log {log_r2:.4}), plug-in mean bias {bias:+.3}, failures {}",
            rec.failures.len()
        ),
    )
}

fn criterion_4() -> Check {
    let rec = wishart_kappa(&wishart_config(&[64], &[4.0], 200, 4)).map_err(|e| e.to_string())?;
    let cell = &rec.summary["cells"][0];
    let mean = cell["mean_kappa"].as_f64().unwrap_or(f64::NAN);
    let limit = asymptotic_kappa(64, 4.0).map_err(|e| e.to_string())?;
    let mut ok = rel(mean, limit) < 0.05 && cell["draws"] == Value::from(200);
    let mut worst: f64 = 0.0;
    for omega in [2.0, 4.0, 16.0] {
        let (a, b) = mp_support(omega);
        let second = adaptive_simpson(|x| x * x * mp_density(x, omega), a, b, 1e-12, 50);
        worst = worst.max((second - (1.0 + 1.0 / omega)).abs());
    }
    ok &= worst < 1e-6;
    ensure(
        ok,
        format!("mean kappa {mean:.4} vs {limit:.4} ({:.2}%), MP second-moment error {worst:.1e}", 100.0 * rel(mean, limit)),
    )
}

fn criterion_5() -> Check {
    let target = wishart_sample(16, 20, 5)
        .and_then(|w| w.into_spd())
        .map_err(|e| e.to_string())?;
    let check = preconditioned_kappa_law_check(&target, 128, 200, 5).map_err(|e| e.to_string())?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (a, b) = (mean(&check.preconditioned), mean(&check.inverse_wishart));
    let k0 = kappa_spd(&target).map_err(|e| e.to_string())?;
    ensure(
        rel(a, b) < 0.05,
        format!("target kappa {k0:.2}; preconditioned mean {a:.4} vs inverse-Wishart mean {b:.4} ({:.2}%)", 100.0 * rel(a, b)),
    )
}

fn criterion_6() -> Check {
    let rec = burnin_plan(&burnin_config(10.0, 50, 40.0)).map_err(|e| e.to_string())?;
    let ratio = rec.get_f64("s_star_ratio").unwrap_or(f64::NAN);
    let speedup = rec.get_f64("speedup").unwrap_or(f64::NAN);
    ensure(
        (3.5..=4.5).contains(&ratio) && (2.8..=3.5).contains(&speedup),
        format!("S/N {ratio:.3}, speedup {speedup:.3}"),
    )
}

fn criterion_7() -> Check {
    let mut rng = seeded(7);
    let mut worst: f64 = 0.0;
    let mut order_ok = true;
    for _ in 0..1000 {
        let b = rng.random_range(1..6);
        let rhos: Vec<f64> = (0..b).map(|_| rng.random_range(0.01..0.99)).collect();
        let model = BlockModel::new(rhos.clone(), None).map_err(|e| e.to_string())?;
        let k = block_kappas(&model).map_err(|e| e.to_string())?;
        let c = model.covariance().map_err(|e| e.to_string())?;
        let brute = |d: Vec<f64>| -> Result<f64, String> {
            precondition_covariance(&c, &PreconditionerSpec::Diagonal { d })
                .and_then(|p| kappa_spd(&p))
                .map_err(|e| e.to_string())
        };
        let fwd = brute(forward_kl_diagonal(&c))?;
        let rev = brute(reverse_kl_diagonal(&c).map_err(|e| e.to_string())?)?;
        let opt = brute(rhos.iter().flat_map(|r| [(1.0 + r).sqrt(); 2]).collect())?;
        worst = worst.max(rel(k.fwd, fwd)).max(rel(k.rev, rev)).max(rel(k.opt, opt));
        order_ok &= k.opt <= k.fwd * (1.0 + 1e-12) && k.fwd <= k.rev * (1.0 + 1e-12);
    }
    ensure(
        worst < 1e-9 && order_ok,
        format!("1000 random rho vectors, worst relative error {worst:.1e}, ordering opt <= fwd <= rev {order_ok}"),
    )
}

fn criterion_8() -> Check {
    let rec = table1(&table1_config(100, 200, 8)).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    if let Some(Value::Object(ens)) = rec.summary.get("ensembles") {
        for (label, v) in ens {
            parts.push(format!(
                "{label} {} (expected {})",
                v["majority"].as_str().unwrap_or("?"),
                v["expected"].as_str().unwrap_or("?")
            ));
        }
    }
    let ok = rec.summary.get("all_winners_match") == Some(&Value::Bool(true));
    ensure(ok, format!("N=100, 200 trials each: {}", parts.join(", ")))
}

fn criterion_9() -> Check {
    let few = lowrank_train(&lowrank_config(128, 0.08, 20, 9)).map_err(|e| e.to_string())?;
    let many = lowrank_train(&lowrank_config(128, 0.31, 20, 9)).map_err(|e| e.to_string())?;
    let r_few = few.get_f64("reduction").unwrap_or(f64::NAN);
    let r_many = many.get_f64("reduction").unwrap_or(f64::NAN);
    ensure(
        r_few >= 2.0 && r_many < 1.3,
        format!(
            "{} large eigenvalues: reduction {r_few:.3}x; {} large eigenvalues: reduction {r_many:.3}x",
            few.summary["large_eigenvalues"], many.summary["large_eigenvalues"]
        ),
    )
}

fn criterion_10() -> Check {
    let mut rng = seeded(10);

    let mut worst_prop: f64 = 0.0;
    let mut worst_delta: f64 = 0.0;
    for case in 0..1000 {
        let sigma = 10f64.powf(rng.random_range(-1.0..1.0));
        let h = 2.0 * sigma * rng.random_range(0.01..0.9);
        let ell = if case % 10 == 0 { rng.random_range(1000..=10_000) } else { rng.random_range(1..1000) };
        let x0 = sigma * rng.sample::<f64, _>(StandardNormal);
        let xi0: f64 = rng.sample(StandardNormal);
        let (xc, pc) = mode_propagate(sigma, h, ell, x0, xi0).map_err(|e| e.to_string())?;
        let start = PhasePoint::new(vec![x0], vec![xi0]).map_err(|e| e.to_string())?;
        let inv = 1.0 / (sigma * sigma);
        let end = leapfrog_trajectory(&start, h, ell, |x, g| g[0] = -x[0] * inv);
        let scale = 1.0 + x0.abs() / sigma + xi0.abs();
        worst_prop = worst_prop.max(((xc - end.x[0]) / sigma).abs().max((pc - end.xi[0]).abs()) / scale);

        let energy = |x: f64, p: f64| 0.5 * (x / sigma).powi(2) + 0.5 * p * p;
        let direct = energy(xc, pc) - energy(x0, xi0);
        let formula = mode_energy_error(sigma, h, ell, x0, xi0).map_err(|e| e.to_string())?;
        worst_delta = worst_delta.max((direct - formula).abs() / (1.0 + energy(x0, xi0)));
    }

    let mut worst_conj: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..=32);
        let mut normal = |n: usize| DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a = normal(n) / (n as f64).sqrt() + DMatrix::identity(n, n) * 2.0;
        let b = normal(n) / (n as f64).sqrt() + DMatrix::identity(n, n) * 2.0;
        let c = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
        let u = haar_orthogonal(n, &mut rng);
        let k = |m: DMatrix<f64>| -> Result<f64, String> {
            SpdMatrix::new_symmetrized(m).and_then(|s| kappa_spd(&s)).map_err(|e| e.to_string())
        };
        let kc = k(c.clone())?;
        worst_conj = worst_conj.max(rel(k(&u * &c * u.transpose())?, kc));
        let left = k(&a * &b * b.transpose() * a.transpose())?;
        let right = k(b.transpose() * a.transpose() * &a * &b)?;
        worst_conj = worst_conj.max(rel(left, right));
    }

    let mut worst_grad: f64 = 0.0;
    for trial in 0..20 {
        let n = rng.random_range(2..=8);
        let kk = rng.random_range(1..=n);
        let a = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let target = SpdMatrix::new_symmetrized(&a * a.transpose() + DMatrix::identity(n, n) * 0.1)
            .map_err(|e| e.to_string())?;
        let obj = LowRankObjective::new(&target, LossMode::ClosedForm, trial).map_err(|e| e.to_string())?;
        let log_d: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
        let u = DMatrix::<f64>::from_fn(n, kk, |_, _| 0.3 * rng.sample::<f64, _>(StandardNormal));
        let eval = obj.evaluate(&log_d, &u).map_err(|e| e.to_string())?;
        let eps = 1e-6;
        let value = |d: &[f64], u: &DMatrix<f64>| obj.value(d, u).map_err(|e| e.to_string());
        let mut compare = |analytic: f64, numeric: f64| {
            worst_grad = worst_grad.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3));
        };
        for i in 0..n {
            let (mut up, mut dn) = (log_d.clone(), log_d.clone());
            up[i] += eps;
            dn[i] -= eps;
            compare(eval.grad_log_d[i], (value(&up, &u)? - value(&dn, &u)?) / (2.0 * eps));
        }
        for i in 0..n {
            for j in 0..kk {
                let (mut up, mut dn) = (u.clone(), u.clone());
                up[(i, j)] += eps;
                dn[(i, j)] -= eps;
                compare(eval.grad_u[(i, j)], (value(&log_d, &up)? - value(&log_d, &dn)?) / (2.0 * eps));
            }
        }
    }

    ensure(
        worst_prop < 1e-8 && worst_delta < 1e-10 && worst_conj < 1e-9 && worst_grad < 1e-5,
        format!(
            "closed form vs leapfrog {worst_prop:.1e}, delta formula {worst_delta:.1e}, conjugation invariance {worst_conj:.1e}, gradient {worst_grad:.1e}"
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("acceptance-rate targeting", criterion_1),
        ("energy error limit law", criterion_2),
        ("kappa inference", criterion_3),
        ("inverse-Wishart asymptotics", criterion_4),
        ("preconditioned kappa law", criterion_5),
        ("burn-in planner", criterion_6),
        ("block closed forms", criterion_7),
        ("diagonal preconditioner winners", criterion_8),
        ("low-rank preconditioning", criterion_9),
        ("oracle equivalences", criterion_10),
    ];
    println!("INFO criteria 1-2: {}", small_dimension_note());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
