//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::f64::consts::PI;
use std::fs;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tikhonov_gamma::fem::{rate_study, EllipticProblem};
use tikhonov_gamma::forward::{
    make_quadrature_family, DomainSpec, IntegralOperator, Kernel, OperatorFamily, OperatorHandle,
};
use tikhonov_gamma::gamma::{
    alpha_zero_study, eps_minimizer_chain, equi_coercivity_probe, estimate_gamma_limits, inf_convergence_study,
    random_samples, scaling_invariance_check, CauchyCriterion, ChainMode, LambdaSchedule, ScalingTolerances,
};
use tikhonov_gamma::solve::{
    grad_check, projected_gradient, solve_linear_quadratic, SolveConfig, SolveStatus,
};
use tikhonov_gamma::tikhonov::{AlphaSchedule, ApproxSequence, NoiseSchedule, Penalty, TikhonovProblem};
use tikhonov_gamma::{space, Grid, GridFunction, NormTag};

const LEVELS: [usize; 5] = [9, 17, 33, 65, 129];
const M_REF: usize = 2049;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn gaussian_sequence(m_ref: usize) -> ApproxSequence {
    let family = make_quadrature_family(&Kernel::gaussian(0.2).unwrap(), &LEVELS, m_ref).unwrap();
    let xt = GridFunction::full_from_fn(m_ref, |s| (PI * s).sin()).unwrap();
    let y = family.reference().apply(&xt).unwrap();
    ApproxSequence::new(
        family,
        y,
        AlphaSchedule::Offset {
            alpha: 0.1,
            a: 1.0,
            beta: 1.0,
        },
        NoiseSchedule::Power { c: 1.0, gamma: 1.0 },
        2.0,
        Penalty::HalfSqL2,
    )
    .unwrap()
}

fn fem_rate() -> Outcome {
    let start = Instant::now();
    let r = rate_study(&EllipticProblem::sin_pi(1.0), &[7, 15, 31, 63, 127]).unwrap();
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: (-2.2..=-1.8).contains(&r.slope) && secs < 5.0,
        detail: format!("slope {:.4} (want [-2.2, -1.8]), {secs:.2}s (want < 5s)", r.slope),
    }
}

fn infimal_property() -> Outcome {
    let start = Instant::now();
    let seq = gaussian_sequence(M_REF);
    let target = seq.target_problem().unwrap();
    let r = inf_convergence_study(&target, &seq, &LEVELS, &SolveConfig::default(), 1e-6).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let gaps: Vec<String> = r.gaps.iter().map(|g| format!("{g:.3e}")).collect();
    Outcome {
        pass: r.verdict == Some(true) && secs < 10.0,
        detail: format!(
            "gaps [{}] (final want < 1e-6), trend ok {}, {secs:.2}s (want < 10s)",
            gaps.join(", "),
            r.trend_ok
        ),
    }
}

fn eps_chain() -> Outcome {
    let seq = gaussian_sequence(M_REF);
    let eps: Vec<f64> = (1..=LEVELS.len()).map(|j| 1.0 / j as f64).collect();
    let r = eps_minimizer_chain(
        &seq,
        &eps,
        &LEVELS,
        &SolveConfig::default(),
        ChainMode::Converged,
        CauchyCriterion { tail: 3, tol: 0.05 },
        1e-4,
    )
    .unwrap();
    let gap = r.cluster.as_ref().map_or(f64::NAN, |c| c.limit_gap);
    Outcome {
        pass: r.verdict,
        detail: format!(
            "certified {}, tail spread {:.3e}, cluster found {}, limit gap {gap:.3e} (want < 1e-4)",
            r.certified.iter().all(|&c| c),
            r.tail_spread,
            r.cluster.is_some()
        ),
    }
}

fn equi_coercivity() -> Outcome {
    let seq = gaussian_sequence(M_REF);
    let samples = random_samples(Grid::full(M_REF).unwrap(), 1000, 3.0, 2024).unwrap();
    let p = equi_coercivity_probe(&seq, &LEVELS, &samples, &[0.1, 1.0, 10.0], None).unwrap();
    let violations: usize = p.checks.iter().map(|c| c.violations).sum();
    let inside: usize = p.checks.iter().map(|c| c.in_sublevel).sum();
    Outcome {
        pass: p.verdict && violations == 0 && p.sample_count >= 1000,
        detail: format!(
            "{} samples x {} levels x 3 thresholds, {inside} in sublevel sets, {violations} violations",
            p.sample_count,
            LEVELS.len()
        ),
    }
}

fn alpha_zero() -> Outcome {
    let levels = [32, 64, 128, 256, 512];
    let m = 257;
    let op = OperatorHandle::whole_space(IntegralOperator::new(Kernel::gaussian(0.2).unwrap(), m).unwrap());
    let family = OperatorFamily::exact(op, &levels).unwrap();
    let xt = GridFunction::full_from_fn(m, |s| (PI * s).sin()).unwrap();
    let y = family.reference().apply(&xt).unwrap();
    let seq = ApproxSequence::new(
        family,
        y,
        AlphaSchedule::Power { a: 1.0, beta: 0.5 },
        NoiseSchedule::Power { c: 1.0, gamma: 1.0 },
        2.0,
        Penalty::HalfSqL2,
    )
    .unwrap();
    let r = alpha_zero_study(&seq, &levels, &SolveConfig::default(), 1e-3).unwrap();
    let dist = r.distances.last().copied().unwrap_or(f64::NAN);

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("diverging.cfg");
    fs::write(
        &cfg,
        "[study]\nkind = alpha-zero\n[problem]\noperator = exact\nreference_m = 65\n[schedule]\nlevels = 8,16,32,64\nalpha = power(1, 4)\nnoise = power(1, 1)\n",
    )
    .unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_tikhonov-gamma"))
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out.csv"))
        .status()
        .unwrap();
    let refused = status.code() == Some(3);
    Outcome {
        pass: r.ratios_vanish && r.verdict == Some(true) && refused,
        detail: format!(
            "ratios vanish {}, ||x_512 - x_dagger|| = {dist:.3e} (want < 1e-3), diverging schedule exit {:?} (want 3)",
            r.ratios_vanish,
            status.code()
        ),
    }
}

fn gamma_estimator() -> Outcome {
    let nodes: Vec<f64> = (0..4096).map(|i| 2.0 * PI * i as f64 / 4095.0).collect();
    let spacing = nodes[1] - nodes[0];
    let radii = [0.4, 0.2, 0.1, 0.05];
    let window = 512;
    let mut worst_osc = 0.0_f64;
    for x in [1.0, 2.0, 3.0, 4.0, 5.0] {
        let e = estimate_gamma_limits(&|j, y| (j as f64 * y).sin(), &nodes, x, &radii, window, 0.05).unwrap();
        worst_osc = worst_osc.max((e.value_lower + 1.0).abs());
    }
    let f = |y: f64| (y - 3.0).powi(2) + y.cos();
    // Largest change of f over one small-radius ball: the grid tolerance.
    let tolerance = |x: f64| {
        nodes
            .iter()
            .filter(|y| (*y - x).abs() < radii[3])
            .map(|&y| (f(y) - f(x)).abs())
            .fold(0.0_f64, f64::max)
    };
    let mut worst_const = 0.0_f64;
    let mut worst_unif = f64::NEG_INFINITY;
    for x in [0.5, 1.7, 3.1, 4.4] {
        let c = estimate_gamma_limits(&|_, y| f(y), &nodes, x, &radii, window, 0.05).unwrap();
        worst_const = worst_const.max((c.value_lower - f(x)).abs() - tolerance(x));
        let u = estimate_gamma_limits(&|j, y| f(y) + 1.0 / j as f64, &nodes, x, &radii, window, 0.05).unwrap();
        worst_unif = worst_unif.max((u.value_lower - f(x)).abs() - 1.0 / window as f64 - tolerance(x));
    }
    Outcome {
        pass: worst_osc < 0.05 && worst_const <= 0.0 && worst_unif <= 0.0,
        detail: format!(
            "oscillating worst |est + 1| = {worst_osc:.3e} (want < 0.05); constant excess over grid tol {worst_const:.3e}; uniform excess over 1/J + grid tol {worst_unif:.3e}; spacing {spacing:.2e}"
        ),
    }
}

fn scaling() -> Outcome {
    let seq = gaussian_sequence(M_REF);
    let r = scaling_invariance_check(
        &seq,
        LambdaSchedule::Offset {
            lambda: 2.0,
            a: 1.0,
            beta: 1.0,
        },
        &LEVELS,
        &SolveConfig::default(),
        ScalingTolerances::default(),
    )
    .unwrap();
    let worst_id = r.identity_errors.iter().copied().fold(0.0_f64, f64::max);
    let worst_arg = r.argmin_distances.iter().copied().fold(0.0_f64, f64::max);
    Outcome {
        pass: r.verdict,
        detail: format!(
            "identity rel err {worst_id:.2e} (want <= 1e-12), argmin distance {worst_arg:.2e} (want <= 1e-8), limit rel err {:.2e} (want <= 1e-8)",
            r.limit_error
        ),
    }
}

fn solver_hygiene() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = SolveConfig::default();
    let mut worst_grad = 0.0_f64;
    let mut worst_agree = 0.0_f64;
    let mut lq_count = 0;
    let mut monotone = true;
    let mut statuses_ok = true;
    for k in 0..20 {
        let m = rng.random_range(9..=65);
        let sigma = rng.random_range(0.1..0.5);
        let op = OperatorHandle::whole_space(IntegralOperator::new(Kernel::gaussian(sigma).unwrap(), m).unwrap());
        let y = GridFunction::full((0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let x = GridFunction::full((0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let alpha = rng.random_range(0.05..1.0);
        let (p, penalty) = match k % 3 {
            0 => (2.0, Penalty::HalfSqL2),
            1 => (1.5, Penalty::power_norm(1.5, NormTag::L2).unwrap()),
            _ => (3.0, Penalty::power_norm(2.5, NormTag::L2).unwrap()),
        };
        let problem = TikhonovProblem::new(op.clone(), y.clone(), alpha, p, penalty).unwrap();
        worst_grad = worst_grad.max(grad_check(&problem, &x, 1e-6).unwrap());

        let lq = TikhonovProblem::new(op.clone(), y.clone(), alpha, 2.0, Penalty::HalfSqL2).unwrap();
        let closed = solve_linear_quadratic(op.matrix().unwrap(), op.input_grid(), &y, alpha, None).unwrap();
        let pg = projected_gradient(&lq, &DomainSpec::WholeSpace, &cfg, &GridFunction::zeros(op.input_grid())).unwrap();
        statuses_ok &= pg.status == SolveStatus::Converged;
        worst_agree = worst_agree.max(space::l2_distance(&pg.minimizer, &closed.minimizer).unwrap());
        lq_count += 1;
        monotone &= pg.history.windows(2).all(|w| w[1] <= w[0]);

        let ball = DomainSpec::norm_ball(0.3, NormTag::L2).unwrap();
        let constrained = TikhonovProblem::new(op.with_domain(ball), y, alpha, p, problem.penalty().clone()).unwrap();
        let r = projected_gradient(&constrained, &ball, &cfg, &GridFunction::zeros(op.input_grid())).unwrap();
        monotone &= r.history.windows(2).all(|w| w[1] <= w[0]);
    }
    Outcome {
        pass: worst_grad < 1e-5 && worst_agree < 1e-6 && monotone && statuses_ok,
        detail: format!(
            "worst gradient rel err {worst_grad:.2e} (want < 1e-5), worst PG vs normal equations {worst_agree:.2e} over {lq_count} instances (want < 1e-6), monotone descent {monotone}"
        ),
    }
}

fn determinism() -> Outcome {
    let configs = [
        "[study]\nkind = fem-rate\n",
        "[study]\nkind = integral-demo\n[problem]\nreference_m = 129\n[schedule]\nnoise = random(0.1, 1)\n",
        "[study]\nkind = inf-study\n[problem]\nreference_m = 257\n",
        "[study]\nkind = alpha-zero\n[problem]\noperator = exact\nreference_m = 65\n",
        "[study]\nkind = gamma-estimate\nexpected = -1\n",
        "[study]\nkind = coercivity\nsamples = 200\n[problem]\nreference_m = 129\n[schedule]\nnoise = random(1, 1)\n",
        "[study]\nkind = eps-chain\nchain_mode = early-stop\n[problem]\nreference_m = 129\n[output]\nformat = json-lines\n",
    ];
    let dir = tempfile::tempdir().unwrap();
    let mut mismatches = Vec::new();
    for (k, text) in configs.iter().enumerate() {
        let cfg = dir.path().join(format!("study{k}.cfg"));
        fs::write(&cfg, text).unwrap();
        let run = |tag: &str| {
            let out = dir.path().join(format!("study{k}-{tag}.out"));
            Command::new(env!("CARGO_BIN_EXE_tikhonov-gamma"))
                .args(["run", "--seed", "17", "--config"])
                .arg(&cfg)
                .arg("--out")
                .arg(&out)
                .status()
                .unwrap();
            fs::read(&out).unwrap()
        };
        let (a, b) = (run("a"), run("b"));
        if a != b || a.is_empty() {
            mismatches.push(k);
        }
    }
    Outcome {
        pass: mismatches.is_empty(),
        detail: format!("{} study configs run twice, mismatching: {mismatches:?}", configs.len()),
    }
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("FEM convergence rate", fem_rate),
        ("infimal property", infimal_property),
        ("epsilon-minimizer chain", eps_chain),
        ("equi-coercivity", equi_coercivity),
        ("vanishing alpha limit", alpha_zero),
        ("Gamma-limit estimator", gamma_estimator),
        ("positive scaling", scaling),
        ("solver hygiene", solver_hygiene),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {} {name}: {verdict} ({}; {:.1}s)",
            k + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(k + 1);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
