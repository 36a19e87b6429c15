use std::collections::BTreeMap;

use serde_json::{json, Value};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{dyadic_grid, fmt, in_plane_ratios, ols_slope, run_parallel, Check, Clock, ExperimentConfig, Report, Table};
use crate::error::{param_err, Result};
use crate::limits::{completeness_residual, numerical_rank, sigma_k, sigma_total, RANK_TOL};
use crate::moments::{mean_expansion, mean_u, mean_vector_series, mixed_residual_grid, residual_l2_grid, PairMomentWalk};
use crate::oracle::{
    bst_simulate, exact_distribution, exact_distribution_rational, guard, martingale_check, moment_equivalence,
    recurrence_check, shift_check, Arithmetic,
};
use crate::residuals::{exact_x_covariance, Checkpoint};
use crate::rng::stream_seed;
use crate::spectral::{eigen_data, ProjectionClass};
use crate::stats::plane_basis;
use crate::urn::{simulate, UrnParams};

/// Relative tolerance for the covariance scale on the critical index.
pub const CRITICAL_SCALE_TOL: f64 = 0.15;
/// Tolerances of the exact oracle comparisons.
pub const MOMENT_TOL: f64 = 1e-10;
pub const MARTINGALE_TOL: f64 = 1e-12;
pub const LAW_TV_TOL: f64 = 1e-12;
/// Smallest acceptable p-value for the sampled-law chi-square tests.
pub const CHI_SQUARE_MIN_P: f64 = 1e-3;
/// Tolerance for the fitted phase slope of `E u_1` against `ln n`.
pub const PHASE_SLOPE_TOL: f64 = 1e-3;

/// Deterministic rate checks from exact second moments.
pub fn cmd_rate(config: &ExperimentConfig) -> Result<Report> {
    config.check_common()?;
    let clock = Clock::start(config.threads);
    let params = config.params()?;
    let m = config.m;
    let n = config.n;
    if n < 2 || config.n_limit < n {
        return param_err("rate needs 2 <= n <= nlimit");
    }
    let e = eigen_data(m)?;
    let grid = dyadic_grid((n / 256).max(2), n);
    let large: Vec<usize> = (1..=m / 2).filter(|&k| e.class(k) == ProjectionClass::Large).collect();
    let mut checks = Vec::new();
    let mut table = Table::new(&["kind", "k", "l", "n", "raw", "normalized"]);
    let mut residuals = Vec::new();
    for &k in &large {
        let rows = residual_l2_grid(&grid, m, k, config.n_limit, config.limit_model)?;
        let last = rows.last().expect("non-empty grid");
        checks.push(Check::within(
            format!("k={k} normalized residual at n={n}"),
            last.normalized,
            1.0 - config.rel_tol,
            1.0 + config.rel_tol,
        ));
        let monotone = rows.windows(2).all(|w| w[1].raw < w[0].raw);
        checks.push(Check::flag(format!("k={k} raw residual decreases in n"), monotone, "strictly decreasing on the grid"));
        for r in &rows {
            table.push(["residual_l2".into(), k.to_string(), String::new(), r.n.to_string(), fmt(r.raw), fmt(r.normalized)]);
        }
        residuals.push(json!({"k": k, "lambda": e.lambda(k), "rows": rows}));
    }

    let mut mixed = Vec::new();
    for (i, &k) in large.iter().enumerate() {
        for &l in &large[i + 1..] {
            let rows = mixed_residual_grid(&grid, m, k, l, config.n_limit)?;
            // the ratio should settle: compare its spread over the top of the grid
            let tail: Vec<f64> = rows.iter().filter(|r| r.n >= n / 16).map(|r| r.ratio()).collect();
            let hi = tail.iter().fold(f64::MIN, |a, &b| a.max(b));
            let lo = tail.iter().fold(f64::MAX, |a, &b| a.min(b));
            checks.push(Check::at_most(
                format!("k={k} l={l} mixed residual ratio spread (max/min - 1) over n in [n/16, n]"),
                hi / lo - 1.0,
                config.rel_tol,
            ));
            for r in &rows {
                table.push(["mixed_residual".into(), k.to_string(), l.to_string(), r.n.to_string(), fmt(r.measured), fmt(r.ratio())]);
            }
            mixed.push(json!({"k": k, "l": l, "rows": rows.iter().map(|r| json!({
                "n": r.n, "measured": r.measured, "bound_scale": r.bound_scale, "ratio": r.ratio()
            })).collect::<Vec<_>>()}));
        }
    }

    // Cov(Pi_{n,k}) = E|u_k - E u_k|^2 v_k v_k^*: its scale against
    // n/|2 lambda - 1|, or n log n on the critical index
    let mut scales = Vec::new();
    for k in (1..=m / 2).filter(|&k| e.class(k) != ProjectionClass::Large) {
        let critical = e.class(k) == ProjectionClass::Critical;
        let mut walk = PairMomentWalk::new(m, k, m - k)?;
        walk.advance_to(n);
        let nf = n as f64;
        let expected = if critical { nf * nf.ln() } else { nf / (2.0 * e.lambda(k) - 1.0).abs() };
        let scale = walk.centered().re / expected;
        let check = Check::at_most(
            format!("k={k} Cov(Pi) scale vs limit, relative deviation at n={n}"),
            (scale - 1.0).abs(),
            if critical { CRITICAL_SCALE_TOL } else { config.rel_tol },
        );
        // small blocks with lambda near 1/2 converge like n^(2 lambda - 1)
        checks.push(if critical { check } else { check.informational() });
        // the real covariance of X also carries E[(u - E u)^2]; reported only
        let exact = exact_x_covariance(&params, k, n, None)?;
        let ratios = in_plane_ratios(&exact, &sigma_k(m, k)?, &plane_basis(&e, k))?;
        table.push(["covariance_scale".into(), k.to_string(), String::new(), n.to_string(), String::new(), fmt(scale)]);
        scales.push(json!({"k": k, "critical": critical, "hermitian_scale": scale, "x_in_plane_ratios": ratios}));
    }

    let results = json!({
        "grid": grid,
        "n_limit": config.n_limit,
        "limit_model": config.limit_model,
        "residual_l2": residuals,
        "mixed_residuals": mixed,
        "covariance_scale": scales,
    });
    Ok(Report {
        config: config.clone(),
        results,
        checks,
        diagnostics: clock.finish(0, 0, vec!["deterministic: no simulation".into()]),
        table,
    })
}

/// Ranks of the limit covariance over a range of m.
pub fn cmd_rank(config: &ExperimentConfig) -> Result<Report> {
    let clock = Clock::start(config.threads);
    if config.m_min < 7 || config.m_max < config.m_min {
        return param_err("rank needs 7 <= m-min <= m-max");
    }
    let mut checks = Vec::new();
    let mut table = Table::new(&["m", "rank", "expected", "idempotence_residual", "completeness_residual"]);
    let mut rows = Vec::new();
    let mut mismatches = Vec::new();
    for m in config.m_min..=config.m_max {
        let sigma = sigma_total(m)?;
        let rank = numerical_rank(&sigma, RANK_TOL)?;
        let expected = if m % 6 == 0 { 2 } else { m - 1 };
        let idem = if m % 6 == 0 { Some(sigma.idempotence_residual(m as f64)) } else { None };
        let completeness = completeness_residual(m)?;
        if rank != expected {
            mismatches.push(m);
        }
        if let Some(r) = idem {
            checks.push(Check::at_most(format!("m={m} idempotence residual of m Sigma"), r, 1e-10));
        }
        checks.push(Check::at_most(format!("m={m} completeness residual"), completeness, 1e-12));
        table.push([
            m.to_string(),
            rank.to_string(),
            expected.to_string(),
            idem.map(fmt).unwrap_or_default(),
            fmt(completeness),
        ]);
        rows.push(json!({"m": m, "rank": rank, "expected": expected, "idempotence_residual": idem}));
    }
    checks.insert(
        0,
        Check::flag(
            format!("rank = m-1, or 2 when 6 | m, for m in {}..={}", config.m_min, config.m_max),
            mismatches.is_empty(),
            "no mismatches",
        ),
    );
    let listing = if config.m >= 7 {
        let ev = sigma_total(config.m)?.eigenvalues()?;
        if config.m.is_multiple_of(6) {
            let mf = config.m as f64;
            let (top, rest) = ev.split_at(ev.len() - 2);
            let dev = rest.iter().map(|x| (x - 1.0 / mf).abs()).fold(0.0, f64::max);
            let tail = top.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
            checks.push(Check::at_most(format!("m={} two eigenvalues equal 1/m", config.m), dev, 1e-12));
            checks.push(Check::at_most(format!("m={} remaining eigenvalues vanish", config.m), tail, 1e-12));
        }
        Some(json!({"m": config.m, "eigenvalues": ev}))
    } else {
        None
    };
    let results = json!({"rows": rows, "mismatches": mismatches, "eigenvalues": listing, "tolerance": RANK_TOL});
    Ok(Report {
        config: config.clone(),
        results,
        checks,
        diagnostics: clock.finish(0, 0, vec!["deterministic: no simulation".into()]),
        table,
    })
}

fn chi_square_p(samples: &[Vec<u64>], expected: &BTreeMap<Vec<u64>, f64>) -> (f64, f64, usize) {
    let mut observed: BTreeMap<&Vec<u64>, u64> = BTreeMap::new();
    for s in samples {
        *observed.entry(s).or_default() += 1;
    }
    let total = samples.len() as f64;
    let mut stat = 0.0;
    let mut outside = 0usize;
    for (key, &obs) in &observed {
        if !expected.contains_key(*key) {
            outside += obs as usize;
        }
    }
    for (key, &p) in expected {
        let o = observed.get(key).copied().unwrap_or(0) as f64;
        let ex = p * total;
        stat += (o - ex).powi(2) / ex;
    }
    let df = (expected.len() - 1).max(1) as f64;
    let p = 1.0 - ChiSquared::new(df).expect("positive df").cdf(stat);
    (stat, p, outside)
}

/// Exact small-n identities and sampled-law checks against the enumerated law.
pub fn cmd_oracle(config: &ExperimentConfig) -> Result<Report> {
    let clock = Clock::start(config.threads);
    let m_top = config.m;
    let n_top = config.n;
    if m_top < 2 {
        return param_err("oracle needs m >= 2");
    }
    guard(m_top, n_top)?;
    let mut checks = Vec::new();
    let mut table = Table::new(&["check", "m", "n", "j", "value"]);

    let mut worst_moment: f64 = 0.0;
    for m in 2..=m_top {
        for n in 1..=n_top {
            let d = moment_equivalence(m, n)?;
            worst_moment = worst_moment.max(d);
            table.push(["moment_equivalence".into(), m.to_string(), n.to_string(), String::new(), fmt(d)]);
        }
    }
    checks.push(Check::at_most("closed-form vs enumerated moments, max deviation", worst_moment, MOMENT_TOL));

    let mut worst_mg: f64 = 0.0;
    for m in 2..=m_top.min(6) {
        for n in 0..=n_top.min(6) {
            let d = martingale_check(m, n)?;
            worst_mg = worst_mg.max(d);
            table.push(["martingale".into(), m.to_string(), n.to_string(), String::new(), fmt(d)]);
        }
    }
    checks.push(Check::at_most("one-step martingale property, max deviation", worst_mg, MARTINGALE_TOL));

    let mut worst_shift: f64 = 0.0;
    let mut worst_rec: f64 = 0.0;
    let mut rational_ok = true;
    for m in 2..=m_top.min(7) {
        for n in 1..=n_top.min(6) {
            for j in 1..m {
                let c = shift_check(m, j, n, Arithmetic::Double)?;
                worst_shift = worst_shift.max(c.total_variation);
                table.push(["shift_tv".into(), m.to_string(), n.to_string(), j.to_string(), fmt(c.total_variation)]);
                if config.exact_rational {
                    rational_ok &= shift_check(m, j, n, Arithmetic::Rational)?.equal;
                }
            }
            let c = recurrence_check(m, n, Arithmetic::Double)?;
            worst_rec = worst_rec.max(c.total_variation);
            table.push(["recurrence_tv".into(), m.to_string(), n.to_string(), String::new(), fmt(c.total_variation)]);
            if config.exact_rational {
                rational_ok &= recurrence_check(m, n, Arithmetic::Rational)?.equal;
            }
        }
    }
    checks.push(Check::at_most("shift identity, max total variation", worst_shift, LAW_TV_TOL));
    checks.push(Check::at_most("subtree recurrence, max total variation", worst_rec, LAW_TV_TOL));
    if config.exact_rational {
        checks.push(Check::flag("shift and recurrence identities in exact rationals", rational_ok, "all equal"));
    }

    // sampled laws at a size where every composition is well populated
    let (sm, sn) = (3usize, 4u64);
    let exact = exact_distribution(sm, 0, sn)?.probabilities();
    let params = UrnParams::new(sm, 0)?;
    let urn_master = stream_seed(config.seed, 10);
    let bst_master = stream_seed(config.seed, 11);
    let urn_samples = run_parallel(config.replicates, config.threads, |r| {
        Ok(simulate(&params, sn, stream_seed(urn_master, r as u64)).run_to_end().counts().to_vec())
    })?;
    let bst_samples = run_parallel(config.replicates, config.threads, |r| {
        Ok(bst_simulate(sm, sn, stream_seed(bst_master, r as u64))?.counts().to_vec())
    })?;
    let mut sampled = Vec::new();
    for (label, samples) in [("urn", &urn_samples), ("bst", &bst_samples)] {
        let (stat, p, outside) = chi_square_p(samples, &exact);
        checks.push(Check::flag(format!("{label} samples stay on the exact support"), outside == 0, "0 outside"));
        checks.push(Check::within(format!("{label} chi-square p-value vs exact law (m={sm}, n={sn})"), p, CHI_SQUARE_MIN_P, 1.0));
        table.push([format!("{label}_chi_square_p"), sm.to_string(), sn.to_string(), String::new(), fmt(p)]);
        sampled.push(json!({"sampler": label, "chi_square": stat, "p_value": p, "outside_support": outside}));
    }

    let example = if config.exact_rational {
        exact_distribution_rational(sm, 0, sn)?.to_json()
    } else {
        exact_distribution(sm, 0, sn)?.to_json()
    };
    let results = json!({
        "moment_equivalence_max": worst_moment,
        "martingale_max": worst_mg,
        "shift_tv_max": worst_shift,
        "recurrence_tv_max": worst_rec,
        "rational_identities": if config.exact_rational { Some(rational_ok) } else { None },
        "sampled_laws": sampled,
        "example_law": example,
    });
    Ok(Report {
        config: config.clone(),
        results,
        checks,
        diagnostics: clock.finish(2 * config.replicates, 2 * sn * config.replicates as u64, Vec::new()),
        table,
    })
}

fn unwrap_phases(phases: &[f64]) -> Vec<f64> {
    let tau = std::f64::consts::TAU;
    let mut out = Vec::with_capacity(phases.len());
    let mut offset = 0.0;
    for (i, &p) in phases.iter().enumerate() {
        if i > 0 {
            let prev = phases[i - 1];
            offset -= ((p - prev) / tau).round() * tau;
        }
        out.push(p + offset);
    }
    out
}

/// Exact mean against its asymptotic expansion over a dyadic grid.
pub fn cmd_mean(config: &ExperimentConfig) -> Result<Report> {
    config.check_common()?;
    let clock = Clock::start(config.threads);
    let m = config.m;
    let j = config.initial_type;
    if m < 7 {
        return param_err("the mean expansion has oscillating terms only for m >= 7");
    }
    UrnParams::new(m, j)?;
    if config.n < 100 {
        return param_err("mean needs n >= 100");
    }
    let grid = dyadic_grid(100, config.n);
    let means = mean_vector_series(m, j, &grid)?;
    let mut table = Table::new(&["n", "i", "mean", "expansion"]);
    let mut ratios = Vec::new();
    let mut worst_sum: f64 = 0.0;
    for (&n, mean) in grid.iter().zip(&means) {
        let base = mean_expansion(n, m)?;
        // starting from type j rotates the composition by j
        let mut expansion = vec![0.0; m];
        for (i, x) in base.into_iter().enumerate() {
            expansion[(i + j) % m] = x;
        }
        let dist = mean.iter().zip(&expansion).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        ratios.push(dist / (n as f64).sqrt());
        let total: f64 = mean.iter().sum();
        worst_sum = worst_sum.max((total - (n + 1) as f64).abs());
        for i in 0..m {
            table.push([n.to_string(), i.to_string(), fmt(mean[i]), fmt(expansion[i])]);
        }
    }
    let x: Vec<f64> = (0..grid.len()).map(|i| i as f64).collect();
    let slope = ols_slope(&x, &ratios);
    let span = x.last().copied().unwrap_or(0.0);
    let peak = ratios.iter().fold(0.0f64, |acc, r| acc.max(*r));
    let mut checks = vec![
        Check::at_most(
            "fitted growth of |mean - expansion|/sqrt(n) across the grid, relative to its maximum",
            slope * span / peak,
            config.rel_tol,
        ),
        Check::at_most("component sum minus (n+1)", worst_sum, 1e-9),
    ];
    let e = eigen_data(m)?;
    let phases = grid
        .iter()
        .map(|&n| mean_u(n, m, 1, j).map(|z| z.arg()))
        .collect::<Result<Vec<_>>>()?;
    let logs: Vec<f64> = grid.iter().map(|&n| (n as f64).ln()).collect();
    // the phase is mu_1 ln n + const + O(1/n); fit the upper half of the grid
    let half = grid.len() / 2;
    let phase_slope = ols_slope(&logs[half..], &unwrap_phases(&phases)[half..]);
    let mu = e.mu(1);
    checks.push(Check::at_most(
        "fitted phase slope of E u_1 against ln n, relative error vs mu_1",
        ((phase_slope - mu) / mu).abs(),
        PHASE_SLOPE_TOL,
    ));
    let results = json!({
        "grid": grid,
        "ratio": ratios,
        "fitted_slope_per_doubling": slope,
        "phase_slope": phase_slope,
        "mu_1": mu,
        "period_in_log_n": std::f64::consts::TAU / mu,
        "fitted_period_in_log_n": std::f64::consts::TAU / phase_slope,
    });
    Ok(Report {
        config: config.clone(),
        results,
        checks,
        diagnostics: clock.finish(0, 0, vec!["deterministic: no simulation".into()]),
        table,
    })
}

/// One seeded trajectory with its spectral coordinates and martingales.
pub fn cmd_simulate(config: &ExperimentConfig) -> Result<Report> {
    let clock = Clock::start(1);
    let params = config.params()?;
    let m = config.m;
    let n = config.n;
    let mut headers = vec!["n".to_string()];
    headers.extend((0..m).map(|i| format!("count_{i}")));
    let mut table = Table {
        headers,
        rows: Vec::new(),
    };
    let mut traj = simulate(&params, n, config.seed);
    let mut stops = vec![0];
    stops.extend(dyadic_grid(1, n.max(1)).into_iter().filter(|&s| s <= n));
    stops.dedup();
    for &s in &stops {
        traj.advance_to(s);
        let mut row = vec![s.to_string()];
        row.extend(traj.counts().iter().map(|c| c.to_string()));
        table.rows.push(row);
    }
    let counts = traj.counts().to_vec();
    let track = Checkpoint::new(&params, n)?.track(&counts)?;
    let cplx = |z: &num_complex::Complex64| json!({"re": z.re, "im": z.im});
    let results: Value = json!({
        "n": n,
        "counts": counts,
        "u": track.u().iter().map(cplx).collect::<Vec<_>>(),
        "mean_u": (0..m).map(|k| cplx(&track.mean_u(k))).collect::<Vec<_>>(),
        "martingale": track.martingale().iter().map(cplx).collect::<Vec<_>>(),
    });
    let checks = vec![Check::flag("counts sum to n + 1", counts.iter().sum::<u64>() == n + 1, "exact")];
    Ok(Report {
        config: config.clone(),
        results,
        checks,
        diagnostics: clock.finish(1, n, Vec::new()),
        table,
    })
}
