use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde_json::{json, Value};

use oqs::algebra::{hermitian_eigenvalues, trace, trace_distance, Operator};
use oqs::bath::BathModel;
use oqs::multitime::{correlation_series, nm_correction_rate};
use oqs::nonlocal::{asymptotic_state, nonlocal_poles, nonlocal_trajectory, operator_laplace_residual, TalbotOptions};
use oqs::oracle::convergence_case;
use oqs::positivity::{
    cp_verdict, generator_dissipator_samples, magnus_phi2, propagator_from_phi2, read_liouvillian_csv,
    tcl2_dissipator_samples, weak_cp_test, CpVerdict,
};
use oqs::spectral::{damping_basis_orthogonality, detailed_balance_residual, pauli_system, perturbative_spectrum};
use oqs::tcl2::{propagate, SystemModel};

use crate::model::{CliError, CliResult, Loaded};
use crate::Common;

fn cx(z: C64) -> Value {
    json!([z.re, z.im])
}

fn mat(m: &Operator) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| cx(m[(i, j)])).collect()))
            .collect(),
    )
}

fn real_mat(m: &DMatrix<f64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| json!(m[(i, j)])).collect()))
            .collect(),
    )
}

fn to_json(v: &Value) -> CliResult<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v).map_err(|e| CliError::Io(format!("serialization: {e}")))?;
    b.push(b'\n');
    Ok(b)
}

fn header(cmd: &str, l: &Loaded) -> Value {
    json!({
        "command": cmd,
        "model": l.path.display().to_string(),
        "version": env!("CARGO_PKG_VERSION"),
    })
}

fn merge(mut a: Value, b: Value) -> Value {
    if let (Value::Object(x), Value::Object(y)) = (&mut a, b) {
        x.extend(y);
    }
    a
}

pub fn simulate(l: &Loaded, c: &Common) -> CliResult<Vec<u8>> {
    let m = l.system_model()?;
    let times = l.times(10.0, 101)?;
    let opts = l.options(c.tol)?;
    let rho0 = l.initial_state(m.dim())?;
    let tr = propagate(&m, &rho0, &times, &opts)?;
    let d = m.dim();
    let mut out = String::from("t");
    for i in 0..d {
        for j in 0..d {
            out.push_str(&format!(",re_{i}_{j},im_{i}_{j}"));
        }
    }
    out.push_str(",trace,min_eigenvalue\n");
    for (t, s) in tr.times.iter().zip(&tr.states) {
        out.push_str(&format!("{t:e}"));
        for z in s.transpose().iter() {
            out.push_str(&format!(",{:e},{:e}", z.re, z.im));
        }
        let tr = trace(s);
        out.push_str(&format!(",{:e},{:e}\n", tr.re, hermitian_eigenvalues(s)[0]));
    }
    Ok(out.into_bytes())
}

pub fn spectrum(l: &Loaded, c: &Common) -> CliResult<Vec<u8>> {
    let m = l.system_model()?;
    let sr = perturbative_spectrum(&m)?;
    let half = perturbative_spectrum(&m.with_coupling_scale(0.5)?)?;
    let orth = damping_basis_orthogonality(&sr);
    let orth_half = damping_basis_orthogonality(&half);
    let ratio = if orth_half > 0.0 { orth / orth_half } else { f64::INFINITY };
    let tiny = 1e-12;
    let gersh_tol = c.tol.unwrap_or(1e-12);
    let max_re = sr.modes.iter().map(|x| x.eigenvalue.re).fold(f64::NEG_INFINITY, f64::max);
    let max_re_pauli = sr.pauli.eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let modes: Vec<Value> = sr
        .modes
        .iter()
        .map(|x| {
            json!({
                "label": [x.label.0, x.label.1],
                "cluster": x.cluster,
                "frequency": x.frequency,
                "eigenvalue": cx(x.eigenvalue),
                "shift": cx(x.shift()),
            })
        })
        .collect();
    let v = json!({
        "energies": sr.basis().energies(),
        "modes": modes,
        "pauli_eigenvalues": sr.pauli.eigenvalues.iter().map(|z| cx(*z)).collect::<Vec<_>>(),
        "clusters": sr.clusters.iter().map(|cl| cl.iter().map(|p| [p.0, p.1]).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "checks": {
            "orthogonality": {
                "residual": orth,
                "residual_half_coupling": orth_half,
                "order": ratio.log2(),
                "pass": ratio >= 10.0 || orth < tiny,
            },
            "adjoint_symmetry": {
                "residual": sr.adjoint_symmetry_residual(),
                "pass": sr.adjoint_symmetry_residual() < 1e-10,
            },
            "gershgorin": {
                "max_real_part": max_re.max(max_re_pauli),
                "pass": max_re.max(max_re_pauli) <= gersh_tol,
            },
        },
        "tolerances": { "gershgorin": gersh_tol, "orthogonality_ratio": 10.0, "adjoint_symmetry": 1e-10 },
    });
    to_json(&merge(header("spectrum", l), v))
}

pub fn pauli(l: &Loaded, c: &Common) -> CliResult<Vec<u8>> {
    let m = l.system_model()?;
    let p = pauli_system(&m)?;
    let d = m.dim();
    let wnorm = p.w.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(f64::MIN_POSITIVE);
    let gibbs_tol = c.tol.unwrap_or(1e-8);
    let temperature = m.bath().temperature();
    let e = m.basis().energies().to_vec();
    let spread = e.iter().fold(1.0f64, |a, x| a.max(x.abs()));
    let max_imag = p.eigenvalues.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let max_re = p.eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let mut checks = json!({
        "column_sums": { "residual": p.column_sum_residual(), "pass": p.column_sum_residual() <= 1e-12 },
        "gershgorin": {
            "max_imag_part": max_imag,
            "max_real_part": max_re,
            "pass": max_re <= 1e-12 && (temperature.is_none() || max_imag <= 1e-10),
        },
    });
    let obj = checks.as_object_mut().expect("object");
    match temperature {
        Some(t) if t > 0.0 => {
            let g = m.basis().gibbs(t);
            let wg = &p.w * DVector::from_column_slice(&g);
            let wg_res = wg.amax() / wnorm;
            let diff = if p.multiplicity() == 1 {
                p.stationary_state().iter().zip(&g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            } else {
                f64::NAN
            };
            obj.insert(
                "gibbs".into(),
                json!({
                    "populations": g,
                    "w_gibbs_residual": wg_res,
                    "stationary_minus_gibbs": diff,
                    "pass": wg_res <= gibbs_tol && diff <= gibbs_tol,
                }),
            );
            let db = detailed_balance_residual(&m)?;
            obj.insert(
                "detailed_balance".into(),
                json!({
                    "ratio_residual": db.ratio_residual,
                    "transitivity_residual": db.transitivity_residual,
                    "flux_residual": db.flux_residual,
                    "pass": db.max() <= gibbs_tol,
                }),
            );
        }
        Some(_) => {
            let mut worst = 0.0f64;
            for i in 0..d {
                for j in 0..i {
                    if e[i] - e[j] > 1e-9 * spread {
                        worst = worst.max(p.w[(i, j)].abs());
                    }
                }
            }
            obj.insert(
                "zero_temperature_upper_triangular".into(),
                json!({ "max_upward_rate": worst, "pass": worst == 0.0 }),
            );
        }
        None => {
            if let Ok(db) = detailed_balance_residual(&m) {
                obj.insert(
                    "detailed_balance".into(),
                    json!({
                        "ratio_residual": db.ratio_residual,
                        "transitivity_residual": db.transitivity_residual,
                        "flux_residual": db.flux_residual,
                        "pass": db.max() <= gibbs_tol,
                    }),
                );
            }
        }
    }
    let v = json!({
        "energies": e,
        "w": real_mat(&p.w),
        "eigenvalues": p.eigenvalues.iter().map(|z| cx(*z)).collect::<Vec<_>>(),
        "stationary": p.stationary,
        "multiplicity": p.multiplicity(),
        "null_residual": p.null_residual(),
        "temperature": temperature,
        "checks": checks,
        "tolerances": { "gibbs": gibbs_tol, "column_sums": 1e-12, "imag_part": 1e-10, "real_part": 1e-12 },
    });
    to_json(&merge(header("pauli", l), v))
}

fn frequency_scale(m: &SystemModel) -> f64 {
    match m.bath() {
        BathModel::ThermalLorentz(b) => b.cutoff(),
        BathModel::ExponentialOU(b) => b.lambda(),
        _ => m.gaps().gaps().iter().fold(1.0f64, |a, x| a.max(x.abs())),
    }
}

fn table_json(m: &SystemModel, table: &[oqs::bath::ChannelMatrix]) -> Value {
    Value::Array(
        m.gaps()
            .gaps()
            .iter()
            .zip(table)
            .map(|(w, a)| json!({ "frequency": w, "coefficient": mat(a) }))
            .collect(),
    )
}

pub fn coefficients(l: &Loaded, c: &Common) -> CliResult<Vec<u8>> {
    let m = l.system_model()?;
    let times = l.times(10.0, 11)?;
    let rows: Vec<Value> = times
        .iter()
        .map(|&t| Ok(json!({ "t": t, "gaps": table_json(&m, &m.full_table(t)?) })))
        .collect::<CliResult<_>>()?;
    let stationary = match m.stationary_table() {
        Ok(t) => table_json(&m, &t),
        Err(e) if e.is_numerical() => return Err(e.into()),
        Err(_) => Value::Null,
    };
    let n = l.file.run.frequency_points.unwrap_or(2001).max(3);
    let scale = frequency_scale(&m);
    let grid: Vec<f64> = (0..n).map(|k| -10.0 * scale + 20.0 * scale * k as f64 / (n - 1) as f64).collect();
    let mut checks = serde_json::Map::new();
    if let Some(t) = m.bath().temperature() {
        let tol = c.tol.unwrap_or(if t > 0.0 { 1e-9 } else { 1e-6 });
        let r = m.bath().kms_residual(&grid)?;
        checks.insert(
            "kms".into(),
            json!({ "residual": r, "tolerance": tol, "zero_temperature_form": t == 0.0, "pass": r < tol }),
        );
    }
    match m.bath().fdi_check(&grid) {
        Ok(rep) => {
            checks.insert(
                "fdi".into(),
                json!({
                    "min_eigenvalue": rep.min_eigenvalue,
                    "worst_frequency": rep.worst_frequency,
                    "tolerance": -1e-12,
                    "pass": rep.min_eigenvalue >= -1e-12,
                }),
            );
        }
        Err(e) if e.is_numerical() => return Err(e.into()),
        Err(e) => {
            checks.insert("fdi".into(), json!({ "skipped": e.to_string() }));
        }
    }
    let v = json!({
        "gaps": m.gaps().gaps(),
        "table": rows,
        "stationary": stationary,
        "frequency_grid": { "min": grid[0], "max": grid[n - 1], "points": n },
        "checks": checks,
    });
    to_json(&merge(header("coefficients", l), v))
}

fn verdict(v: CpVerdict) -> &'static str {
    match v {
        CpVerdict::Pass => "pass",
        CpVerdict::PassWithNote => "pass_with_note",
        CpVerdict::Fail => "fail",
    }
}

pub fn cp_audit(l: &Loaded, c: &Common) -> CliResult<Vec<u8>> {
    let m = l.system_model()?;
    let times = l.times(10.0, 21)?;
    let magnus_tol = c.tol.unwrap_or(1e-10);
    let rows: Vec<(f64, f64, f64)> = times
        .par_iter()
        .map(|&t| {
            let g = magnus_phi2(&m, t)?;
            let p = propagator_from_phi2(&m, &g);
            Ok((t, p.min_choi_eigenvalue(), g.delta_min_eigenvalue()))
        })
        .collect::<oqs::Result<_>>()?;
    let choi_min = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let t_end = times.last().copied().unwrap_or(0.0).max(1e-9);
    let ng = 401;
    // graded toward t = 0, where the running integral is smallest
    let grid: Vec<f64> = (0..ng).map(|k| t_end * (k as f64 / (ng - 1) as f64).powi(2)).collect();
    let samples = tcl2_dissipator_samples(&m, &grid)?;
    let weak = weak_cp_test(&samples, &grid)?;
    let mut v = json!({
        "magnus": rows.iter().map(|r| json!({ "t": r.0, "choi_min": r.1, "delta_min": r.2 })).collect::<Vec<_>>(),
        "magnus_choi_min": choi_min,
        "magnus_pass": choi_min >= -magnus_tol,
        "weak_test": {
            "min_eigenvalue": weak.min_eigenvalue,
            "worst_time": weak.worst_time,
            "verdict": verdict(cp_verdict(weak.min_eigenvalue, 1.0)),
            "pass": weak.min_eigenvalue >= -1e-8,
        },
        "tolerances": { "magnus_choi": -magnus_tol, "weak_test": -1e-8 },
    });
    if let Some(p) = &l.file.run.liouvillian_csv {
        let full = if p.is_absolute() {
            p.clone()
        } else {
            l.path.parent().unwrap_or(std::path::Path::new(".")).join(p)
        };
        let gens = read_liouvillian_csv(&full)?;
        let grid: Vec<f64> = gens.iter().map(|g| g.0).collect();
        let s = generator_dissipator_samples(&m, &gens)?;
        let rep = weak_cp_test(&s, &grid)?;
        v.as_object_mut().expect("object").insert(
            "external_generator".into(),
            json!({
                "path": full.display().to_string(),
                "min_eigenvalue": rep.min_eigenvalue,
                "worst_time": rep.worst_time,
                "pass": rep.min_eigenvalue >= -1e-8,
            }),
        );
    }
    to_json(&merge(header("cp-audit", l), v))
}

pub fn nonlocal(l: &Loaded, c: &Common) -> CliResult<Vec<u8>> {
    let m = l.system_model()?;
    let pole_tol = c.tol.unwrap_or(1e-8);
    let poles = nonlocal_poles(&m)?;
    let worst = poles.iter().map(|p| p.residual()).fold(0.0, f64::max);
    let rho0 = l.initial_state(m.dim())?;
    let asym = match asymptotic_state(&m, &rho0) {
        Ok(a) => {
            let dist = trace_distance(&a.state, &a.time_local_reference);
            json!({
                "state": mat(&a.state),
                "time_local_reference": mat(&a.time_local_reference),
                "trace_distance": dist,
                "error_estimate": a.error_estimate,
                "pass": dist < 1e-6,
            })
        }
        Err(e) if e.is_numerical() => return Err(e.into()),
        Err(e) => json!({ "skipped": e.to_string() }),
    };
    let mut v = json!({
        "poles": poles.iter().map(|p| json!({
            "pair": [p.pair.0, p.pair.1],
            "pole": cx(p.pole),
            "time_local": cx(p.time_local),
            "residual": p.residual(),
        })).collect::<Vec<_>>(),
        "pole_match_max_residual": worst,
        "pole_match_pass": worst < pole_tol,
        "operator_laplace_residual": operator_laplace_residual(&m)?,
        "asymptotic_state": asym,
        "tolerances": { "pole_match": pole_tol, "asymptotic_trace_distance": 1e-6 },
    });
    if let Some(times) = &l.file.run.times {
        let times = times.clone();
        let states = nonlocal_trajectory(&m, &rho0, &times, &TalbotOptions::default())?;
        v.as_object_mut().expect("object").insert(
            "trajectory".into(),
            Value::Array(
                times
                    .iter()
                    .zip(&states)
                    .map(|(t, s)| json!({ "t": t, "state": mat(s) }))
                    .collect(),
            ),
        );
    }
    to_json(&merge(header("nonlocal", l), v))
}

pub fn qrt(l: &Loaded, c: &Common) -> CliResult<Vec<u8>> {
    let m = l.system_model()?;
    let d = m.dim();
    let run = &l.file.run;
    let x1 = l.operator_field("x1", &run.x1, d)?;
    let x2 = l.operator_field("x2", &run.x2, d)?;
    let t2 = run.t2.unwrap_or(0.0);
    if !(t2 >= 0.0 && t2.is_finite()) {
        return Err(l.invalid("t2", "run.t2 must be finite and >= 0"));
    }
    let t1s: Vec<f64> = match &run.times {
        Some(_) => l.times(0.0, 0)?,
        None => l.times(10.0, 41)?.iter().map(|t| t + t2).collect(),
    };
    if t1s.iter().any(|t| *t < t2) {
        return Err(l.invalid("times", "every t1 in run.times must be >= run.t2"));
    }
    let include = run.correction.unwrap_or(true);
    let opts = l.options(c.tol)?;
    let rho0 = l.initial_state(d)?;
    let series = correlation_series(&m, &x1, &x2, &rho0, t2, &t1s, include, &opts)?;
    let rates: Vec<Value> = t1s
        .par_iter()
        .map(|&t1| nm_correction_rate(&m, &x1, t1, &x2, t2, &rho0).map(cx))
        .collect::<oqs::Result<_>>()?;
    let rows: Vec<Value> = t1s
        .iter()
        .zip(&series)
        .zip(rates)
        .map(|((t1, s), r)| {
            json!({
                "t1": t1,
                "qrt": cx(s.qrt),
                "correction": cx(s.correction),
                "corrected": cx(s.value()),
                "correction_rate": r,
            })
        })
        .collect();
    let v = json!({
        "t2": t2,
        "include_correction": include,
        "series": rows,
    });
    to_json(&merge(header("qrt", l), v))
}

pub fn oracle_compare(l: &Loaded, c: &Common) -> CliResult<Vec<u8>> {
    let run = &l.file.run;
    let base = c.seed.or(run.seed).unwrap_or(0);
    let n = run.seeds.unwrap_or(5).max(1);
    let g = run.g.unwrap_or(0.1);
    let horizon = run.horizon.unwrap_or(10.0);
    let points = run.points.unwrap_or(40).max(2);
    if !(g > 0.0 && horizon > 0.0) {
        return Err(l.invalid("run", "run.g and run.horizon must be positive"));
    }
    let lo = c.tol.unwrap_or(10.0);
    let seeds: Vec<u64> = (0..n as u64).map(|k| base + k).collect();
    let cases = seeds
        .par_iter()
        .map(|&s| convergence_case(s, g, horizon, points))
        .collect::<oqs::Result<Vec<_>>>()?;
    let all = cases.iter().all(|k| (lo..=22.0).contains(&k.ratio()));
    let v = json!({
        "seed": base,
        "seeds": seeds,
        "g": g,
        "system_dim": 3,
        "env_qubits": 4,
        "cases": cases.iter().map(|k| json!({
            "seed": k.seed,
            "horizon": k.horizon,
            "err_g": k.err,
            "err_half_g": k.err_half,
            "ratio": k.ratio(),
            "pass": (lo..=22.0).contains(&k.ratio()),
        })).collect::<Vec<_>>(),
        "pass": all,
        "tolerances": { "ratio_min": lo, "ratio_max": 22.0 },
    });
    to_json(&merge(header("oracle-compare", l), v))
}
