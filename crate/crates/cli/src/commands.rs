use std::path::Path;

use serde_json::{json, Value};
use sfbubble::bubble::{build_bubble, isop_quotient, lower_hemisphere_graph, perimeter, pole_report, volume, BubbleMesh};
use sfbubble::characteristic::{characteristic_loop, curve_diagnostics, pole_expansion_check, CharCurveOptions, PoleOptions};
use sfbubble::circle::CircleParam;
use sfbubble::crystalline::{convergence_study, edge_fields, polygon_dual, PolygonData, StudyOptions};
use sfbubble::foliation::{crystalline_face_foliation, fit_phi_circle, phi_curvature, ruled_face_patch, verify_circle_foliation, FoliationOptions};
use sfbubble::geodesics::{curvature_ode, normal_extremal, pointwise_distance, GeodesicOptions};
use sfbubble::heis::{GraphPatch, HPoint};
use sfbubble::norm::Norm;

use crate::artifact::{all_pass, read_json, to_json_string, write_json, write_text, Check, Run};
use crate::{verify, BubbleCmd, CliError, Command, CrystalCmd, VerifyCmd};

pub fn parse_norm(spec: &str) -> Result<Norm, CliError> {
    Norm::parse_spec(spec).map_err(|e| CliError::Input(format!("--norm {spec}: {e}")))
}

fn read_patch(path: &Path) -> Result<GraphPatch, CliError> {
    let mut patch: GraphPatch = serde_json::from_value(read_json(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if patch.nx < 2 || patch.ny < 2 || patch.f.len() != patch.nx * patch.ny || patch.mask.len() != patch.f.len() || !(patch.hx > 0.0 && patch.hy > 0.0) {
        return Err(CliError::Input(format!("{}: inconsistent patch dimensions", path.display())));
    }
    patch.refresh();
    Ok(patch)
}

/// Writes the artifact, reports on stdout, and maps failed checks to exit 2.
fn finish(run: &Run, out: &Path, checks: Vec<Check>, body: Value, json_out: bool) -> Result<(), CliError> {
    let artifact = run.envelope(&checks, body);
    write_json(out, &artifact)?;
    report(&artifact, &checks, json_out);
    verdict(&checks)
}

fn report(artifact: &Value, checks: &[Check], json_out: bool) {
    if json_out {
        println!("{}", to_json_string(artifact));
        return;
    }
    for c in checks {
        let mark = if c.pass { "ok  " } else { "FAIL" };
        match (c.value, c.tol) {
            (Some(v), Some(t)) => println!("{mark} {:<32} {v:.3e} < {t:.1e}", c.name),
            _ => println!("{mark} {}", c.name),
        }
    }
}

fn verdict(checks: &[Check]) -> Result<(), CliError> {
    if all_pass(checks) {
        Ok(())
    } else {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        Err(CliError::Check(failed.join(", ")))
    }
}

pub fn dispatch(cmd: &Command, run: &Run, json_out: bool) -> Result<(), CliError> {
    match cmd {
        Command::Bubble(BubbleCmd::Build(a)) => {
            if a.n_t < 4 || a.n_tau < 4 {
                return Err(CliError::Input("--n-t and --n-tau must be at least 4".into()));
            }
            let norm = parse_norm(&a.norm)?;
            let mesh = build_bubble(&norm, a.n_t, a.n_tau);
            let poles = pole_report(&mesh);
            let checks = vec![
                Check::below("south_pole_at_origin", poles.south_max, 1e-10),
                Check::below("north_pole_tau_spread", poles.north_spread.max(poles.north_offset), 1e-7),
                Check::below("equator_half_area", poles.equator_dev, 1e-7),
            ];
            let mut body = mesh.to_json();
            body["poles"] = serde_json::to_value(poles).unwrap();
            finish(run, &a.out, checks, body, json_out)
        }
        Command::Bubble(BubbleCmd::Measure(a)) => {
            let mesh = BubbleMesh::from_json(&read_json(&a.input)?).map_err(CliError::input)?;
            let v = volume(&mesh).map_err(CliError::input)?;
            let p = perimeter(&mesh);
            let q = isop_quotient(&mesh).map_err(CliError::input)?;
            let out = json!({ "volume": v, "perimeter": p.perimeter, "quotient": q, "kink_fraction": p.kink_fraction });
            println!("{}", to_json_string(&out));
            Ok(())
        }
        Command::Foliate(a) => {
            let norm = parse_norm(&a.norm)?;
            let patch = match &a.patch {
                Some(p) => read_patch(p)?,
                None => {
                    if a.grid < 9 {
                        return Err(CliError::Input("--grid must be at least 9".into()));
                    }
                    lower_hemisphere_graph(&norm, a.grid).map_err(CliError::input)?
                }
            };
            if let Some(path) = &a.save_patch {
                write_json(path, &serde_json::to_value(&patch).unwrap())?;
            }
            let stats = phi_curvature(&norm, &patch).stats();
            let h = a.h.unwrap_or(stats.mean);
            if !(h.is_finite() && h != 0.0) {
                return Err(CliError::Input(format!("curvature must be nonzero, got {h}")));
            }
            let opts = FoliationOptions { seeds: a.seeds, rng_seed: run.seed, tolerance: a.tol, ..FoliationOptions::default() };
            let rep = verify_circle_foliation(&norm, &patch, h, opts);
            let checks = vec![
                Check::below("curvature_rel_std", stats.rel_std(), a.tol),
                Check::below("max_radius_deviation", rep.max_radius_deviation, a.tol),
                Check::flag("rotation_sense", rep.seeds.iter().all(|s| s.sense_matches)),
                Check::flag("seeds_found", !rep.seeds.is_empty()),
            ];
            let body = json!({ "norm": norm.descriptor(), "curvature": stats, "foliation": rep });
            finish(run, &a.report, checks, body, json_out)
        }
        Command::Geodesic(a) => geodesic(a, run, json_out),
        Command::Charcurve(a) => {
            let norm = parse_norm(&a.norm)?;
            if !(a.h.is_finite() && a.h != 0.0) {
                return Err(CliError::Input(format!("--h must be nonzero, got {}", a.h)));
            }
            let period = CircleParam::dagger(&norm, 4096).map_err(CliError::input)?.period();
            let hsbar = parse_shift(&a.hsbar, period)?;
            let state = characteristic_loop(&norm, a.h, hsbar / a.h, a.tau0, CharCurveOptions::default()).map_err(CliError::input)?;
            let diag = curve_diagnostics(&state, a.probes).map_err(CliError::input)?;
            let antipodal = (hsbar - 0.5 * period).abs() < 1e-12 * period;
            let mut checks = vec![
                Check::below("characteristic_time_std", diag.char_time_std, 1e-6),
                Check::below("characteristic_time_is_shift", (diag.char_time_mean - hsbar / a.h).abs(), 1e-6),
                Check::below("conserved_quantity_drift", diag.conserved_drift, 1e-5),
            ];
            if antipodal {
                checks.push(Check::below("straight_line", diag.straightness, 1e-8));
            } else {
                checks.push(Check::flag("half_period_found", diag.half_period.is_some()));
                checks.push(Check::below("half_period_shift", diag.half_shift_error.unwrap_or(f64::INFINITY), 1e-6));
                checks.push(Check::below("closure_after_two_half_periods", diag.closure.unwrap_or(f64::INFINITY), 1e-5));
                checks.push(Check::flag("simple_loop", diag.simple == Some(true)));
            }
            let body = json!({ "norm": norm.descriptor(), "period": period, "hsbar": hsbar, "diagnostics": diag, "state": state });
            finish(run, &a.out, checks, body, json_out)
        }
        Command::Polecheck(a) => {
            let norm = parse_norm(&a.norm)?;
            if a.rays < 3 {
                return Err(CliError::Input("--rays must be at least 3".into()));
            }
            let rep = pole_expansion_check(&norm, PoleOptions { rays: a.rays, ..PoleOptions::default() }).map_err(CliError::input)?;
            let mut checks = Vec::new();
            for fit in [&rep.grad_normal, &rep.hess_mixed, &rep.hess_tangential, &rep.hess_normal] {
                // Relative errors are meaningless when the predicted coefficient vanishes.
                let predicted = fit.predicted.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if predicted > 1e-6 {
                    checks.push(Check::below(&format!("{}_relative_error", fit.name), fit.relative_error, a.tol));
                } else {
                    checks.push(Check::below(&format!("{}_abs_error", fit.name), fit.max_abs_error, 1e-3));
                }
                checks.push(Check::below(&format!("{}_r2_deficit", fit.name), 1.0 - fit.min_r2, 0.01));
            }
            if let Some(r) = rep.mixed_to_gradient_ratio {
                checks.push(Check::below("mixed_to_gradient_ratio", (r - 2.0).abs() / 2.0, a.tol));
            }
            let body = json!({ "norm": norm.descriptor(), "fits": rep });
            finish(run, &a.out, checks, body, json_out)
        }
        Command::MollifyStudy(a) => {
            let norm = parse_norm(&a.norm)?;
            let opts = StudyOptions { n_t: a.n_t, n_tau: a.n_tau, samples: a.samples };
            let rep = convergence_study(&norm, &a.ladder, opts).map_err(CliError::input)?;
            let worst = rep.entries.iter().map(|e| -e.sandwich_residual).fold(f64::NEG_INFINITY, f64::max);
            let checks = vec![
                Check::flag("eta_monotone", rep.eta_monotone),
                Check::flag("hausdorff_strictly_decreasing", rep.hausdorff_decreasing),
                Check::below("sandwich_deficit", worst, a.sandwich_tol),
            ];
            let body = json!({ "norm": norm.descriptor(), "study": rep });
            finish(run, &a.out, checks, body, json_out)
        }
        Command::Crystal(CrystalCmd::Faces(a)) => {
            let norm = parse_norm(&a.norm)?;
            let poly = PolygonData::from_norm(&norm).map_err(CliError::input)?;
            let dual = polygon_dual(&poly).map_err(CliError::input)?;
            let fields = edge_fields(&poly);
            let residuals = poly.residuals();
            let mut checks = vec![Check::below("dual_vertex_equations", residuals.edge.max(residuals.vertex).max(residuals.previous), 1e-12)];
            let reports = match &a.patch {
                Some(path) => {
                    let patch = read_patch(path)?;
                    let rep = crystalline_face_foliation(&norm, &patch, a.angle_tol).map_err(CliError::input)?;
                    checks.push(Check::flag("single_face", rep.face.is_some()));
                    if rep.face.is_some() {
                        checks.push(Check::below("ruled_residual", rep.ruled_residual, 1e-8));
                    }
                    vec![rep]
                }
                None => {
                    if a.grid < 9 {
                        return Err(CliError::Input("--grid must be at least 9".into()));
                    }
                    (0..poly.half())
                        .map(|face| {
                            let patch = ruled_face_patch(&norm, face, a.grid, 0.5).map_err(CliError::input)?;
                            let rep = crystalline_face_foliation(&norm, &patch, a.angle_tol).map_err(CliError::input)?;
                            checks.push(Check::flag(&format!("face_{face}_classified"), rep.face == Some(face)));
                            checks.push(Check::below(&format!("face_{face}_ruled_residual"), rep.ruled_residual, 1e-8));
                            Ok(rep)
                        })
                        .collect::<Result<Vec<_>, CliError>>()?
                }
            };
            let body = json!({ "norm": norm.descriptor(), "polygon": poly, "dual": dual, "edge_fields": fields, "residuals": residuals, "faces": reports });
            finish(run, &a.out, checks, body, json_out)
        }
        Command::Verify(VerifyCmd::All(a)) => {
            let norm = parse_norm(&a.norm)?;
            let (checks, body) = verify::run_all(&norm, run.seed);
            finish(run, &a.out, checks, body, json_out)
        }
    }
}

/// `0.3M` is a multiple of the period, a bare number is absolute.
fn parse_shift(text: &str, period: f64) -> Result<f64, CliError> {
    let text = text.trim();
    let bad = || CliError::Input(format!("--hsbar: cannot parse {text:?}"));
    let value = match text.strip_suffix('M') {
        Some(frac) if frac.is_empty() => period,
        Some(frac) => frac.trim().parse::<f64>().map_err(|_| bad())? * period,
        None => text.parse::<f64>().map_err(|_| bad())?,
    };
    if !(value > 0.0 && value < period) {
        return Err(CliError::Input(format!("--hsbar must lie in (0, M) with M = {period}, got {value}")));
    }
    Ok(value)
}

fn geodesic(a: &crate::GeodesicArgs, run: &Run, json_out: bool) -> Result<(), CliError> {
    let psi = parse_norm(&a.psi)?;
    if !(a.t_end.is_finite() && a.t_end != 0.0) || !a.lz.is_finite() {
        return Err(CliError::Input("--T must be nonzero and --lz finite".into()));
    }
    let opts = GeodesicOptions { samples: a.samples.max(2), ..GeodesicOptions::default() };
    let dual = psi.dual().map_err(CliError::input)?;
    let m0 = dual.unit_point(a.theta0);
    let start = HPoint::new(0.0, 0.0, 0.0);
    let ext = normal_extremal(&psi, start, m0, a.lz, a.t_end, opts).map_err(CliError::input)?;
    let proj = ext.projection();
    let ch = ext.checks(&psi);
    let dt = a.t_end.abs() / (opts.samples - 1) as f64;
    let mut checks = vec![
        Check::below("dual_normalization", ch.dual_normalization, 1e-8),
        Check::below("arclength", ch.arclength, 1e-6),
        // Horizontality is measured with a second-order stencil on the output grid.
        Check::below("horizontality", ch.horizontality, (1.0 + a.lz * a.lz) * dt * dt),
    ];
    let mut circle = Value::Null;
    if a.lz == 0.0 {
        let u0 = ext.control[0];
        let line = proj.xy.iter().zip(&proj.t).map(|(p, &t)| ((p[0] - t * u0[0]).powi(2) + (p[1] - t * u0[1]).powi(2)).sqrt()).fold(0.0, f64::max);
        checks.push(Check::below("straight_line", line, 1e-10));
    } else if let Some(base) = a.psi.trim().strip_prefix("dagger:") {
        // ψ = φ†: the projection should be a φ-circle of radius 1/|λ_z|.
        let phi = parse_norm(base)?;
        let fit = fit_phi_circle(&phi, &proj.xy, 1.0 / a.lz.abs());
        checks.push(Check::below("phi_circle_fit", fit.max_deviation, 1e-4));
        checks.push(Check::below("phi_circle_radius", (fit.radius - 1.0 / a.lz.abs()).abs(), 1e-4));
        circle = serde_json::to_value(fit).unwrap();
    }
    // The curvature ODE needs a C² norm with nondegenerate Hessian.
    let integrators = match curvature_ode(&psi, [0.0, 0.0], ext.control[0], a.lz, a.t_end, opts) {
        Ok(curve) => {
            let d = pointwise_distance(&curve, &proj);
            checks.push(Check::below("integrators_agree", d, 1e-6));
            json!(d)
        }
        Err(e) => json!(format!("skipped: {e}")),
    };
    let mut csv = run.csv_header();
    csv.push_str(&proj.to_csv());
    write_text(&a.out, &csv)?;
    let summary = run.envelope(&checks, json!({ "psi": psi.descriptor(), "checks_detail": ch, "circle_fit": circle, "integrator_distance": integrators, "curve": a.out }));
    report(&summary, &checks, json_out);
    verdict(&checks)
}
