//! `verify all`: every invariant suite that applies to one norm, at desk
//! resolution. Suites that need more regularity than the norm has are
//! reported as skipped.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use sfbubble::bubble::{build_bubble, isop_quotient, lower_hemisphere_graph, perimeter, pole_report, volume};
use sfbubble::characteristic::{characteristic_loop, curve_diagnostics, pole_expansion_check, CharCurveOptions, PoleOptions};
use sfbubble::circle::CircleParam;
use sfbubble::crystalline::{convergence_study, StudyOptions};
use sfbubble::foliation::{
    bump_field, crystalline_face_foliation, first_variation, fit_phi_circle, phi_curvature, ruled_face_patch, verify_circle_foliation, FoliationOptions,
};
use sfbubble::geodesics::{normal_extremal, GeodesicOptions};
use sfbubble::heis::{horizontal_lift, symplectic, GraphPatch, HPoint, ParamCurve};
use sfbubble::norm::Norm;

use crate::artifact::Check;

enum Outcome {
    Done(Vec<Check>, Value),
    Skipped(&'static str),
}

type Suite = Result<Outcome, String>;

fn skipped(reason: &'static str) -> Suite {
    Ok(Outcome::Skipped(reason))
}

fn algebra() -> Suite {
    let omega = symplectic([1.0, 0.0], [0.0, 1.0]);
    let circle = ParamCurve::sample(0.0, TAU, 4097, |t| ([t.cos() - 1.0, t.sin()], [-t.sin(), t.cos()]));
    let lift = horizontal_lift(&circle, 0.0).map_err(|e| e.to_string())?;
    let gain = *lift.z.as_ref().and_then(|z| z.last()).ok_or("lift has no heights")?;
    let checks = vec![Check::flag("omega_e1_e2_is_half", omega == 0.5), Check::below("unit_circle_lift_gain", (gain - PI).abs(), 1e-8)];
    Ok(Outcome::Done(checks, json!({ "omega": omega, "z_gain": gain })))
}

fn duality(norm: &Norm, rng: &mut ChaCha8Rng) -> Suite {
    let dual = norm.dual().map_err(|e| e.to_string())?;
    let bidual = dual.dual().map_err(|e| e.to_string())?;
    let bi = (0..256)
        .map(|k| {
            let th = TAU * k as f64 / 256.0;
            let v = [th.cos(), th.sin()];
            (bidual.eval(v) - norm.eval(v)).abs()
        })
        .fold(0.0, f64::max);
    let mut unit = 0.0f64;
    let mut kinks = 0;
    for _ in 0..512 {
        let w = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        match norm.grad_dual(w) {
            Ok(g) => unit = unit.max((norm.eval(g) - 1.0).abs()),
            Err(_) => kinks += 1,
        }
    }
    let checks = vec![Check::below("biduality", bi, 1e-6), Check::below("unit_at_dual_gradient", unit, 1e-8)];
    Ok(Outcome::Done(checks, json!({ "biduality": bi, "unit_at_dual_gradient": unit, "dual_kinks_hit": kinks })))
}

fn bubble_invariants(norm: &Norm, rng: &mut ChaCha8Rng) -> Suite {
    let mesh = build_bubble(norm, 256, 128);
    let poles = pole_report(&mesh);
    let q = isop_quotient(&mesh).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let lam = rng.gen_range(0.3..3.0);
        worst = worst.max((isop_quotient(&mesh.dilated(lam)).map_err(|e| e.to_string())? / q - 1.0).abs());
        let p = HPoint::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        worst = worst.max((isop_quotient(&mesh.translated(p)).map_err(|e| e.to_string())? / q - 1.0).abs());
    }
    let checks = vec![
        Check::below("south_pole_at_origin", poles.south_max, 1e-10),
        Check::below("north_pole_tau_spread", poles.north_spread.max(poles.north_offset), 1e-7),
        Check::below("equator_half_area", poles.equator_dev, 1e-7),
        Check::below("quotient_invariance", worst, 1e-9),
    ];
    let body = json!({
        "poles": poles,
        "volume": volume(&mesh).map_err(|e| e.to_string())?,
        "perimeter": perimeter(&mesh),
        "quotient": q,
        "invariance_rel_error": worst,
    });
    Ok(Outcome::Done(checks, body))
}

fn foliation(norm: &Norm, seed: u64) -> Suite {
    if norm.is_polygon() {
        return skipped("the φ-curvature needs a differentiable dual norm");
    }
    let patch = lower_hemisphere_graph(norm, 257).map_err(|e| e.to_string())?;
    let stats = phi_curvature(norm, &patch).stats();
    let rep = verify_circle_foliation(norm, &patch, stats.mean, FoliationOptions { rng_seed: seed, ..FoliationOptions::default() });
    let checks = vec![
        Check::below("curvature_rel_std", stats.rel_std(), 1e-3),
        Check::below("circle_radius_deviation", rep.max_radius_deviation, 1e-3),
        Check::flag("rotation_sense", !rep.seeds.is_empty() && rep.seeds.iter().all(|s| s.sense_matches)),
    ];
    Ok(Outcome::Done(checks, json!({ "curvature": stats, "max_radius_deviation": rep.max_radius_deviation, "seeds": rep.seeds.len() })))
}

fn criticality(norm: &Norm, rng: &mut ChaCha8Rng) -> Suite {
    if norm.is_polygon() {
        // A plane whose F stays in one open dual cone: ∇φ*(F) is constant.
        let duals = norm.polygon_dual_vertices().ok_or("polygon without dual vertices")?;
        let mid = [duals[0][0] + duals[1][0], duals[0][1] + duals[1][1]];
        let n = 65;
        let patch = GraphPatch::from_fn(n, n, 0.0, 0.0, 0.01, 0.01, |x| 3.0 * (mid[0] * x[0] + mid[1] * x[1]), Some(&|_| [3.0 * mid[0], 3.0 * mid[1]]), |_| true);
        let bump = bump_field(&patch, [0.32, 0.32], 0.2, 1.0);
        let fv = first_variation(norm, &patch, &bump, None).map_err(|e| e.to_string())?;
        return Ok(Outcome::Done(vec![Check::below("constant_normal_perimeter_variation", fv.d_perimeter.abs(), 1e-12)], json!({ "constant_normal": fv })));
    }
    let mesh = build_bubble(norm, 256, 128);
    let totals = (perimeter(&mesh).perimeter, volume(&mesh).map_err(|e| e.to_string())?);
    let patch = lower_hemisphere_graph(norm, 257).map_err(|e| e.to_string())?;
    let inradius = (0..720).map(|k| {
        let u = norm.unit_point(TAU * k as f64 / 720.0);
        (u[0] * u[0] + u[1] * u[1]).sqrt()
    });
    let inradius = inradius.fold(f64::INFINITY, f64::min);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let c = norm.unit_point(rng.gen_range(0.0..TAU));
        let r0 = rng.gen_range(0.0..0.8);
        let center = [r0 * c[0], r0 * c[1]];
        let bump = bump_field(&patch, center, inradius * rng.gen_range(0.2..0.6), 1.0);
        let fv = first_variation(norm, &patch, &bump, Some(totals)).map_err(|e| e.to_string())?;
        worst = worst.max(fv.normalized.unwrap_or(f64::INFINITY).abs());
    }
    Ok(Outcome::Done(vec![Check::below("normalized_quotient_derivative", worst, 1e-3)], json!({ "max_normalized_derivative": worst, "bumps": 20 })))
}

fn geodesics(norm: &Norm) -> Suite {
    let psi = match norm.dagger() {
        Ok(p) if !p.is_polygon() && p.gradient_kinks().is_empty() => p,
        _ => return skipped("φ† is not differentiable"),
    };
    let dual = psi.dual().map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (lz, th) in [(1.0, 0.3), (-2.0, 1.7)] {
        let ext = normal_extremal(&psi, HPoint::new(0.1, 0.2, 0.0), dual.unit_point(th), lz, 20.0 / f64::abs(lz), GeodesicOptions::default()).map_err(|e| e.to_string())?;
        worst = worst.max(fit_phi_circle(norm, &ext.projection().xy, 1.0 / f64::abs(lz)).max_deviation);
    }
    Ok(Outcome::Done(vec![Check::below("extremal_phi_circle_fit", worst, 1e-4)], json!({ "max_fit_deviation": worst })))
}

fn characteristic(norm: &Norm) -> Suite {
    if norm.is_polygon() {
        return skipped("the φ†-arclength circle needs a strictly convex norm");
    }
    let m = CircleParam::dagger(norm, 4096).map_err(|e| e.to_string())?.period();
    let state = characteristic_loop(norm, 1.0, m / 3.0, 0.0, CharCurveOptions::default()).map_err(|e| e.to_string())?;
    let d = curve_diagnostics(&state, 9).map_err(|e| e.to_string())?;
    let line = characteristic_loop(norm, 1.0, 0.5 * m, 0.0, CharCurveOptions::default()).map_err(|e| e.to_string())?;
    let dl = curve_diagnostics(&line, 5).map_err(|e| e.to_string())?;
    let checks = vec![
        Check::below("half_period_shift", d.half_shift_error.unwrap_or(f64::INFINITY), 1e-6),
        Check::below("closure", d.closure.unwrap_or(f64::INFINITY), 1e-5),
        Check::flag("simple_loop", d.simple == Some(true)),
        Check::below("conserved_quantity_drift", d.conserved_drift, 1e-5),
        Check::below("characteristic_time_std", d.char_time_std, 1e-6),
        Check::below("antipodal_line", dl.straightness, 1e-8),
    ];
    Ok(Outcome::Done(checks, json!({ "third": d, "antipodal": dl })))
}

fn pole(norm: &Norm) -> Suite {
    if !norm.is_smooth_positive() {
        return skipped("the pole expansion needs a C² norm with positive curvature");
    }
    let rep = pole_expansion_check(norm, PoleOptions::default()).map_err(|e| e.to_string())?;
    let mut checks = Vec::new();
    for fit in [&rep.grad_normal, &rep.hess_mixed, &rep.hess_tangential, &rep.hess_normal] {
        let predicted = fit.predicted.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if predicted > 1e-6 {
            checks.push(Check::below(&format!("{}_relative_error", fit.name), fit.relative_error, 0.05));
        } else {
            checks.push(Check::below(&format!("{}_abs_error", fit.name), fit.max_abs_error, 1e-3));
        }
        checks.push(Check::below(&format!("{}_r2_deficit", fit.name), 1.0 - fit.min_r2, 0.01));
    }
    if let Some(r) = rep.mixed_to_gradient_ratio {
        checks.push(Check::below("mixed_to_gradient_ratio", (r - 2.0).abs() / 2.0, 0.05));
    }
    Ok(Outcome::Done(checks, serde_json::to_value(&rep).unwrap()))
}

fn crystal(norm: &Norm) -> Suite {
    let half = match norm.polygon_vertices() {
        Some(v) => v.len() / 2,
        None => return skipped("not a crystalline norm"),
    };
    let mut checks = Vec::new();
    for face in 0..half {
        let patch = ruled_face_patch(norm, face, 65, 0.5).map_err(|e| e.to_string())?;
        let rep = crystalline_face_foliation(norm, &patch, 1e-9).map_err(|e| e.to_string())?;
        checks.push(Check::flag(&format!("face_{face}_classified"), rep.face == Some(face)));
        checks.push(Check::below(&format!("face_{face}_ruled_residual"), rep.ruled_residual, 1e-8));
    }
    let study = convergence_study(norm, &[0.2, 0.1, 0.05, 0.025], StudyOptions::default()).map_err(|e| e.to_string())?;
    checks.push(Check::flag("eta_monotone", study.eta_monotone));
    checks.push(Check::flag("hausdorff_strictly_decreasing", study.hausdorff_decreasing));
    checks.push(Check::flag("sandwich_nonnegative", study.sandwich_ok));
    Ok(Outcome::Done(checks, serde_json::to_value(&study).unwrap()))
}

/// Runs every suite; a suite that errors counts as a failed check.
pub fn run_all(norm: &Norm, seed: u64) -> (Vec<Check>, Value) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let suites: Vec<(&str, Suite)> = vec![
        ("algebra", algebra()),
        ("duality", duality(norm, &mut rng)),
        ("bubble", bubble_invariants(norm, &mut rng)),
        ("foliation", foliation(norm, seed)),
        ("criticality", criticality(norm, &mut rng)),
        ("geodesics", geodesics(norm)),
        ("characteristic", characteristic(norm)),
        ("pole", pole(norm)),
        ("crystalline", crystal(norm)),
    ];
    let mut checks = Vec::new();
    let mut sections = Map::new();
    for (name, suite) in suites {
        let section = match suite {
            Ok(Outcome::Done(cs, body)) => {
                let pass = cs.iter().all(|c| c.pass);
                checks.extend(cs.into_iter().map(|c| Check { name: format!("{name}.{}", c.name), ..c }));
                json!({ "status": if pass { "pass" } else { "fail" }, "result": body })
            }
            Ok(Outcome::Skipped(reason)) => json!({ "status": "skipped", "reason": reason }),
            Err(reason) => {
                checks.push(Check::flag(&format!("{name}.completed"), false));
                json!({ "status": "error", "reason": reason })
            }
        };
        sections.insert(name.to_string(), section);
    }
    (checks, json!({ "norm": norm.descriptor(), "suites": sections }))
}
