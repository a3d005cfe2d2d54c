mod common;

use supergeo::error::FlowError;
use supergeo::geodesic::{
    correspondence, correspondence_deviation, energy, integrate_base, integrate_classical, integrate_super,
    InitialCondition,
};
use supergeo::geometry::levi_civita;
use supergeo::reduction::{reduce_connection, reduce_metric, zero_section_pullback, ReducedConnection};
use supergeo::sampling::ChartBox;
use supergeo::scenario::{random_scenario, RandomOptions};

fn ic(x0: &[f64], v0: &[f64], e0: &[f64], w0: &[f64]) -> InitialCondition {
    InitialCondition { x0: x0.to_vec(), v0: v0.to_vec(), e0: e0.to_vec(), w0: w0.to_vec() }
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (p, q)| m.max((p - q).abs()))
}

#[test]
fn worked_metric_fiber_equation_has_closed_form() {
    let g = common::worked_metric();
    let conn = levi_civita(g);
    let bx = ChartBox::cube(1, 0.9);
    let start = ic(&[0.1], &[0.3], &[0.5, -0.2], &[0.4, 1.0]);
    let curve = integrate_super(&conn, &bx, &start, 1.0, 1e-3).unwrap();
    for k in (0..curve.len()).step_by(50) {
        let t = curve.times[k];
        let f = 0.1 + 0.3 * t;
        assert!((curve.f[k][0] - f).abs() <= 1e-12);
        for (a, (e0, w0)) in [(0.5, 0.4), (-0.2, 1.0)].into_iter().enumerate() {
            let h = e0 + w0 * 1.1 / 0.3 * ((1.0 + f) / 1.1).ln();
            assert!((curve.h[k][a] - h).abs() <= 1e-10, "t={t}: {} vs {h}", curve.h[k][a]);
        }
    }
}

#[test]
fn rk4_is_fourth_order() {
    let s = random_scenario(2, 2, 1, 13, &RandomOptions { scale: 0.9, ..Default::default() }).unwrap();
    let conn = s.connection();
    let start = &s.initial_conditions[0];
    let end = |dt: f64| {
        let c = integrate_super(&conn, &s.chart_box, start, 1.0, dt).unwrap();
        assert!(!c.truncated);
        [c.position(c.len() - 1), c.velocity(c.len() - 1)].concat()
    };
    let reference = end(0.00625);
    let e1 = sup_dist(&end(0.1), &reference);
    let e2 = sup_dist(&end(0.05), &reference);
    let ratio = e1 / e2;
    assert!((12.0..=20.0).contains(&ratio), "errors {e1:e} {e2:e} ratio {ratio}");
}

#[test]
fn reversing_velocity_returns_to_start() {
    let s = random_scenario(2, 2, 0, 3, &RandomOptions::default()).unwrap();
    let conn = s.connection();
    let start = &s.initial_conditions[0];
    let fwd = integrate_super(&conn, &s.chart_box, start, 1.0, 1e-3).unwrap();
    let k = fwd.len() - 1;
    let back_ic = ic(
        &fwd.f[k],
        &fwd.df[k].iter().map(|v| -v).collect::<Vec<_>>(),
        &fwd.h[k],
        &fwd.dh[k].iter().map(|v| -v).collect::<Vec<_>>(),
    );
    let back = integrate_super(&conn, &s.chart_box, &back_ic, 1.0, 1e-3).unwrap();
    let j = back.len() - 1;
    let want = [start.x0.clone(), start.e0.clone()].concat();
    assert!(sup_dist(&back.position(j), &want) <= 1e-8);
}

#[test]
fn fiber_motion_is_linear_in_fiber_data() {
    let s = random_scenario(2, 2, 1, 17, &RandomOptions::default()).unwrap();
    let conn = s.connection();
    let (x0, v0) = (vec![0.1, -0.2], vec![0.3, 0.1]);
    let a = ic(&x0, &v0, &[1.0, 0.0], &[0.0, 0.5]);
    let b = ic(&x0, &v0, &[-0.3, 0.7], &[0.2, -0.1]);
    let (ca, cb) = (2.0, -0.5);
    let mix = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| ca * u + cb * v).collect::<Vec<_>>();
    let c = ic(&x0, &v0, &mix(&a.e0, &b.e0), &mix(&a.w0, &b.w0));
    let run = |i: &InitialCondition| integrate_super(&conn, &s.chart_box, i, 1.0, 1e-3).unwrap();
    let (ra, rb, rc) = (run(&a), run(&b), run(&c));
    for k in (0..ra.len()).step_by(100) {
        assert_eq!(ra.f[k], rc.f[k]);
        assert!(sup_dist(&mix(&ra.h[k], &rb.h[k]), &rc.h[k]) <= 1e-8);
        assert!(sup_dist(&mix(&ra.dh[k], &rb.dh[k]), &rc.dh[k]) <= 1e-8);
    }
}

#[test]
fn odd_metric_energy_is_conserved() {
    for seed in 0..3 {
        let s = random_scenario(2, 2, 1, seed, &RandomOptions::default()).unwrap();
        let rc = reduce_connection(&s.connection());
        let rm = reduce_metric(s.metric().unwrap());
        let curve = integrate_classical(&rc, &s.chart_box, &s.initial_conditions[0], 1.0, 1e-3).unwrap();
        let e = energy(&rm, &curve).unwrap();
        let drift = e.iter().fold(0.0f64, |m, v| m.max((v - e[0]).abs()));
        assert!(drift <= 1e-6, "seed {seed}: drift {drift}");
    }
}

#[test]
fn base_projection_matches_base_geodesic() {
    for (n, q, p) in [(1, 2, 0), (2, 2, 1)] {
        let s = random_scenario(n, q, p, 5, &RandomOptions::default()).unwrap();
        let conn = s.connection();
        let base = zero_section_pullback(&reduce_connection(&conn));
        let start = &s.initial_conditions[0];
        let sup = integrate_super(&conn, &s.chart_box, start, 1.0, 1e-3).unwrap();
        let m = integrate_base(&base, &s.chart_box, &start.x0, &start.v0, 1.0, 1e-3).unwrap();
        for k in 0..sup.len() {
            assert!(sup_dist(&sup.f[k], &m.f[k]) <= 1e-8);
        }
    }
}

#[test]
fn correspondence_holds_on_random_scenarios() {
    for (n, q, p) in [(1, 2, 0), (1, 1, 1)] {
        let s = random_scenario(n, q, p, 1, &RandomOptions::default()).unwrap();
        let conn = s.connection();
        let rc = reduce_connection(&conn);
        for start in &s.initial_conditions {
            let d = correspondence_deviation(&conn, &rc, &s.chart_box, start, 1.0, 1e-3).unwrap();
            assert!(d <= 1e-6, "({n},{q},{p}): {d}");
        }
    }
}

#[test]
fn corrupted_reduction_breaks_correspondence() {
    let s = random_scenario(1, 2, 0, 2, &RandomOptions::default()).unwrap();
    let conn = s.connection();
    let rc = reduce_connection(&conn);
    let broken = ReducedConnection::custom(rc.chart().clone(), move |x| {
        let mut t = rc.symbols_at(x)?;
        // Γ^TE{}^{e1}_{x e1}
        t.get_mut(1, 0, 1).constant += 0.5;
        Ok(t)
    });
    let start = ic(&[0.0], &[0.4], &[0.5, 0.5], &[1.0, -1.0]);
    let d = correspondence_deviation(&conn, &broken, &s.chart_box, &start, 1.0, 1e-3).unwrap();
    assert!(d > 1e-3, "{d}");
}

#[test]
fn leaving_the_chart_reports_partial_data() {
    let s = random_scenario(1, 2, 0, 0, &RandomOptions::default()).unwrap();
    let conn = s.connection();
    let rc = reduce_connection(&conn);
    let fast = ic(&[0.5], &[2.0], &[0.0, 0.0], &[0.0, 0.0]);
    match correspondence(&conn, &rc, &s.chart_box, &fast, 1.0, 1e-3) {
        Err(FlowError::Truncated { t, partial }) => {
            assert!(t > 0.0 && t < 1.0);
            assert!(partial.truncated);
            assert!(!partial.is_empty());
        }
        other => panic!("expected truncation, got {other:?}"),
    }
    let outside = ic(&[1.5], &[0.0], &[0.0, 0.0], &[0.0, 0.0]);
    assert!(integrate_super(&conn, &s.chart_box, &outside, 1.0, 1e-3).is_err());
}

#[test]
fn integration_is_deterministic() {
    let s = random_scenario(2, 2, 1, 7, &RandomOptions::default()).unwrap();
    let conn = s.connection();
    let a = integrate_super(&conn, &s.chart_box, &s.initial_conditions[1], 0.5, 1e-2).unwrap();
    let b = integrate_super(&conn, &s.chart_box, &s.initial_conditions[1], 0.5, 1e-2).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 51);
    assert!(a.times.windows(2).all(|w| w[1] > w[0]));
}
