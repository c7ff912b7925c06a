//! The composed loop must agree with the module-level pieces it was built
//! from: same layouts, same derivatives, same jump rule, same invariants.

use approx::assert_abs_diff_eq;
use isc_core::analysis::performance_index;
use isc_core::closed_loop::{
    compose_closed_loop, default_step, ControllerKind, LoopInit, PlantVariant, StateLayout,
};
use isc_core::controllers::{
    fxisc_rhs, gisc_rhs, hmisc_flow, FxiscState, GiscState, HmiscState,
};
use isc_core::dither::{compose_input, DitherConfig, DitherState, Frequency};
use isc_core::hybrid::{hybrid_step, simulate, HybridTime, IntegratorConfig, StepEvent, TerminalReason};
use isc_core::plant::{behavior_rhs, density_rhs, mean_velocity};
use isc_core::config::load_preset;

fn preset() -> isc_core::config::RunConfig {
    load_preset("mnpass_static", &[]).unwrap()
}

fn dyn_preset() -> isc_core::config::RunConfig {
    load_preset("mnpass_dynamic", &[]).unwrap()
}

#[test]
fn state_dimensions_per_controller_and_plant() {
    let dims = |c, p| StateLayout::new(c, p, 1).state_dim();
    assert_eq!(dims(ControllerKind::Gisc, PlantVariant::Static), 4);
    assert_eq!(dims(ControllerKind::Fxisc, PlantVariant::Static), 5);
    assert_eq!(dims(ControllerKind::Hmisc, PlantVariant::Static), 6);
    assert_eq!(dims(ControllerKind::Gisc, PlantVariant::Dynamic), 5);
    assert_eq!(dims(ControllerKind::Fxisc, PlantVariant::Dynamic), 6);
    assert_eq!(dims(ControllerKind::Hmisc, PlantVariant::Dynamic), 7);
}

#[test]
fn trace_headers_splice_the_realized_input() {
    let cols = |c, p| {
        StateLayout::new(c, p, 1)
            .trace_columns()
            .join(",")
    };
    assert_eq!(cols(ControllerKind::Gisc, PlantVariant::Static), "t,j,rho,u_hat,u,mu1,mu2,phi");
    assert_eq!(
        cols(ControllerKind::Hmisc, PlantVariant::Static),
        "t,j,rho,u_hat,u,p,tau,mu1,mu2,phi"
    );
    assert_eq!(
        cols(ControllerKind::Fxisc, PlantVariant::Dynamic),
        "t,j,q_el,rho,u_hat,u,xi,mu1,mu2,phi"
    );
}

#[test]
fn trace_rows_follow_the_header() {
    let cfg = preset();
    let layout = StateLayout::new(ControllerKind::Gisc, PlantVariant::Static, 1);
    let x = [26.0, -2.0, 0.6, 0.8];
    let ht = HybridTime { t: 1.5, j: 3 };
    let row = layout.trace_row(&ht, &x, cfg.dither.eps_a, cfg.rho_ref);
    assert_eq!(row.len(), layout.trace_columns().len());
    assert_eq!(row[0], 1.5);
    assert_eq!(row[1], 3.0);
    assert_eq!(row[2], 26.0);
    assert_eq!(row[3], -2.0);
    assert_abs_diff_eq!(row[4], -2.0 + 0.1 * 0.6, epsilon = 1e-15);
    assert_eq!(row[5], 0.6);
    assert_eq!(row[6], 0.8);
    assert_abs_diff_eq!(row[7], 36.0, epsilon = 1e-12);
}

#[test]
fn packing_applies_rest_defaults() {
    let cfg = preset();
    let layout = StateLayout::new(ControllerKind::Hmisc, PlantVariant::Static, 1);
    let x = layout.pack(&LoopInit::new(24.0, vec![1.0]), &cfg.gains).unwrap();
    assert_eq!(x.len(), 6);
    assert_eq!(x[layout.rho()], 24.0);
    assert_eq!(x[layout.u_hat().start], 1.0);
    // p rests at u_hat, tau at T0, mu at the standard phase.
    assert_eq!(x[layout.p().unwrap().start], 1.0);
    assert_eq!(x[layout.tau().unwrap()], cfg.gains.t0);
    assert_eq!(&x[layout.mu()], &[1.0, 0.0]);

    let layout = StateLayout::new(ControllerKind::Fxisc, PlantVariant::Dynamic, 1);
    let x = layout
        .pack(&LoopInit::new(24.0, vec![1.0]).with_q_el(700.0), &cfg.gains)
        .unwrap();
    assert_eq!(x[layout.q_el().unwrap()], 700.0);
    assert_eq!(x[layout.xi().unwrap().start], 0.0);
}

#[test]
fn packing_rejects_inconsistent_initial_conditions() {
    let cfg = preset();
    let st = StateLayout::new(ControllerKind::Gisc, PlantVariant::Static, 1);
    assert!(st.pack(&LoopInit::new(20.0, vec![1.0, 2.0]), &cfg.gains).is_err());
    assert!(st.pack(&LoopInit::new(20.0, vec![1.0]).with_q_el(700.0), &cfg.gains).is_err());

    let dynl = StateLayout::new(ControllerKind::Gisc, PlantVariant::Dynamic, 1);
    assert!(dynl.pack(&LoopInit::new(20.0, vec![1.0]), &cfg.gains).is_err());

    let hm = StateLayout::new(ControllerKind::Hmisc, PlantVariant::Static, 1);
    let bad_tau = LoopInit { tau: Some(100.0), ..LoopInit::new(20.0, vec![1.0]) };
    assert!(hm.pack(&bad_tau, &cfg.gains).is_err());
    let bad_p = LoopInit { p: Some(vec![1.0, 2.0]), ..LoopInit::new(20.0, vec![1.0]) };
    assert!(hm.pack(&bad_p, &cfg.gains).is_err());
}

#[test]
fn composition_rejects_multi_channel_dither_and_bad_references() {
    let cfg = preset();
    let two = DitherConfig {
        omega: vec![Frequency::from_integer(1), Frequency::new(3, 2).unwrap()],
        eps_p: 0.01,
        eps_a: 0.1,
    };
    assert!(compose_closed_loop(
        ControllerKind::Gisc,
        PlantVariant::Static,
        &cfg.gains,
        &two,
        &cfg.params,
        cfg.rho_ref
    )
    .is_err());
    assert!(compose_closed_loop(
        ControllerKind::Gisc,
        PlantVariant::Static,
        &cfg.gains,
        &cfg.dither,
        &cfg.params,
        f64::NAN
    )
    .is_err());
}

/// Evaluates the composed flow map and checks it against derivatives
/// assembled from the plant and controller modules directly.
#[test]
fn composed_flows_match_the_module_route() {
    let cfg = preset();
    let dcfg = dyn_preset();

    for (rc, variant) in [(&cfg, PlantVariant::Static), (&dcfg, PlantVariant::Dynamic)] {
        let mu = DitherState { mu: vec![-0.6, 0.8] };
        let (q_el, rho, u_hat) = (812.0, 27.0, -2.0);
        let u = compose_input(&[u_hat], &mu.mu, &rc.dither).unwrap()[0];
        let phi = performance_index(rho, rc.rho_ref);

        let plant_expected: Vec<f64> = match variant {
            PlantVariant::Static => vec![density_rhs(rho, u, &rc.params) / rc.params.eps0],
            PlantVariant::Dynamic => {
                let dq = rc.params.k_m * behavior_rhs(q_el, u, &rc.params).unwrap() / rc.params.eps0;
                let drho = (rc.params.k_rho / (rc.params.l * rc.params.eps0))
                    * (q_el - mean_velocity(rho, &rc.params) * rho);
                vec![dq, drho]
            }
        };

        // GISC
        let layout = StateLayout::new(ControllerKind::Gisc, variant, 1);
        let spec = compose_closed_loop(
            ControllerKind::Gisc,
            variant,
            &rc.gains,
            &rc.dither,
            &rc.params,
            rc.rho_ref,
        )
        .unwrap();
        let mut x = vec![0.0; layout.state_dim()];
        if let Some(qi) = layout.q_el() {
            x[qi] = q_el;
        }
        x[layout.rho()] = rho;
        x[layout.u_hat().start] = u_hat;
        x[layout.mu()].copy_from_slice(&mu.mu);
        let mut dx = vec![0.0; x.len()];
        (spec.flow_map)(&x, &mut dx);
        let reference = gisc_rhs(
            &GiscState { u_hat: vec![u_hat], mu: mu.clone() },
            phi,
            &rc.gains,
            &rc.dither,
        )
        .unwrap();
        for (i, pe) in plant_expected.iter().enumerate() {
            assert_abs_diff_eq!(dx[i], *pe, epsilon = 1e-9 * pe.abs().max(1.0));
        }
        assert_abs_diff_eq!(
            dx[layout.u_hat().start],
            reference.u_hat[0],
            epsilon = 1e-9 * reference.u_hat[0].abs().max(1.0)
        );
        assert_abs_diff_eq!(dx[layout.mu().start], reference.mu[0], epsilon = 1e-9);
        assert_abs_diff_eq!(dx[layout.mu().start + 1], reference.mu[1], epsilon = 1e-6);

        // HMISC
        let layout = StateLayout::new(ControllerKind::Hmisc, variant, 1);
        let spec = compose_closed_loop(
            ControllerKind::Hmisc,
            variant,
            &rc.gains,
            &rc.dither,
            &rc.params,
            rc.rho_ref,
        )
        .unwrap();
        let (p_val, tau_val) = (0.7, 0.6 * rc.gains.t0 + 0.4 * rc.gains.t);
        let mut x = vec![0.0; layout.state_dim()];
        if let Some(qi) = layout.q_el() {
            x[qi] = q_el;
        }
        x[layout.rho()] = rho;
        x[layout.u_hat().start] = u_hat;
        x[layout.p().unwrap().start] = p_val;
        x[layout.tau().unwrap()] = tau_val;
        x[layout.mu()].copy_from_slice(&mu.mu);
        let mut dx = vec![0.0; x.len()];
        (spec.flow_map)(&x, &mut dx);
        let reference = hmisc_flow(
            &HmiscState { u_hat: vec![u_hat], p: vec![p_val], tau: tau_val, mu: mu.clone() },
            phi,
            &rc.gains,
            &rc.dither,
        )
        .unwrap();
        assert_abs_diff_eq!(
            dx[layout.u_hat().start],
            reference.u_hat[0],
            epsilon = 1e-9 * reference.u_hat[0].abs().max(1.0)
        );
        assert_abs_diff_eq!(
            dx[layout.p().unwrap().start],
            reference.p[0],
            epsilon = 1e-9 * reference.p[0].abs().max(1.0)
        );
        assert_eq!(dx[layout.tau().unwrap()], 0.5);

        // FxISC
        let layout = StateLayout::new(ControllerKind::Fxisc, variant, 1);
        let spec = compose_closed_loop(
            ControllerKind::Fxisc,
            variant,
            &rc.gains,
            &rc.dither,
            &rc.params,
            rc.rho_ref,
        )
        .unwrap();
        let xi_val = 0.37;
        let mut x = vec![0.0; layout.state_dim()];
        if let Some(qi) = layout.q_el() {
            x[qi] = q_el;
        }
        x[layout.rho()] = rho;
        x[layout.u_hat().start] = u_hat;
        x[layout.xi().unwrap().start] = xi_val;
        x[layout.mu()].copy_from_slice(&mu.mu);
        let mut dx = vec![0.0; x.len()];
        (spec.flow_map)(&x, &mut dx);
        let reference = fxisc_rhs(
            &FxiscState { u_hat: vec![u_hat], xi: vec![xi_val], mu: mu.clone() },
            phi,
            &rc.gains,
            &rc.dither,
        )
        .unwrap();
        assert_abs_diff_eq!(
            dx[layout.u_hat().start],
            reference.u_hat[0],
            epsilon = 1e-9 * reference.u_hat[0].abs().max(1.0)
        );
        assert_abs_diff_eq!(
            dx[layout.xi().unwrap().start],
            reference.xi[0],
            epsilon = 1e-9 * reference.xi[0].abs().max(1.0)
        );
    }
}

#[test]
fn only_the_momentum_loop_can_jump() {
    let cfg = preset();
    for kind in [ControllerKind::Gisc, ControllerKind::Fxisc] {
        let layout = StateLayout::new(kind, PlantVariant::Static, 1);
        let spec = compose_closed_loop(
            kind,
            PlantVariant::Static,
            &cfg.gains,
            &cfg.dither,
            &cfg.params,
            cfg.rho_ref,
        )
        .unwrap();
        let x = layout.pack(&LoopInit::new(20.0, vec![0.0]), &cfg.gains).unwrap();
        assert!((spec.flow_set)(&x));
        assert!(!(spec.jump_set)(&x));
    }
}

#[test]
fn momentum_jump_resets_timer_and_preserves_the_rest() {
    let cfg = preset();
    let layout = StateLayout::new(ControllerKind::Hmisc, PlantVariant::Static, 1);
    let spec = compose_closed_loop(
        ControllerKind::Hmisc,
        PlantVariant::Static,
        &cfg.gains,
        &cfg.dither,
        &cfg.params,
        cfg.rho_ref,
    )
    .unwrap();
    let init = LoopInit {
        p: Some(vec![4.5]),
        tau: Some(cfg.gains.t),
        ..LoopInit::new(33.0, vec![-1.5])
    };
    let mut x = layout.pack(&init, &cfg.gains).unwrap();
    let before = x.clone();
    assert!((spec.jump_set)(&x));

    let mut time = HybridTime { t: 7.0, j: 0 };
    let icfg = IntegratorConfig { h: 1e-3, t_max: 10.0, j_max: 10, record_stride: 1 };
    let event = hybrid_step(&mut x, &mut time, &spec, &icfg).unwrap();
    assert_eq!(event, StepEvent::Jumped);
    assert_eq!(time.j, 1);
    assert_eq!(time.t, 7.0);
    // sigma = 0 in this preset: p+ = u_hat.
    assert_eq!(x[layout.p().unwrap().start], -1.5);
    assert_eq!(x[layout.tau().unwrap()], cfg.gains.t0);
    assert_eq!(x[layout.rho()], before[layout.rho()]);
    assert_eq!(x[layout.u_hat().start], before[layout.u_hat().start]);
    assert_eq!(&x[layout.mu()], &before[layout.mu()]);
}

#[test]
fn projection_keeps_oscillators_unit_and_driver_inside_the_box() {
    let cfg = dyn_preset();
    let layout = StateLayout::new(ControllerKind::Gisc, PlantVariant::Dynamic, 1);
    let spec = compose_closed_loop(
        ControllerKind::Gisc,
        PlantVariant::Dynamic,
        &cfg.gains,
        &cfg.dither,
        &cfg.params,
        cfg.rho_ref,
    )
    .unwrap();
    // Start at the box edge with an incentive that pushes q_el upward.
    let init = LoopInit::new(20.0, vec![-30.0]).with_q_el(cfg.params.q_demand);
    let x0 = layout.pack(&init, &cfg.gains).unwrap();
    let trace = simulate(
        &spec,
        &x0,
        &IntegratorConfig { h: cfg.step(), t_max: 0.5, j_max: 0, record_stride: 10 },
    )
    .unwrap();
    for (_, x) in &trace.samples {
        let q = x[layout.q_el().unwrap()];
        assert!((0.0..=cfg.params.q_demand).contains(&q), "q_el {q} left the box");
        let (c, s) = (x[layout.mu().start], x[layout.mu().start + 1]);
        let norm = (c * c + s * s).sqrt();
        assert!((norm - 1.0).abs() <= 1e-6, "pair norm {norm}");
    }
}

#[test]
fn seeded_at_the_optimum_the_gradient_loop_holds_density() {
    // Nominal incentive pinned at the minimizer of the steady-state cost;
    // the loop should keep the density within one vehicle of the target
    // for the whole horizon.
    let cfg = preset();
    let u_star = -5.745235516021901;
    let layout = StateLayout::new(ControllerKind::Gisc, PlantVariant::Static, 1);
    let spec = compose_closed_loop(
        ControllerKind::Gisc,
        PlantVariant::Static,
        &cfg.gains,
        &cfg.dither,
        &cfg.params,
        cfg.rho_ref,
    )
    .unwrap();
    let x0 = layout.pack(&LoopInit::new(20.0, vec![u_star]), &cfg.gains).unwrap();
    let icfg = IntegratorConfig {
        h: cfg.step(),
        t_max: cfg.sim.t_final,
        j_max: u32::MAX,
        record_stride: cfg.sim.record_stride,
    };
    let trace = simulate(&spec, &x0, &icfg).unwrap();
    assert_eq!(trace.terminal_reason, TerminalReason::Horizon);
    for (ht, x) in &trace.samples {
        assert!(
            (x[layout.rho()] - 20.0).abs() <= 1.0,
            "rho {} at t={} strayed",
            x[layout.rho()],
            ht.t
        );
        // Realized input never leaves the dither tube around u_hat.
        let u = layout.input(x, cfg.dither.eps_a)[0];
        assert!((u - x[layout.u_hat().start]).abs() <= cfg.dither.eps_a + 1e-12);
    }
}

#[test]
fn default_step_tracks_the_fastest_oscillator() {
    let cfg = preset();
    assert_abs_diff_eq!(default_step(&cfg.dither), 2e-4, epsilon = 1e-18);
    let two = DitherConfig {
        omega: vec![Frequency::from_integer(1), Frequency::new(3, 2).unwrap()],
        eps_p: 0.01,
        eps_a: 0.1,
    };
    assert_abs_diff_eq!(default_step(&two), 0.01 / 75.0, epsilon = 1e-18);
}
