use votersim_core::coalesce::reaction_poly_mc;
use votersim_core::dual::{compute_from, run_dual};
use votersim_core::engine::{gen_log, replay_log, simulate_forward, Configuration};
use votersim_core::kernel::nn_kernel;
use votersim_core::model::{build_lv, build_nlv, build_voter, lv_eps1_inv2, Backend};
use votersim_core::pde::solve_ode;
use votersim_core::reaction::lv_f;
use votersim_core::Error;

#[test]
fn forward_replay_and_dual_agree_on_every_site() {
    let m = build_lv(-1.0, -0.5, 0.3, &nn_kernel(2)).unwrap();
    let torus = m.torus(9).unwrap();
    let xi0 = Configuration::bernoulli(&torus, 0.4, 5);
    let fwd = simulate_forward(&m, &xi0, 1.5, 77, Backend::Graphical, &[0.5, 1.5]).unwrap();
    assert_eq!(fwd.snapshots.len(), 2);
    assert_eq!(fwd.snapshots[1].1, fwd.config);
    let log = gen_log(&m, &torus, 1.5, 77).unwrap();
    assert_eq!(replay_log(&m, &xi0, &log, 1.5).unwrap(), fwd.config);
    assert_eq!(replay_log(&m, &xi0, &log, 0.5).unwrap(), fwd.snapshots[0].1);
    let all: Vec<usize> = (0..torus.sites()).collect();
    let d = run_dual(&m, &torus, &log, &all, 1.5).unwrap();
    let values = compute_from(&d, &xi0, m.perturbation.as_ref().unwrap()).unwrap();
    assert!(all.iter().all(|&x| values[x] == fwd.config.get(x)));
    assert!(matches!(replay_log(&m, &xi0, &log, 2.0), Err(Error::HorizonExceeded { .. })));
}

#[test]
fn monte_carlo_reaction_term_drives_the_ode() {
    let k = nn_kernel(3);
    let (t0, t1) = (-1.0, -1.0);
    let m = build_lv(t0, t1, 0.1, &k).unwrap();
    let (f, law) = reaction_poly_mc(m.perturbation.as_ref().unwrap(), lv_eps1_inv2(t0, t1), &k, 300.0, 20_000, 4);
    assert_eq!(law.n, 20_000);
    let (p2, p3) = votersim_core::coalesce::p2_p3(&law);
    let closed = lv_f(t0, t1, p2, p3);
    // symmetric LV: both fixed points and u = 1/2 are equilibria, and 1/2 attracts
    let u = solve_ode(&closed, 0.2, 20.0, 1e-2).unwrap();
    assert!((u - 0.5).abs() < 0.02, "{u}");
    assert!((solve_ode(&f, 0.2, 20.0, 1e-2).unwrap() - 0.5).abs() < 0.05);
}

#[test]
fn builders_reject_bad_parameters() {
    assert!(build_voter(0.0, &nn_kernel(3)).is_err());
    assert!(build_lv(-1.0, -1.0, 1.0, &nn_kernel(3)).is_err());
    assert!(build_nlv(&[1.0, 1.0, 3.0, 3.0], 2, 1, 0.0, 0.2).is_ok());
    let m = build_voter(0.5, &nn_kernel(1)).unwrap();
    assert!(m.torus(2).is_err());
}
