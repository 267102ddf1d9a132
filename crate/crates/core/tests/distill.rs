use recdistill_core::distill::{
    bnf_interval, ctrl_step, draws, grad_norm_align, run, sds_step, stationary_ema_trace, usd_step,
    variational_eps, vsd_step, DistillConfig, MarginalTracker, Method, ParticleSet,
    VariationalScore, World,
};
use recdistill_core::linalg;
use recdistill_core::oracle;
use recdistill_core::rectify::{ExactPosterior, MarginalSource, PosteriorModel, PosteriorSource};
use recdistill_core::rng;
use recdistill_core::schedule::{DiffusionSchedule, LossWeight, WeightKind};
use recdistill_core::worldmodel::{Component, Covariance, PoseLabeledMixture, Renderer};
use recdistill_core::Error;

fn iso(weight: f64, mean: Vec<f64>, var: f64, category: usize) -> Component<f64> {
    Component {
        weight,
        mean,
        cov: Covariance::Isotropic(var),
        category,
    }
}

fn biased_1d() -> PoseLabeledMixture<f64> {
    PoseLabeledMixture::new(
        2,
        vec![iso(0.8, vec![-2.0], 0.25, 0), iso(0.2, vec![2.0], 0.25, 1)],
    )
    .unwrap()
}

fn balanced_1d() -> PoseLabeledMixture<f64> {
    PoseLabeledMixture::new(
        2,
        vec![iso(0.5, vec![-2.0], 0.25, 0), iso(0.5, vec![2.0], 0.25, 1)],
    )
    .unwrap()
}

fn rotated_world() -> World<f64> {
    let prior = PoseLabeledMixture::new(
        2,
        vec![
            iso(0.7, vec![-1.5, 0.5], 0.4, 0),
            iso(0.3, vec![1.5, -0.5], 0.4, 1),
        ],
    )
    .unwrap();
    World::new(
        prior,
        Renderer::Rotation {
            angles: vec![0.0, 0.6, -0.9],
        },
        DiffusionSchedule::linear_default(),
    )
    .unwrap()
}

fn start(seed: u64) -> ParticleSet<f64> {
    ParticleSet::gaussian(16, &[0.0], 0.5, 1000 + seed).unwrap()
}

fn cfg(method: Method, iters: usize) -> DistillConfig<f64> {
    DistillConfig::new(method, iters, 0.1, 2, 1000)
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    linalg::norm(&linalg::sub(a, b)) / linalg::norm(b).max(1e-300)
}

#[test]
fn variational_eps_single_particle_recovers_noise() {
    let world = rotated_world();
    let ps = ParticleSet::new(vec![vec![0.4, -1.1]], 0).unwrap();
    let mut r = rng::seeded(3);
    for (t, pose) in [(1, 0), (250, 1), (999, 2)] {
        let eps: Vec<f64> = rng::standard_normal_vec(&mut r, 2);
        let x0 = world.renderer.render(ps.get(0), pose).unwrap();
        let xt = world.schedule.perturb(&x0, t, &eps).unwrap();
        for vs in [
            VariationalScore::AnalyticParticleMixture,
            VariationalScore::SingleParticleExact,
        ] {
            let e = variational_eps(vs, &ps, &world, t, pose, 0, &xt).unwrap();
            assert!(rel(&e, &eps) < 1e-9, "t={t}");
        }
    }
}

#[test]
fn variational_eps_symmetric_pair_points_along_xt() {
    let world = World::identity(balanced_1d());
    let world = World::new(
        PoseLabeledMixture::new(1, vec![iso(1.0, vec![0.0, 0.0], 1.0, 0)]).unwrap(),
        Renderer::identity(2),
        world.schedule,
    )
    .unwrap();
    let ps = ParticleSet::new(vec![vec![1.0, 2.0], vec![-1.0, -2.0]], 0).unwrap();
    let xt = [0.0, 0.0];
    let e = variational_eps(
        VariationalScore::AnalyticParticleMixture,
        &ps,
        &world,
        300,
        0,
        0,
        &xt,
    )
    .unwrap();
    assert!(linalg::norm(&e) < 1e-14);
    let xt = [0.3, -0.1];
    let e = variational_eps(
        VariationalScore::AnalyticParticleMixture,
        &ps,
        &world,
        300,
        0,
        0,
        &xt,
    )
    .unwrap();
    let cross = e[0] * xt[1] - e[1] * xt[0];
    assert!(cross.abs() > 0.0 && e.iter().all(|v| v.is_finite()));
}

#[test]
fn variational_eps_matches_finite_difference_of_particle_mixture() {
    let world = rotated_world();
    let ps = ParticleSet::gaussian(5, &[0.0, 0.0], 1.5, 8).unwrap();
    let mut r = rng::seeded(5);
    for _ in 0..20 {
        let t = 1 + (rng::standard_normal::<f64, _>(&mut r).abs() * 300.0) as usize % 1000;
        let pose = 1;
        let xt: Vec<f64> = rng::standard_normal_vec(&mut r, 2);
        let (a, s) = (world.schedule.alpha(t), world.schedule.sigma(t));
        let means: Vec<Vec<f64>> = ps
            .particles()
            .iter()
            .map(|th| linalg::scale(&world.renderer.render(th, pose).unwrap(), a))
            .collect();
        let log_q = |x: &[f64]| {
            let terms: Vec<f64> = means
                .iter()
                .map(|m| -linalg::squared_distance(x, m) / (2.0 * s * s))
                .collect();
            linalg::log_sum_exp(&terms)
        };
        let fd = oracle::finite_difference_grad(log_q, &xt, 1e-5 * s).unwrap();
        let expect = linalg::scale(&fd, -s);
        let e = variational_eps(
            VariationalScore::AnalyticParticleMixture,
            &ps,
            &world,
            t,
            pose,
            0,
            &xt,
        )
        .unwrap();
        assert!(rel(&e, &expect) < 1e-5, "t={t}: {e:?} vs {expect:?}");
    }
}

#[test]
fn variational_eps_rejects_clean_step() {
    let world = World::identity(biased_1d());
    let ps = start(0);
    assert!(variational_eps(
        VariationalScore::AnalyticParticleMixture,
        &ps,
        &world,
        0,
        0,
        0,
        &[0.0]
    )
    .is_err());
    assert!(variational_eps(
        VariationalScore::AnalyticParticleMixture,
        &ps,
        &world,
        5,
        0,
        99,
        &[0.0]
    )
    .is_err());
}

fn single_gaussian_world() -> World<f64> {
    World::new(
        PoseLabeledMixture::new(1, vec![iso(1.0, vec![1.0, -0.5], 0.3, 0)]).unwrap(),
        Renderer::identity(2),
        DiffusionSchedule::linear_default(),
    )
    .unwrap()
}

fn mean_sds_gradient(theta: &[f64], weight: WeightKind, draws_n: usize) -> (Vec<f64>, Vec<f64>) {
    let world = single_gaussian_world();
    let ps = ParticleSet::new(vec![theta.to_vec()], 0).unwrap();
    let mut c = DistillConfig::new(Method::Sds, 1, 0.1, 1, 1000);
    c.weight = weight;
    c.batch = draws_n;
    let lw = LossWeight::new(weight, &world.schedule);
    // Per-draw gradients for the standard error.
    let ds = draws(&c, &world, 1, 0, 0, c.t_range);
    let per: Vec<Vec<f64>> = ds
        .iter()
        .map(|d| {
            let xt = world.schedule.perturb(theta, d.t, &d.eps).unwrap();
            let e = world.prior.eps_pretrain(&world.schedule, d.t, &xt).unwrap();
            linalg::scale(&linalg::sub(&e, &d.eps), lw.at(d.t))
        })
        .collect();
    let n = per.len() as f64;
    let mean: Vec<f64> = (0..2)
        .map(|k| per.iter().map(|g| g[k]).sum::<f64>() / n)
        .collect();
    let se: Vec<f64> = (0..2)
        .map(|k| (per.iter().map(|g| (g[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt())
        .collect();
    let step = sds_step(&ps, &world, &c, 0).unwrap();
    assert!(rel(&step[0], &mean) < 1e-9);
    (mean, se)
}

#[test]
fn sds_stationary_at_single_gaussian_mean() {
    let (mean, se) = mean_sds_gradient(&[1.0, -0.5], WeightKind::SigmaSquared, 10_000);
    for k in 0..2 {
        assert!(
            mean[k].abs() < 3.0 * se[k],
            "coord {k}: {} vs se {}",
            mean[k],
            se[k]
        );
    }
}

#[test]
fn sds_points_toward_mean_for_both_weightings() {
    let theta = [3.0, 1.0];
    let away = [2.0, 1.5];
    let (g_sq, _) = mean_sds_gradient(&theta, WeightKind::SigmaSquared, 4000);
    let (g_one, _) = mean_sds_gradient(&theta, WeightKind::ConstantOne, 4000);
    // Descent direction −g must point from θ toward μ.
    assert!(linalg::dot(&g_sq, &away) > 0.0);
    assert!(linalg::dot(&g_one, &away) > 0.0);
    assert!((linalg::norm(&g_sq) - linalg::norm(&g_one)).abs() > 1e-3);
}

#[test]
fn vsd_with_one_particle_equals_sds() {
    let world = rotated_world();
    let ps = ParticleSet::new(vec![vec![0.3, 0.9]], 4).unwrap();
    for iter in 0..5 {
        let mut c = DistillConfig::new(Method::Sds, 5, 0.1, 2, 1000);
        c.seed = 17;
        let sds = sds_step(&ps, &world, &c, iter).unwrap();
        c.method = Method::Vsd;
        let vsd = vsd_step(&ps, &world, &c, iter).unwrap();
        for (a, b) in sds[0].iter().zip(&vsd[0]) {
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-6), "{a} vs {b}");
        }
    }
}

#[test]
fn vsd_is_stationary_when_prior_is_the_particle_measure() {
    let ps = ParticleSet::gaussian(6, &[0.0, 0.0], 2.0, 21).unwrap();
    let comps = ps
        .particles()
        .iter()
        .map(|p| iso(1.0 / 6.0, p.clone(), 1e-12, 0))
        .collect();
    let world = World::new(
        PoseLabeledMixture::new(1, comps).unwrap(),
        Renderer::identity(2),
        DiffusionSchedule::linear_default(),
    )
    .unwrap();
    let mut c = DistillConfig::new(Method::Vsd, 1, 0.1, 1, 1000);
    c.batch = 200;
    let vsd = vsd_step(&ps, &world, &c, 0).unwrap();
    c.method = Method::Sds;
    let sds = sds_step(&ps, &world, &c, 0).unwrap();
    for (v, s) in vsd.iter().zip(&sds) {
        assert!(linalg::norm(v) < 1e-6, "vsd drift {v:?}");
        assert!(linalg::norm(s) > 1e-3);
    }
}

#[test]
fn vsd_run_keeps_prior_bias() {
    let world = World::identity(biased_1d());
    let report = run(&start(0), &world, &cfg(Method::Vsd, 4000)).unwrap();
    let split = &report.final_metrics().split;
    assert!((split[0] - 0.8).abs() <= 0.1, "split {split:?}");
}

#[test]
fn usd_run_reaches_uniform_split() {
    let world = World::identity(biased_1d());
    let mut c = cfg(Method::Usd, 4000);
    c.grad_norm_align = true;
    let report = run(&start(1), &world, &c).unwrap();
    let m = report.final_metrics();
    assert!((m.split[0] - 0.5).abs() <= 0.1, "split {:?}", m.split);
    assert!(m.entropy >= 0.95 * 2f64.ln());
}

#[test]
fn usd_equals_vsd_on_balanced_instance() {
    let world = World::identity(balanced_1d());
    let ps = start(2);
    let mut c = cfg(Method::Usd, 50);
    let mut tracker = MarginalTracker::new(&world, &c).unwrap();
    let usd = usd_step(&ps, &world, &mut tracker, &c, 0).unwrap();
    c.method = Method::Vsd;
    let vsd = vsd_step(&ps, &world, &c, 0).unwrap();
    assert_eq!(usd, vsd);

    let mut c = cfg(Method::Usd, 200);
    c.rectifier.marginal_source = MarginalSource::ExactMc;
    let a = run(&ps, &world, &c).unwrap();
    c.method = Method::Vsd;
    let b = run(&ps, &world, &c).unwrap();
    assert_eq!(a.final_particles, b.final_particles);
    assert_eq!(a.metrics, b.metrics);
}

#[test]
fn usd_minus_vsd_is_the_log_r_term() {
    let world = rotated_world();
    let ps = ParticleSet::gaussian(8, &[0.0, 0.0], 1.5, 33).unwrap();
    let mut c = DistillConfig::new(Method::Usd, 10, 0.1, 2, 1000);
    c.rectifier.marginal_source = MarginalSource::ExactMc;
    c.seed = 5;
    let exact = ExactPosterior::new(world.prior.clone());
    let lw = LossWeight::new(c.weight, &world.schedule);
    for iter in 0..4 {
        let mut tracker = MarginalTracker::new(&world, &c).unwrap();
        let usd = usd_step(&ps, &world, &mut tracker, &c, iter).unwrap();
        let mut cv = c.clone();
        cv.method = Method::Vsd;
        let vsd = vsd_step(&ps, &world, &cv, iter).unwrap();
        for i in 0..ps.len() {
            let d = &draws(&c, &world, ps.len(), i, iter, c.t_range)[0];
            let (a, s) = (world.schedule.alpha(d.t), world.schedule.sigma(d.t));
            let w = c.rectifier.weights(tracker.lookup(d.t));
            let log_r = |theta: &[f64]| {
                let x0 = world.renderer.render(theta, d.pose).unwrap();
                let xt = world.schedule.perturb(&x0, d.t, &d.eps).unwrap();
                linalg::dot(&w, &exact.posterior(&world.schedule, d.t, &xt).unwrap()).ln()
            };
            let grad_theta = oracle::finite_difference_grad(log_r, ps.get(i), 1e-4).unwrap();
            let expect = linalg::scale(&grad_theta, -lw.at(d.t) * s / a);
            let diff = linalg::sub(&usd[i], &vsd[i]);
            if linalg::norm(&expect) > 1e-8 {
                assert!(
                    rel(&diff, &expect) < 1e-5,
                    "iter {iter} particle {i} t {} {diff:?} {expect:?}",
                    d.t
                );
            }
            let x0 = world.renderer.render(ps.get(i), d.pose).unwrap();
            let xt = world.schedule.perturb(&x0, d.t, &d.eps).unwrap();
            let gx = exact
                .grad_log_r(&world.schedule, d.t, &xt, &w, 1e-3)
                .unwrap();
            let jac = world.renderer.jacobian(ps.get(i), d.pose).unwrap();
            let analytic = linalg::scale(&jac.tr_mul_vec(&gx), -lw.at(d.t) * s);
            let err = linalg::norm(&linalg::sub(&diff, &analytic));
            assert!(
                err <= 1e-10 * linalg::norm(&analytic).max(linalg::norm(&vsd[i])),
                "iter {iter} particle {i}"
            );
        }
    }
}

#[test]
fn usd_step_updates_ema_once_per_touched_interval() {
    let world = World::identity(biased_1d());
    let ps = start(3);
    let c = cfg(Method::Usd, 10);
    let mut tracker = MarginalTracker::new(&world, &c).unwrap();
    let before = tracker.values().to_vec();
    usd_step(&ps, &world, &mut tracker, &c, 0).unwrap();
    let touched: std::collections::BTreeSet<usize> = (0..ps.len())
        .map(|i| {
            tracker
                .ema()
                .interval_of(draws(&c, &world, ps.len(), i, 0, c.t_range)[0].t)
        })
        .collect();
    for (j, (b, a)) in before.iter().zip(tracker.values()).enumerate() {
        assert_eq!(b != a, touched.contains(&j), "interval {j}");
    }
}

#[test]
fn ctrl_term_vanishes_when_posterior_saturates() {
    let world = World::identity(balanced_1d());
    let ps = ParticleSet::new(vec![vec![-2.0]], 0).unwrap();
    let mut c = cfg(Method::Ctrl, 1);
    c.control_category = Some(0);
    c.t_range = (1, 30);
    for iter in 0..20 {
        let ctrl = ctrl_step(&ps, &world, &c, iter).unwrap();
        let mut cv = c.clone();
        cv.method = Method::Vsd;
        cv.control_category = None;
        let vsd = vsd_step(&ps, &world, &cv, iter).unwrap();
        assert!((ctrl[0][0] - vsd[0][0]).abs() < 1e-6);
    }
}

#[test]
fn ctrl_drives_particles_into_commanded_basin_and_mirrors() {
    let world = World::identity(balanced_1d());
    let ps = start(4);
    let mut c = cfg(Method::Ctrl, 1500);
    c.control_category = Some(0);
    let a = run(&ps, &world, &c).unwrap();
    c.control_category = Some(1);
    let b = run(&ps, &world, &c).unwrap();
    assert!(a.final_metrics().split[0] >= 0.95);
    assert!(b.final_metrics().split[1] >= 0.95);
}

#[test]
fn bnf_endpoints_and_blocks() {
    assert_eq!(bnf_interval(0, 4000, 2, 1000).unwrap(), (500, 980));
    assert_eq!(bnf_interval(1000, 4000, 2, 1000).unwrap(), (20, 980));
    assert_eq!(bnf_interval(2000, 4000, 2, 1000).unwrap(), (20, 980));
    assert_eq!(bnf_interval(3999, 4000, 2, 1000).unwrap(), (20, 500));
    assert_eq!(bnf_interval(0, 100, 1, 1000).unwrap(), (20, 980));
    assert_eq!(bnf_interval(99, 100, 1, 1000).unwrap(), (20, 1000));
    let n_i = 4;
    let mut prev_lo = usize::MAX;
    let mut prev_hi = usize::MAX;
    for it in 0..800 {
        let (lo, hi) = bnf_interval(it, 800, n_i, 1000).unwrap();
        assert!(1 <= lo && lo < hi && hi <= 1000);
        if it < 400 {
            assert!(lo <= prev_lo && hi == 980);
        } else {
            assert!(hi <= prev_hi && lo == 20);
        }
        prev_lo = lo;
        prev_hi = hi;
    }
    assert!(bnf_interval(0, 10, 0, 1000).is_err());
    assert!(bnf_interval(10, 10, 2, 1000).is_err());
}

#[test]
fn grad_norm_align_cases() {
    let p = [3.0, 4.0];
    let out = grad_norm_align(&p, &[6.0, 8.0]);
    assert!(rel(&out, &p) < 1e-15);
    assert_eq!(grad_norm_align(&p, &[0.0, 0.0]), vec![0.0, 0.0]);
    let mut r = rng::seeded(9);
    for _ in 0..50 {
        let a: Vec<f64> = rng::standard_normal_vec(&mut r, 5);
        let b: Vec<f64> = rng::standard_normal_vec(&mut r, 5);
        let out = grad_norm_align(&a, &b);
        let cos = linalg::dot(&out, &b) / (linalg::norm(&out) * linalg::norm(&b));
        assert!((cos - 1.0).abs() < 1e-12);
        assert!((linalg::norm(&out) - linalg::norm(&a)).abs() < 1e-12);
    }
}

#[test]
fn runs_are_deterministic_and_thread_independent() {
    let world = rotated_world();
    let ps = ParticleSet::gaussian(6, &[0.0, 0.0], 1.0, 2).unwrap();
    let mut c = DistillConfig::new(Method::Usd, 300, 0.05, 2, 1000);
    c.snapshot_every = 100;
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let four = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let a = one.install(|| run(&ps, &world, &c).unwrap());
    let b = four.install(|| run(&ps, &world, &c).unwrap());
    assert_eq!(a, b);
    assert_eq!(
        a.snapshots.iter().map(|s| s.iter).collect::<Vec<_>>(),
        vec![0, 100, 200, 300]
    );
    assert_eq!(a.metrics.len(), 301);
    assert_eq!(a.final_particles.len(), 6);
}

#[test]
fn divergence_is_reported_with_method_and_iteration() {
    let world = World::identity(biased_1d());
    let ps = ParticleSet::new(vec![vec![1e5], vec![-1e5]], 0).unwrap();
    let mut c = DistillConfig::new(Method::Sds, 100, 1e9, 2, 1000);
    c.weight = WeightKind::ConstantOne;
    match run(&ps, &world, &c) {
        Err(Error::Divergence {
            method, iter, norm, ..
        }) => {
            assert_eq!(method, "sds");
            assert_eq!(iter, 0);
            assert!(norm > 1e6);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn config_validation() {
    let world = World::identity(biased_1d());
    let ps = start(0);
    let c = cfg(Method::Ctrl, 1);
    assert!(matches!(run(&ps, &world, &c), Err(Error::Config(_))));
    let mut c = cfg(Method::Vsd, 1);
    c.control_category = Some(0);
    assert!(run(&ps, &world, &c).is_err());
    let mut c = cfg(Method::Ctrl, 1);
    c.control_category = Some(2);
    assert!(run(&ps, &world, &c).is_err());
    let mut c = cfg(Method::Vsd, 1);
    c.eta1 = 0.0;
    assert!(run(&ps, &world, &c).is_err());
    let mut c = cfg(Method::Vsd, 1);
    c.t_range = (0, 10);
    assert!(run(&ps, &world, &c).is_err());
    let c = cfg(Method::Vsd, 1);
    assert!(sds_step(&ps, &world, &c, 0).is_err());
    assert!(ParticleSet::<f64>::new(vec![], 0).is_err());
    assert!(ParticleSet::new(vec![vec![f64::NAN]], 0).is_err());
    assert!(World::new(
        biased_1d(),
        Renderer::identity(2),
        DiffusionSchedule::linear_default()
    )
    .is_err());
    assert_eq!(Method::from_name("usd").unwrap(), Method::Usd);
    assert!(Method::from_name("nope").is_err());
}

#[test]
fn marginal_sources() {
    let world = World::identity(biased_1d());
    let mut c = cfg(Method::Usd, 1);
    c.rectifier.marginal_source = MarginalSource::ExactMc;
    let t = MarginalTracker::new(&world, &c).unwrap();
    assert!(t.values().iter().all(|v| v == &vec![0.8, 0.2]));

    c.rectifier.posterior_source = PosteriorSource::ClassifierTweedie;
    c.classifier.length_scale = 0.5;
    let t = MarginalTracker::new(&world, &c).unwrap();
    assert!(t
        .values()
        .iter()
        .all(|v| (v.iter().sum::<f64>() - 1.0).abs() < 1e-9));

    let mut c = cfg(Method::Usd, 1);
    c.rectifier.marginal_source = MarginalSource::FixedPresampled;
    let mut t = MarginalTracker::new(&world, &c).unwrap();
    let first = t.values()[0].clone();
    assert!(t.values().iter().all(|v| v == &first));
    assert!(first
        .iter()
        .all(|&p| (p * 8.0 - (p * 8.0).round()).abs() < 1e-6));
    t.observe(&[(500, vec![0.0, 1.0])]).unwrap();
    assert_eq!(t.values()[5], first);
}

#[test]
fn stationary_ema_tracks_particle_marginal() {
    let prior = biased_1d();
    let world = World::identity(prior.clone());
    let ps = ParticleSet::from_prior(&prior, 16, 1).unwrap();
    let tail_max = |n_ema: u64| {
        let mut c = cfg(Method::Usd, 2000);
        c.n_ema = n_ema;
        let tr = stationary_ema_trace(&ps, &world, &c, 2000, 5000).unwrap();
        let tv = tr.tv_series().unwrap();
        tv[1500..].iter().cloned().fold(0.0, f64::max)
    };
    assert!(tail_max(100) < 0.05);
    assert!(tail_max(10_000) > 0.05);
}

#[test]
fn generic_over_f32() {
    let prior = PoseLabeledMixture::<f32>::new(
        2,
        vec![
            Component {
                weight: 0.8,
                mean: vec![-2.0],
                cov: Covariance::Isotropic(0.25),
                category: 0,
            },
            Component {
                weight: 0.2,
                mean: vec![2.0],
                cov: Covariance::Isotropic(0.25),
                category: 1,
            },
        ],
    )
    .unwrap();
    let world = World::identity(prior);
    let ps = ParticleSet::<f32>::gaussian(8, &[0.0], 0.5, 1).unwrap();
    let mut c = DistillConfig::<f32>::new(Method::Usd, 200, 0.1, 2, 1000);
    c.grad_norm_align = true;
    let r = run(&ps, &world, &c).unwrap();
    assert!(r.final_particles.iter().flatten().all(|v| v.is_finite()));
}
