use proptest::prelude::*;

use wz_she_lab::brownian::{local_time, sample_path, tanaka_fn_trajectory, zeta};
use wz_she_lab::experiments::ExperimentConfig;
use wz_she_lab::functionals::heat_kernel;
use wz_she_lab::noise::{mollify, GridSpec, WhiteNoiseRealization};
use wz_she_lab::rng::{derive_key, normal_at, uniform_at, CounterRng};
use wz_she_lab::she::{chaos_second_moment, chaos_term, exp_local_time_moment};
use wz_she_lab::solver::{solve_fd, FdParams, InitialCondition};
use wz_she_lab::MollifierSpec;

fn initial_condition() -> impl Strategy<Value = InitialCondition> {
    prop_oneof![
        (-3.0..3.0f64).prop_map(|value| InitialCondition::Constant { value }),
        (-2.0..2.0f64, 0.05..2.0f64).prop_map(|(amplitude, variance)| InitialCondition::Gaussian { amplitude, variance }),
        (-1.0..1.0f64, -1.0..1.0f64, 0.0..6.0f64)
            .prop_map(|(offset, amplitude, wavenumber)| InitialCondition::Cosine { offset, amplitude, wavenumber }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn counter_streams_are_pure(key in any::<u64>(), c in any::<u64>()) {
        prop_assert_eq!(normal_at(key, c).to_bits(), normal_at(key, c).to_bits());
        let u = uniform_at(key, c);
        prop_assert!(u > 0.0 && u < 1.0);
        let mut a = CounterRng::new(key);
        let mut b = CounterRng::new(key);
        for _ in 0..16 {
            prop_assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn derived_keys_differ(parent in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        prop_assume!(a != b);
        prop_assert_ne!(derive_key(parent, a), derive_key(parent, b));
    }

    #[test]
    fn initial_conditions_respect_bound(u0 in initial_condition(), x in -50.0..50.0f64, t in 0.0..3.0f64) {
        prop_assert!(u0.eval(x).abs() <= u0.bound() + 1e-12);
        prop_assert!(u0.heat_semigroup(t, x).abs() <= u0.bound() + 1e-12);
        prop_assert_eq!(u0.heat_semigroup(0.0, x), u0.eval(x));
    }

    #[test]
    fn heat_kernel_is_even_and_positive(s in 1e-3..5.0f64, y in -10.0..10.0f64) {
        prop_assert_eq!(heat_kernel(s, y), heat_kernel(s, -y));
        prop_assert!(heat_kernel(s, y) >= 0.0);
    }

    #[test]
    fn zero_noise_preserves_constants(value in -2.0..2.0f64, steps in 5usize..40) {
        let t = steps as f64 * 0.01;
        // With no noise and c = 0 a constant initial condition stays put.
        let spec = MollifierSpec::default();
        let grid = GridSpec::buffered(t, 0.5, 2e-3, 0.05, 0.1).unwrap();
        let field = mollify(&WhiteNoiseRealization::zeros(&grid).unwrap(), &spec, 0.3).unwrap();
        let sol = solve_fd(&field, 0.0, &InitialCondition::Constant { value }, &FdParams::on_field(&field, t, 0.01)).unwrap();
        for v in sol.last() {
            prop_assert!((v - value).abs() <= 1e-12 * (1.0 + value.abs()));
        }
    }

    #[test]
    fn local_time_is_monotone_in_t(seed in any::<u64>(), delta in 0.01..0.2f64) {
        let p = sample_path(1.0, 1e-3, seed).unwrap();
        let mut prev = 0.0;
        for k in 1..=10 {
            let v = local_time(&p, 0.0, k as f64 / 10.0, delta).unwrap().value;
            prop_assert!(v >= prev - 1e-12);
            prev = v;
        }
        prop_assert!(prev <= 1.0 / (2.0 * delta) + 1e-9);
    }

    #[test]
    fn zeta_is_a_contraction(a in -5.0..5.0f64, b in -5.0..5.0f64) {
        prop_assert!((zeta(a) - zeta(b)).abs() <= (a - b).abs() + 1e-15);
        prop_assert!(zeta(a).abs() <= 1.0);
    }

    #[test]
    fn tanaka_trajectory_starts_at_zero(seed in any::<u64>(), n in 1usize..64) {
        let b1 = sample_path(1.0, 1.0 / 1024.0, seed).unwrap();
        let b2 = sample_path(1.0, 1.0 / 1024.0, seed ^ 1).unwrap();
        let f = tanaka_fn_trajectory(&b1.difference(&b2).unwrap(), n).unwrap();
        prop_assert_eq!(f[0], 0.0);
        prop_assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn chaos_partial_sums_increase_to_closed_form(t in 0.0..3.0f64, k in 0usize..30) {
        prop_assert!(chaos_term(k, t) >= 0.0);
        prop_assert!(chaos_second_moment(t, k) <= exp_local_time_moment(t) * (1.0 + 1e-12));
        prop_assert!(chaos_second_moment(t, k + 1) >= chaos_second_moment(t, k));
    }

    #[test]
    fn config_json_round_trip(seed in any::<u64>(), k in 0.5..5.0f64, reps in 1usize..5000, idx in 0usize..9) {
        let name = wz_she_lab::experiments::EXPERIMENTS[idx].0;
        let mut c = ExperimentConfig::for_experiment(name).unwrap();
        c.seed = seed;
        c.convergence.realizations = reps;
        c.tolerances.insert("convergence.k_se".into(), k);
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.hash(), c.hash());
    }
}
