use agmmn::copulas::{CopulaSpec, Dependence, Family};
use agmmn::lowdisc::{sobol_points, SobolStream};
use agmmn::stats::{kendall_tau, ks_uniform};

#[test]
fn sample_tau_and_uniform_margins() {
    for family in [
        Family::Clayton,
        Family::Gumbel,
        Family::Gaussian,
        Family::StudentT { df: 4.0 },
    ] {
        for tau in [0.25, 0.5] {
            let spec = CopulaSpec::from_tau(family.clone(), 3, tau).unwrap();
            let u = spec.sample(4000, 8).unwrap();
            let t = kendall_tau(&u.column(0).to_vec(), &u.column(2).to_vec()).unwrap();
            assert!((t - tau).abs() < 0.04, "{} tau {tau}: sample {t}", family.name());
            for j in 0..3 {
                let (_, p) = ks_uniform(&u.column(j).to_vec()).unwrap();
                assert!(p > 0.001, "{} margin {j}: p = {p}", family.name());
            }
        }
    }
}

#[test]
fn rosenblatt_pushforward_of_sobol() {
    let spec = CopulaSpec {
        family: Family::Clayton,
        dim: 2,
        dependence: Dependence::Theta(2.0),
    };
    let v = sobol_points(&SobolStream::shifted(2, 1).unwrap(), 1 << 12).unwrap();
    let u = spec.rosenblatt_inverse(v.view()).unwrap();
    let t = kendall_tau(&u.column(0).to_vec(), &u.column(1).to_vec()).unwrap();
    assert!((t - 0.5).abs() < 0.02, "{t}");
    assert_eq!(u.column(0), v.column(0));
}

#[test]
fn independent_gaussian_is_identity() {
    let spec = CopulaSpec {
        family: Family::Gaussian,
        dim: 4,
        dependence: Dependence::Rho(0.0),
    };
    let v = sobol_points(&SobolStream::new(4).unwrap(), 1000).unwrap();
    let u = spec.rosenblatt_inverse(v.view()).unwrap();
    let worst = (&u - &v).iter().fold(0.0f64, |a, b| a.max(b.abs()));
    assert!(worst < 1e-9, "{worst}");
}

#[test]
fn rosenblatt_unavailable_for_gumbel_and_t() {
    let v = sobol_points(&SobolStream::new(2).unwrap(), 8).unwrap();
    for family in [Family::Gumbel, Family::StudentT { df: 4.0 }] {
        let spec = CopulaSpec::from_tau(family, 2, 0.5).unwrap();
        assert!(spec.rosenblatt_inverse(v.view()).is_err());
    }
}
