use twinsem_core::channel::{ChannelParams, Link, UplinkChannel};

/// Upper tail of Gamma(m, Ω/m) at `g` for integer `m`: e^{-x} Σ_{k<m} x^k / k!.
fn erlang_tail(m: u32, omega: f64, g: f64) -> f64 {
    let x = m as f64 * g / omega;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..m {
        term *= x / k as f64;
        sum += term;
    }
    (-x).exp() * sum
}

fn with(m: f64, omega: f64) -> ChannelParams {
    ChannelParams { m_shape: m, omega, ..ChannelParams::PAPER }
}

#[test]
fn delivery_probability_matches_erlang_closed_form() {
    for m in 1..=4u32 {
        for omega in [5.0, 20.0, 217.9, 1000.0] {
            let p = with(m as f64, omega);
            let g = p.threshold_gain();
            let oracle = erlang_tail(m, omega, g);
            assert!((p.delivery_probability() - oracle).abs() < 1e-12, "m={m} omega={omega}");
            assert!((p.gain_cdf(g) - (1.0 - oracle)).abs() < 1e-12);
        }
    }
}

#[test]
fn published_parameters_by_hand() {
    let p = ChannelParams::PAPER;
    // p - 10 α log10(d) - noise, at unit gain.
    let snr_unit = 5.5 - 43.1 * 110f64.log10() + 90.0;
    assert!((p.snr_db(1.0) - snr_unit).abs() < 1e-12);
    let g_star = 10f64.powf((18.0 - snr_unit) / 10.0);
    assert!((p.threshold_gain() - g_star).abs() < 1e-9);
    assert!((p.delivery_probability() - (-g_star).exp()).abs() < 1e-15);
}

#[test]
fn gain_samples_follow_the_gamma_law() {
    let p = with(2.0, 3.0);
    let mut ch = UplinkChannel::new(p, 5).unwrap();
    let mut xs: Vec<f64> = (0..200_000).map(|_| ch.sample_gain()).collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let ks = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = 1.0 - erlang_tail(2, 3.0, x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max);
    // 1.63 / sqrt(n) is the 1% critical value.
    assert!(ks < 1.63 / n.sqrt(), "KS distance {ks}");
    let mean = xs.iter().sum::<f64>() / n;
    assert!((mean - 3.0).abs() < 0.02);
}

#[test]
fn empirical_delivery_tracks_analytic_rate() {
    let calibrated = ChannelParams::calibrated_default();
    let sets = [
        ChannelParams::PAPER,
        calibrated,
        ChannelParams { m_shape: 2.0, ..calibrated },
        ChannelParams { m_shape: 0.7, omega: 60.0, ..calibrated },
        ChannelParams { d: 60.0, beta_db: 15.0, ..ChannelParams::PAPER },
    ];
    for (i, p) in sets.into_iter().enumerate() {
        let mut ch = UplinkChannel::new(p, 100 + i as u64).unwrap();
        let n = 1_000_000;
        let hits = (0..n).filter(|_| ch.transmit(44).unwrap().delivered).count();
        let rate = hits as f64 / n as f64;
        assert!((rate - p.delivery_probability()).abs() < 0.005, "set {i}: {rate} vs {}", p.delivery_probability());
    }
}

#[test]
fn calibration_hits_its_target() {
    for target in [0.5, 0.9, 0.95, 0.99] {
        let p = ChannelParams::PAPER.calibrate_omega(target).unwrap();
        assert!((p.delivery_probability() - target).abs() < 1e-9);
        let b = ChannelParams::PAPER.calibrate_beta(target).unwrap();
        assert!((b.delivery_probability() - target).abs() < 1e-9);
        assert_eq!(b.omega, ChannelParams::PAPER.omega);
    }
}

#[test]
fn same_seed_same_outcomes() {
    let p = ChannelParams::calibrated_default();
    let run = |seed| {
        let mut ch = UplinkChannel::new(p, seed).unwrap();
        (0..1000).map(|_| ch.transmit(28).unwrap().gain).collect::<Vec<_>>()
    };
    assert_eq!(run(9), run(9));
    assert_ne!(run(9), run(10));
}
