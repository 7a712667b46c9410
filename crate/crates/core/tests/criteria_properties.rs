use boltzmann_core::criteria::*;
use boltzmann_core::Potential;

fn pot(s: &str) -> Potential {
    Potential::parse(s, 1).unwrap()
}

const SHIFTS: [f64; 2] = [-5.5, 3.25];

fn family() -> Vec<Potential> {
    vec![
        pot("x^2"),
        pot("x^4 - x^2"),
        pot("x^4"),
        pot("log(1 + x^2)"),
        Potential::example56(1.0),
        Potential::example56(-2.0),
    ]
}

#[test]
fn bakry_emery_is_shift_invariant() {
    let bx = ScanBox::with_spacing(1, 50.0, 0.01);
    for p in family() {
        let base = check_bakry_emery(&p, &bx);
        for c in SHIFTS {
            let s = check_bakry_emery(&p.shifted(c), &bx);
            assert_eq!(s.verdict, base.verdict, "{}", p.label());
            assert_eq!(s.real("K"), base.real("K"), "{}", p.label());
        }
    }
}

#[test]
fn sgp_checks_are_shift_invariant() {
    let shells = ShellConfig::default();
    for p in family() {
        let a = check_sgp_1d(&p, &shells).unwrap();
        let b = check_sgp_nd(&p, &shells).unwrap();
        for c in SHIFTS {
            let q = p.shifted(c);
            assert_eq!(check_sgp_1d(&q, &shells).unwrap().verdict, a.verdict, "{}", p.label());
            assert_eq!(check_sgp_nd(&q, &shells).unwrap().verdict, b.verdict, "{}", p.label());
        }
    }
}

#[test]
fn remark54_part_a_is_shift_invariant_up_to_the_constant() {
    let cfg = Remark54Config::default();
    for p in [pot("x^2"), pot("x^4"), pot("x^2 + sin(x)")] {
        let a = check_remark54(&p, &cfg).unwrap();
        let eta = a.real("eta").expect("part (a) finds an eta");
        for c in SHIFTS {
            let s = check_remark54(&p.shifted(c), &cfg).unwrap();
            assert_eq!(s.real("eta"), Some(eta), "{}", p.label());
            // V - eta (F + c) = (V - eta F) - eta c
            let dc = s.real("c").unwrap() - a.real("c").unwrap();
            assert!((dc - eta * c).abs() < 1e-9 * (1.0 + a.real("c").unwrap().abs()), "{}: {dc}", p.label());
        }
    }
}

#[test]
fn thm48_is_monotone_in_beta_on_the_quartic() {
    let cfg = WellConfig::default();
    let p = pot("x^4");
    let betas = [4.0, 2.0, 1.0, 0.5, 0.25];
    let holds: Vec<bool> = betas.iter().map(|&b| check_thm48(&p, b, 1.0, &cfg).unwrap().holds()).collect();
    assert!(holds.iter().any(|&h| h));
    for i in 0..betas.len() {
        for j in i + 1..betas.len() {
            assert!(!holds[i] || holds[j], "holds at beta={} but not at {}", betas[i], betas[j]);
        }
    }
}

#[test]
fn uniform_convexity_implies_the_gap_criterion() {
    let cases = [
        ("x^2", 1),
        ("x^4 + x^2", 1),
        ("x^2 + 0.3*sin(x)", 1),
        ("x1^2 + x2^2", 2),
        ("x1^2 + x2^2 + 0.1*x1^4", 2),
    ];
    for (e, n) in cases {
        let p = Potential::parse(e, n).unwrap();
        let bx = ScanBox::with_spacing(n, 20.0, 0.01);
        let be = check_bakry_emery(&p, &bx);
        assert!(be.holds(), "{e}");
        let sgp = check_sgp_nd(&p, &ShellConfig { r_max: 40.0, ..ShellConfig::default() }).unwrap();
        assert!(sgp.holds(), "{e}: {sgp:?}");
    }
}

#[test]
fn example56_family_battery() {
    let m = MalrieuConfig::default();
    for beta in [0.0, 1.0, -1.0, 1.9, -1.9] {
        let r = check_malrieu_roberto(&Potential::example56(beta), &m).unwrap();
        assert!(r.holds(), "beta={beta}");
    }
    let cfg = WellConfig::default();
    for beta in [-2.0, 2.0] {
        let r = check_thm48(&Potential::example56(beta), 1.0, 1.0, &cfg).unwrap();
        assert!(r.fails(), "beta={beta}");
        assert_eq!(r.flag("w_bounded_below"), Some(false));
    }
    let bx = ScanBox::with_spacing(1, 100.0, 0.01);
    assert!(check_bakry_emery(&Potential::example56(1.0), &bx).fails());
    let r = necessary_condition_thm410(&Potential::example56(-2.0), 1.0, 1.0, &Thm410Config::default()).unwrap();
    assert!(r.fails());
    assert_eq!(r.flag("dlsi_fails"), Some(true));
}

#[test]
fn necessary_integral_is_bounded_by_the_thm48_integral() {
    for e in ["x^2", "x^4"] {
        let p = pot(e);
        let t48 = check_thm48(&p, 1.0, 1.0, &WellConfig::default()).unwrap();
        assert!(t48.holds(), "{e}");
        let r = necessary_condition_thm410(&p, 1.0, 1.0, &Thm410Config::default()).unwrap();
        assert!(!r.fails(), "{e}");
        assert_eq!(r.flag("necessary_condition_met"), Some(true));
        // the survival probability is at most 1; allow for the coarse outer rule
        let (l410, l48) = (r.real("log_integral").unwrap(), t48.real("log_integral").unwrap());
        assert!(l410 <= l48 + 0.2, "{e}: {l410} vs {l48}");
    }
}

#[test]
fn holley_stroock_propagation_is_shift_invariant() {
    let base = LsiConstants::new(0.5, 0.0).unwrap();
    let bx = ScanBox::with_spacing(1, 50.0, 0.01);
    let a = propagate_holley_stroock(base, &pot("sin(x)"), &bx);
    let b = propagate_holley_stroock(base, &pot("sin(x) + 4"), &bx);
    assert!((a.oscillation - b.oscillation).abs() < 1e-12);
}
