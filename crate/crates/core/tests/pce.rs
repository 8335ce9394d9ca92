use muq::pce::*;

fn exp_surrogate() -> PceSurrogate {
    let rule = tensor_rule(10, 1).unwrap();
    let basis = multi_indices(1, 9).unwrap();
    pseudospectral_fit(
        |_, t: &[f64]| Ok::<_, String>(vec![(0.5 * t[0]).exp()]),
        &rule,
        &basis,
        vec!["Y".into()],
    )
    .unwrap()
}

/// `E[θ^m]` of a standard normal: `(m − 1)!!` for even `m`.
fn normal_moment(m: usize) -> f64 {
    if m % 2 == 1 {
        0.0
    } else {
        (1..m).step_by(2).map(|k| k as f64).product()
    }
}

#[test]
fn gauss_hermite_degree_of_exactness() {
    for n_w in 2..=10 {
        let rule = gauss_hermite(n_w).unwrap();
        let quad = |m: usize| -> f64 {
            rule.nodes
                .iter()
                .zip(&rule.weights)
                .map(|(x, w)| w * x.powi(m as i32))
                .sum()
        };
        // odd moments cancel between symmetric nodes, so errors are measured
        // against the size of the terms being summed
        let scale = |m: usize| -> f64 {
            rule.nodes
                .iter()
                .zip(&rule.weights)
                .map(|(x, w)| w * x.abs().powi(m as i32))
                .sum()
        };
        for m in 0..2 * n_w {
            let exact = normal_moment(m);
            let err = (quad(m) - exact).abs() / scale(m);
            assert!(err < 1e-10, "n_w={n_w} m={m}: {err:e}");
        }
        let m = 2 * n_w;
        let err = (quad(m) - normal_moment(m)).abs() / normal_moment(m);
        assert!(err > 1e-6, "n_w={n_w} should not integrate degree {m}");
    }
}

#[test]
fn tensor_rule_for_three_inputs_has_a_thousand_nodes() {
    let r = tensor_rule(10, 3).unwrap();
    assert_eq!(r.n_q(), 1000);
    assert!((r.weights().iter().sum::<f64>() - 1.0).abs() < 1e-14);
}

#[test]
fn lognormal_moments() {
    let s = exp_surrogate();
    let (mean, var) = moments(&s);
    assert!((mean[0] - 0.125f64.exp()).abs() < 1e-6);
    let exact = 0.25f64.exp() * (0.25f64.exp() - 1.0);
    assert!((var[0] - exact).abs() < 1e-4);
    // coefficient k of exp(aθ) is e^{a²/2} a^k / sqrt(k!)
    let mut fact = 1.0;
    for (k, c) in s.coeffs()[0].iter().enumerate() {
        if k > 0 {
            fact *= k as f64;
        }
        let exact = 0.125f64.exp() * 0.5f64.powi(k as i32) / fact.sqrt();
        // degree-12 terms alias into the top coefficients at the 1e-8 level
        assert!((c - exact).abs() < 1e-7, "coefficient {k}");
    }
    let at_zero = surrogate_eval(&s, &[0.0]).unwrap()[0];
    assert!((at_zero - 1.0).abs() < 1e-6);
}

#[test]
fn linear_map_is_recovered_exactly() {
    let rule = tensor_rule(10, 1).unwrap();
    let basis = multi_indices(1, 9).unwrap();
    let s = pseudospectral_fit(
        |_, t: &[f64]| Ok::<_, String>(vec![2.0 + 3.0 * t[0]]),
        &rule,
        &basis,
        vec!["Y".into()],
    )
    .unwrap();
    let c = &s.coeffs()[0];
    assert!((c[0] - 2.0).abs() < 1e-12);
    assert!((c[1] - 3.0).abs() < 1e-12);
    assert!(c[2..].iter().all(|v| v.abs() < 1e-12));
    let (mean, var) = moments(&s);
    assert!((mean[0] - 2.0).abs() < 1e-12 && (var[0] - 9.0).abs() < 1e-11);

    let t = cdf_table(&s, &[InputDistribution::untruncated(0.0, 1.0)], 100_000, 1, false).unwrap();
    assert!((t[0].quantile(0.975) - (2.0 + 3.0 * 1.959964)).abs() < 0.1);
}

#[test]
fn moments_agree_with_sampling_the_surrogate() {
    let s = exp_surrogate();
    let (mean, var) = moments(&s);
    let n = 1_000_000;
    let germs = sample_germs(&[InputDistribution::untruncated(0.0, 1.0)], n, 5);
    let vals: Vec<f64> = germs.iter().map(|g| surrogate_eval(&s, g).unwrap()[0]).collect();
    let m = vals.iter().sum::<f64>() / n as f64;
    let se = (var[0] / n as f64).sqrt();
    assert!((m - mean[0]).abs() < 3.0 * se, "{m} vs {} (se {se:e})", mean[0]);
}

#[test]
fn symmetric_output_has_median_zero() {
    let rule = tensor_rule(4, 1).unwrap();
    let basis = multi_indices(1, 3).unwrap();
    let s = fit_from_values(
        &(0..4).map(|j| vec![rule.node(j)[0]]).collect::<Vec<_>>(),
        &rule,
        &basis,
        vec!["Y".into()],
    )
    .unwrap();
    let t = cdf_table(&s, &[InputDistribution::untruncated(0.0, 1.0)], 100_000, 3, false).unwrap();
    assert!((t[0].eval(0.0) - 0.5).abs() < 0.01);
}

#[test]
fn csv_tables() {
    let mut out = Vec::new();
    write_moments_csv(&mut out, &["E1".to_string()], &[1.5], &[0.25]).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "output_name,mean,std\nE1,1.5,0.25\n");
    let mut out = Vec::new();
    write_cdf_csv(&mut out, &[CdfTable::empirical("E1", &[2.0, 1.0])]).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("output_name,value,cdf\nE1,1,0.5\nE1,2,1"), "{text}");
}
