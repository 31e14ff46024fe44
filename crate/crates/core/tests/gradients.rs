use facefit::energy::{e_total, Weights};
use facefit::gradients::{grad_total, gradcheck, gradcheck_instance, GradCheckConfig, Mode};

#[test]
fn default_instance_passes_gradcheck() {
    let report = gradcheck(&GradCheckConfig::default()).unwrap();
    println!("{}", report.table());
    assert!(report.passed);
}

#[test]
fn value_is_bit_identical_to_e_total() {
    let inst = gradcheck_instance(&GradCheckConfig::default()).unwrap();
    let problem = inst.problem();
    let e = e_total(&problem, &inst.params).unwrap();
    let (r, _) = grad_total(&problem, &inst.params, Mode::Fit).unwrap();
    assert_eq!(e.total.to_bits(), r.total.to_bits());
    assert_eq!(e, r);
}

#[test]
fn std_only_gradient_is_closed_form() {
    let mut inst = gradcheck_instance(&GradCheckConfig::default()).unwrap();
    inst.weights = Weights {
        w_photo: 0.0,
        w_reg: 1.0,
        w_rstd: 0.0,
        w_smo: 0.0,
        w_ref: 0.0,
        w_glo: 0.0,
        w_sta: 0.0,
        photo_final: false,
        ..Weights::default()
    };
    inst.landmarks.entries.clear();
    let (_, g) = grad_total(&inst.problem(), &inst.params, Mode::Fit).unwrap();
    for k in 0..inst.params.alpha.len() {
        let s = inst.model.base.sigma_g[k];
        assert_eq!(g.params.alpha[k], 2.0 * inst.params.alpha[k] / (s * s));
    }
    assert!(g.params.beta.iter().all(|&v| v == 0.0));
    assert_eq!(g.params.t.norm(), 0.0);
}
