//! The engine is generic over the scalar type; these tests instantiate the
//! chip and model stack in `f32` at correspondingly looser tolerances.

use fedchip_core::chip::{chip_apply, success_probability};
use fedchip_core::model::{
    build_operator, exact_gradient, loss, AnsatzSpec, LabeledExample, ParamVector,
};
use fedchip_core::statevec::PureState;
use fedchip_core::{PureState32, RealOperator32};

#[test]
fn f32_chip_matches_f32_dense_product() {
    let operator = RealOperator32::from_rows(&[
        vec![0.25f32, -0.75, 0.5, 0.1],
        vec![0.9, 0.2, -0.3, 0.4],
        vec![-0.1, 0.6, 0.7, -0.2],
        vec![0.3, -0.4, 0.05, 0.8],
    ])
    .unwrap();
    let (psi, _) = PureState32::from_real(&[0.4f32, -0.2, 0.7, 0.5]).unwrap();
    let output = chip_apply(&operator.vec_encode().unwrap(), &psi).unwrap();
    for r in 0..4 {
        let expected: f32 = (0..4)
            .map(|c| operator.entry(r, c) * psi.amplitude(c).re)
            .sum();
        let got = (output.extracted[r] / output.scale).re;
        assert!(
            (got - expected).abs() < 1e-4,
            "row {r}: {got} vs {expected}"
        );
    }
    let formula = success_probability(&operator, &psi).unwrap();
    assert!((output.success_prob - formula).abs() < 1e-5);
}

#[test]
fn f32_gradients_track_the_f64_reference() {
    let ansatz = AnsatzSpec::new(2, 2);
    let theta32 = ParamVector::new(vec![0.3f32, -0.7, 1.1, 0.4]).unwrap();
    let theta64 = ParamVector::new(vec![0.3f64, -0.7, 1.1, 0.4]).unwrap();
    let x32 = PureState::from_real(&[0.5f32, 0.5, 0.5, 0.5]).unwrap().0;
    let y32 = PureState::from_real(&[1.0f32, 0.0, 0.0, 0.0]).unwrap().0;
    let x64 = PureState::from_real(&[0.5f64, 0.5, 0.5, 0.5]).unwrap().0;
    let y64 = PureState::from_real(&[1.0f64, 0.0, 0.0, 0.0]).unwrap().0;
    let ex32 = LabeledExample::new(x32, y32).unwrap();
    let ex64 = LabeledExample::new(x64, y64).unwrap();

    let loss32 = loss(&ansatz, &theta32, &ex32).unwrap();
    let loss64 = loss(&ansatz, &theta64, &ex64).unwrap();
    assert!((f64::from(loss32) - loss64).abs() < 1e-5);

    let grad32 = exact_gradient(&ansatz, &theta32, &ex32).unwrap();
    let grad64 = exact_gradient(&ansatz, &theta64, &ex64).unwrap();
    for (g32, g64) in grad32.iter().zip(&grad64) {
        assert!((f64::from(*g32) - g64).abs() < 1e-4);
    }

    let op32 = build_operator(&ansatz, &theta32).unwrap();
    let gram = op32.transpose().matmul(&op32).unwrap();
    for r in 0..4 {
        for c in 0..4 {
            let expected = if r == c { 1.0f32 } else { 0.0 };
            assert!((gram.entry(r, c) - expected).abs() < 1e-5);
        }
    }
}
