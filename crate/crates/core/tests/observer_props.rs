use koopman_adapt::{DictionaryFamily, KalmanState, KoopmanModel, Matrix, ObservableDictionary};
use nalgebra::{DVector, SymmetricEigen};
use proptest::prelude::*;

fn dict() -> ObservableDictionary {
    ObservableDictionary::from_family(2, &DictionaryFamily::Trig { states: vec![0] }, 0).unwrap()
}

fn model(vals: &[f64], scale: f64) -> KoopmanModel {
    let k = Matrix::from_fn(4, 4, |i, j| if i == j { 0.9 } else { 0.0 } + scale * vals[(i * 4 + j) % vals.len()]);
    let b = Matrix::from_fn(4, 1, |i, _| vals[i % vals.len()]);
    KoopmanModel::new(k, b, dict(), 0.01).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn covariance_stays_psd(
        vals in proptest::collection::vec(-1.0f64..1.0, 16),
        q in 1e-9f64..1.0,
        r in 1e-9f64..1.0,
        ys in proptest::collection::vec(-1.0f64..1.0, 100),
    ) {
        let mut kf = KalmanState::new(DVector::zeros(4), Matrix::identity(4, 4), Matrix::identity(4, 4) * q, r).unwrap();
        let models = [model(&vals, 0.1), model(&vals[3..], -0.2)];
        for (k, y) in ys.iter().enumerate() {
            kf.correct(&dict(), *y).unwrap();
            kf.predict(&models[k % 2], &DVector::from_element(1, *y)).unwrap();
            prop_assert_eq!(&kf.p, &kf.p.transpose());
            let lo = SymmetricEigen::new(kf.p.clone()).eigenvalues.min();
            prop_assert!(lo >= -1e-10 * kf.p.amax().max(1.0), "min eigenvalue {}", lo);
        }
    }

    #[test]
    fn prediction_uses_the_model_it_is_given(
        vals in proptest::collection::vec(-1.0f64..1.0, 16),
        u in -1.0f64..1.0,
    ) {
        // swapping the model between samples: the prior mean is K psi + B u of the new model
        let start = KalmanState::new(DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]), Matrix::identity(4, 4), Matrix::identity(4, 4) * 1e-3, 1e-3).unwrap();
        for m in [model(&vals, 0.1), model(&vals[5..], 0.3)] {
            let mut kf = start.clone();
            let uv = DVector::from_element(1, u);
            kf.predict(&m, &uv).unwrap();
            let expected = &m.k * &start.psi_hat + &m.b * &uv;
            prop_assert!((&kf.psi_hat - expected).amax() < 1e-15);
            let p_expected = &m.k * &start.p * m.k.transpose() + &start.q;
            prop_assert!((&kf.p - p_expected).amax() < 1e-12);
        }
    }
}
