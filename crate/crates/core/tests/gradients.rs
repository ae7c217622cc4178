mod common;

use common::*;

#[test]
fn every_primitive_matches_finite_differences() {
    for (name, r) in primitive_checks() {
        assert!(r.checked > 0, "{name}: nothing probed");
        assert!(r.max_rel_error < TOL, "{name}: {} ({})", r.max_rel_error, r.worst);
    }
}

#[test]
fn encoder_decoder_loss() {
    for seed in [1, 2] {
        let r = nmt_check(seed);
        assert!(r.max_rel_error < TOL, "{}: {}", r.max_rel_error, r.worst);
    }
}

#[test]
fn discriminator_and_generator_objectives() {
    for r in [gan_d_check(7), gan_g_check(7), gan_mt_check(7)] {
        assert!(r.max_rel_error < TOL, "{}: {}", r.max_rel_error, r.worst);
    }
}

#[test]
fn language_model_and_fusion() {
    for r in [lm_check(8), fusion_check(8)] {
        assert!(r.max_rel_error < TOL, "{}: {}", r.max_rel_error, r.worst);
    }
}

#[test]
fn a_wrong_gradient_is_caught() {
    use mtmono_core::tensor::gradcheck;
    use mtmono_core::tensor::{ParamStore, Tensor};
    let mut s = ParamStore::new();
    s.add("x", "g", Tensor::new(vec![2], vec![0.3, -0.7]).unwrap());
    let mut stores = [s];
    let r = gradcheck::check(&mut stores, EPS, 2, |st, acc| {
        let x = st[0].iter().next().unwrap().value.data().to_vec();
        if acc {
            // Deliberately off by a factor of two.
            let p = st[0].iter_mut().next().unwrap();
            p.grad.data_mut().copy_from_slice(&[x[0], x[1]]);
        }
        Ok(x[0] * x[0] + x[1] * x[1])
    })
    .unwrap();
    assert!(r.max_rel_error > 0.4);
}
