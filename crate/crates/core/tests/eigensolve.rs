use std::sync::Arc;

use pqcrit::eigen::{
    eigen_gap_report, eigen_residual, eigs_continuation, eigs_linear_p2, first_eigen_p, gap_report, rayleigh,
    EigenMethod,
};
use pqcrit::fem::{FemFunction, FemSpace, Regularization};
use pqcrit::mesh::build_box_mesh;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn square(div: usize) -> Arc<FemSpace> {
    FemSpace::new(build_box_mesh(2, &[div; 2], &[1.0; 2]).unwrap()).unwrap()
}

fn cube(div: usize) -> Arc<FemSpace> {
    FemSpace::new(build_box_mesh(3, &[div; 3], &[1.0; 3]).unwrap()).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn rayleigh_is_scale_invariant_and_bounded_below() {
    let space = square(8);
    let seq = eigs_linear_p2(&space, 1).unwrap();
    let l1 = seq.pairs[0].value;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let u = FemFunction::random(space.clone(), &mut rng);
        let a = rayleigh(&u, 2.0).unwrap();
        assert!(rel(rayleigh(&u.scaled(3.0), 2.0).unwrap(), a) < 1e-14);
        assert!(a >= l1 * (1.0 - 1e-12));
    }
    assert!(rayleigh(&FemFunction::zeros(space), 2.0).is_err());
}

#[test]
fn linear_pairs_are_consistent() {
    let space = cube(6);
    let seq = eigs_linear_p2(&space, 5).unwrap();
    assert_eq!(seq.method, EigenMethod::LinearP2);
    assert!(seq.pairs[0].value > 0.0);
    for w in seq.pairs.windows(2) {
        assert!(w[1].value >= w[0].value);
    }
    for e in &seq.pairs {
        let u = e.function.coeffs();
        assert!((space.grad_power_integral(u, 2.0) - 1.0).abs() < 1e-10);
        assert!(rel(rayleigh(&e.function, 2.0).unwrap(), e.value) < 1e-10);
        let res = eigen_residual(&space, u, e.value, 2.0, Regularization::default()).unwrap();
        assert!(res < 1e-6);
    }
    assert!(eigs_linear_p2(&space, space.num_dofs() + 1).is_err());
}

#[test]
fn linear_values_decrease_under_refinement() {
    let coarse = build_box_mesh(2, &[4, 4], &[1.0, 1.0]).unwrap();
    let mid = coarse.refine_uniform().unwrap();
    let fine = mid.refine_uniform().unwrap();
    let vals: Vec<Vec<f64>> = [coarse, mid, fine]
        .into_iter()
        .map(|m| eigs_linear_p2(&FemSpace::new(m).unwrap(), 4).unwrap().values())
        .collect();
    for k in 0..4 {
        assert!(vals[1][k] <= vals[0][k] * (1.0 + 1e-12));
        assert!(vals[2][k] <= vals[1][k] * (1.0 + 1e-12));
    }
}

#[test]
fn first_eigen_at_p2_matches_linear() {
    let space = square(12);
    let lin = eigs_linear_p2(&space, 1).unwrap().pairs[0].value;
    let e = first_eigen_p(&space, 2.0, 7).unwrap();
    assert!(rel(e.value, lin) < 1e-6);
}

#[test]
fn first_eigen_is_minimal_sign_definite_and_deterministic() {
    let space = square(10);
    let e = first_eigen_p(&space, 2.5, 3).unwrap();
    let again = first_eigen_p(&space, 2.5, 3).unwrap();
    assert_eq!(e.value.to_bits(), again.value.to_bits());
    assert_eq!(e.function.coeffs(), again.function.coeffs());
    let c = e.function.coeffs();
    assert!(c.iter().all(|&x| x >= 0.0) || c.iter().all(|&x| x <= 0.0));
    assert!((2.5 * space.grad_power_integral(c, 2.5) / 2.5 - 1.0).abs() < 1e-10);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let v = FemFunction::random(space.clone(), &mut rng);
        assert!(e.value <= rayleigh(&v, 2.5).unwrap() * (1.0 + 1e-10));
    }
    assert!(rel(rayleigh(&e.function, 2.5).unwrap(), e.value) < 1e-8);
}

#[test]
fn continuation_at_p2_is_the_linear_sequence() {
    let space = square(8);
    let lin = eigs_linear_p2(&space, 3).unwrap();
    let cont = eigs_continuation(&space, 2.0, 3, 4).unwrap();
    for (a, b) in lin.values().iter().zip(cont.values()) {
        assert!((a - b).abs() <= 1e-10 * a);
    }
}

#[test]
fn continuation_first_slot_matches_inverse_iteration() {
    let space = square(10);
    let cont = eigs_continuation(&space, 2.5, 3, 4).unwrap();
    assert_eq!(cont.method, EigenMethod::Continuation);
    let first = first_eigen_p(&space, 2.5, 0).unwrap();
    assert!(rel(cont.pairs[0].value, first.value) < 1e-4);
    for w in cont.pairs.windows(2) {
        assert!(w[1].value >= w[0].value);
    }
    for e in &cont.pairs {
        assert!(e.residual < 1e-6);
        assert!(rel(rayleigh(&e.function, 2.5).unwrap(), e.value) < 1e-8);
    }
}

#[test]
fn gap_flags_on_synthetic_and_cube_sequences() {
    assert!(gap_report(&[1.0, 2.0, 3.5, 7.0]).iter().all(|g| !g.near_multiple));
    assert!(gap_report(&[4.0; 5]).iter().all(|g| g.near_multiple));
    let seq = eigs_linear_p2(&cube(6), 4).unwrap();
    let gaps = eigen_gap_report(&seq).unwrap();
    assert!(!gaps[0].near_multiple);
    assert!(gaps[1].near_multiple);
    let mut one = seq.clone();
    one.pairs.truncate(1);
    assert!(eigen_gap_report(&one).is_err());
}
