use irx_core::gradcheck::{self, Check};
use irx_core::Result;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn assert_all(run: impl Fn(u64) -> Result<Vec<Check>>) {
    for seed in SEEDS {
        let checks = run(seed).unwrap();
        assert!(!checks.is_empty());
        for c in checks {
            assert!(c.passed(), "seed {seed}, {}: relative error {:e}", c.what, c.error);
        }
    }
}

#[test]
fn operators() {
    assert_all(gradcheck::operators);
}

#[test]
fn combinators() {
    assert_all(gradcheck::combinators);
}

#[test]
fn blocks() {
    assert_all(gradcheck::blocks);
}

#[test]
fn irx1d_end_to_end() {
    assert_all(gradcheck::irx1d);
}

#[test]
fn cnn2d_end_to_end() {
    assert_all(gradcheck::cnn2d);
}

#[test]
fn broken_gradients_are_caught() {
    let analytic = [1.0, 2.0, 3.0];
    assert!(gradcheck::rel_err(&analytic, &[1.0, 2.0, 3.0]) < 1e-15);
    assert!(gradcheck::rel_err(&analytic, &[1.0, 2.0, 3.01]) > gradcheck::TOLERANCE);
    // a zero gradient needs only tiny absolute agreement
    assert!(gradcheck::rel_err(&[0.0], &[1e-9]) < gradcheck::TOLERANCE);
    assert!(gradcheck::rel_err(&[0.0], &[1e-6]) > gradcheck::TOLERANCE);
}
