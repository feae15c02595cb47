//! The acceptance suite as a test target. The suite runs once (criterion 10
//! replays 1 to 9 into a second directory); each test then checks one
//! criterion and prints its pass/fail line to stderr uncaptured.

use fastcs::acceptance::{run_suite, Outcome, CRITERIA};
use std::io::Write;
use std::sync::OnceLock;

const SEED: u64 = 0;

struct Suite {
    _dir: tempfile::TempDir,
    outcomes: Vec<Outcome>,
}

fn suite() -> &'static Suite {
    static SUITE: OnceLock<Suite> = OnceLock::new();
    SUITE.get_or_init(|| {
        let dir = tempfile::tempdir().expect("temp dir");
        let outcomes = run_suite(SEED, dir.path(), &CRITERIA, |o| {
            let _ = std::io::stderr().write_all(format!("{}\n", o.line()).as_bytes());
        })
        .expect("suite runs");
        Suite { _dir: dir, outcomes }
    })
}

fn check(id: u8) {
    let o = suite()
        .outcomes
        .iter()
        .find(|o| o.id == id)
        .unwrap_or_else(|| panic!("criterion {id} did not run"));
    assert!(o.passed(), "{}", o.line());
}

#[test]
fn criterion_01_forward_difference_jvp() {
    check(1);
}

#[test]
fn criterion_02_symmetric_jacobian() {
    check(2);
}

#[test]
fn criterion_03_asymmetric_jacobian() {
    check(3);
}

#[test]
fn criterion_04_correlated_gaussian_posterior() {
    check(4);
}

#[test]
fn criterion_05_constraint_satisfaction() {
    check(5);
}

#[test]
fn criterion_06_call_accounting() {
    check(6);
}

#[test]
fn criterion_07_restarts_and_perturbation() {
    check(7);
}

#[test]
fn criterion_08_layer_inference() {
    check(8);
}

#[test]
fn criterion_09_two_component_sampling() {
    check(9);
}

#[test]
fn criterion_10_byte_identical_replay() {
    check(10);
}
