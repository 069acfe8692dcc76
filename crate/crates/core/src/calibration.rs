//! Committed golden thresholds for the discretization-limited checks.
//!
//! The continuum identities (jump composition, blur semigroup, PConv
//! equivariance) cannot hold exactly on a sampled grid, so each check
//! compares against a value measured once on a fixed configuration and
//! committed in `calibration.txt`. Regenerate with
//! `cargo run -p sepc-core --example calibrate` after any change to the
//! kernels or the radius rule, and review the diff.

use std::sync::OnceLock;

/// Raw committed calibration table.
pub const CALIBRATION_TEXT: &str = include_str!("calibration.txt");

/// Parsed calibration values. Field names mirror the keys in the table.
#[derive(Debug, Clone)]
pub struct Thresholds {
    /// Jump-composition relative L2 discrepancy, m=1 n=1 s0=0.5 on 128x128
    /// band-limited noise (seed 7, pre-blur t=2).
    pub lemma1_m1_n1: f64,
    /// Blur semigroup interior max abs error, t1=t2=1.5 on 64x64 band-limited
    /// noise (seed 7, pre-blur t=2).
    pub semigroup_max_abs: f64,
    /// jump(jump(x,1),1) vs jump(x,2) interior max abs error, same input
    /// family at 64x64.
    pub jump_compose_max_abs: f64,
    /// PConv equivariance error on the committed Gaussian-pyramid task.
    pub equivariance_gaussian: f64,
    /// Same metric on the spatially shuffled control pyramid.
    pub equivariance_control: f64,
}

fn parse(text: &str) -> Thresholds {
    let mut lemma1_m1_n1 = None;
    let mut semigroup_max_abs = None;
    let mut jump_compose_max_abs = None;
    let mut equivariance_gaussian = None;
    let mut equivariance_control = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .unwrap_or_else(|| panic!("calibration line without '=': {line}"));
        let value: f64 = value
            .trim()
            .parse()
            .unwrap_or_else(|_| panic!("bad calibration value in: {line}"));
        match key.trim() {
            "lemma1_m1_n1" => lemma1_m1_n1 = Some(value),
            "semigroup_max_abs" => semigroup_max_abs = Some(value),
            "jump_compose_max_abs" => jump_compose_max_abs = Some(value),
            "equivariance_gaussian" => equivariance_gaussian = Some(value),
            "equivariance_control" => equivariance_control = Some(value),
            other => panic!("unknown calibration key: {other}"),
        }
    }
    Thresholds {
        lemma1_m1_n1: lemma1_m1_n1.expect("missing lemma1_m1_n1"),
        semigroup_max_abs: semigroup_max_abs.expect("missing semigroup_max_abs"),
        jump_compose_max_abs: jump_compose_max_abs.expect("missing jump_compose_max_abs"),
        equivariance_gaussian: equivariance_gaussian.expect("missing equivariance_gaussian"),
        equivariance_control: equivariance_control.expect("missing equivariance_control"),
    }
}

/// The committed thresholds, parsed once.
pub fn thresholds() -> &'static Thresholds {
    static CACHE: OnceLock<Thresholds> = OnceLock::new();
    CACHE.get_or_init(|| parse(CALIBRATION_TEXT))
}
