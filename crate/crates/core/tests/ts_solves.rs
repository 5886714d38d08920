//! Kept in its own binary: the solve counter is process-wide.

use std::sync::Arc;

use odebayes::numerics::split_stream;
use odebayes::ode::{solve_count, LotkaVolterra};
use odebayes::study::{generate_dataset, TruthCurve};
use odebayes::ts::{ts_run, TsConfig};
use odebayes::Case;

#[test]
fn two_step_never_solves_the_ode() {
    let lv = Arc::new(LotkaVolterra::default());
    let truth = TruthCurve::new(lv.clone(), &[10.0; 4], Case::WellSpecified).unwrap();
    let data = generate_dataset(&truth, 200, 0.1, &mut split_stream(1, 0)).unwrap();
    let before = solve_count();
    let draws = ts_run(lv, &data, &TsConfig { draws: 100, ..TsConfig::default() }, &mut split_stream(1, 1)).unwrap();
    assert_eq!(solve_count(), before);
    assert_eq!(draws.len(), 100);
}
