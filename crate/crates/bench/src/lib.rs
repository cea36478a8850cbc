//! Fixtures for the calibration benches.

use qacal_core::simulator::{simulate_responses, spread_2pl_items, SimParams, SimSpec, ThetaSpec};
use qacal_core::ResponseMatrix;

/// Simulated mixed form: `n_items` 2PL items plus half as many 5-category
/// graded items.
pub fn mixed_matrix(n_persons: usize, n_items: usize, seed: u64) -> ResponseMatrix {
    let mut items = spread_2pl_items(n_items, (0.6, 2.0), (-2.0, 2.0));
    for (k, item) in spread_2pl_items(n_items / 2, (0.8, 2.2), (-1.0, 1.0)).into_iter().enumerate() {
        let SimParams::TwoPl { a, b: Some(b), .. } = item.params else { unreachable!() };
        items.push(qacal_core::simulator::SimItem {
            id: format!("graded_{:02}", k + 1),
            params: SimParams::Graded {
                a,
                thresholds: vec![b - 1.5, b - 0.5, b + 0.5, b + 1.5],
            },
            dif_shift: 0.0,
        });
    }
    let spec = SimSpec {
        n_persons,
        seed,
        theta: ThetaSpec::default(),
        items,
    };
    simulate_responses(&spec).expect("valid spec").matrix
}
