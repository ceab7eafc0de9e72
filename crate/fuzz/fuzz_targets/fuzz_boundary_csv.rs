//! Fuzz the boundary.csv reader: arbitrary bytes must never panic. Any
//! accepted table must satisfy the monotone-boundary invariants and
//! round-trip through evaluation.

#![no_main]

use libfuzzer_sys::fuzz_target;
use liquidex::boundary::read_boundary_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(b) = read_boundary_csv(data, 400.0) {
        assert!(b.grid.windows(2).all(|w| w[0] < w[1]));
        assert!(b.values.windows(2).all(|w| w[0] <= w[1]));
        // Evaluation must be total and within the clamp.
        for &x in &[f64::MIN, b.grid[0], *b.grid.last().unwrap(), f64::MAX] {
            let v = b.eval(x);
            assert!((0.0..=b.clamp_hi).contains(&v));
        }
    }
});
