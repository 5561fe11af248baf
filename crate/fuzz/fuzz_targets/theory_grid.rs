#![no_main]

use libfuzzer_sys::fuzz_target;
use specact::analytics::{ratio_closed_form, Grid};

// Every validated point has a closed-form ratio in [0.5, 1].
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(grid) = toml::from_str::<Grid>(text) else { return };
    if let Ok(points) = grid.points() {
        for m in points.iter().take(64) {
            let r = ratio_closed_form(m);
            assert!((0.5 - 1e-12..=1.0 + 1e-12).contains(&r), "{m:?} -> {r}");
        }
    }
});
