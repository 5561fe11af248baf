#![no_main]

use libfuzzer_sys::fuzz_target;
use specact::call::canonicalize;
use specact::CallSpec;

// Canonical bytes are a fixed point, and parsing them back gives an equal spec.
fuzz_target!(|data: &[u8]| {
    if let Ok(spec) = CallSpec::from_raw("h", data) {
        assert_eq!(canonicalize(spec.params()).unwrap(), spec.params());
        assert_eq!(CallSpec::new("h", &spec.params_value()), spec);
    }
});
