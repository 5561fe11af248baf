#![no_main]

use libfuzzer_sys::fuzz_target;
use specact::envs::{make_env, EnvKind};

/// Size fields that allocate proportionally; large values are valid, just slow.
const SIZES: [&str; 5] = ["script_len", "turns", "questions", "users", "orders_per_user"];

fuzz_target!(|data: &[u8]| {
    let Some((&k, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let Ok(table) = toml::from_str::<toml::Table>(text) else { return };
    if SIZES.iter().any(|f| table.get(*f).and_then(toml::Value::as_integer).is_some_and(|n| n > 4096)) {
        return;
    }
    let kind = EnvKind::ALL[k as usize % EnvKind::ALL.len()];
    if let Err(e) = make_env(kind, &toml::Value::Table(table), 0) {
        assert!(!e.message.is_empty());
    }
});
