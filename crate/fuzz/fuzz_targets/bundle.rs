//! Loads a valid bundle with one of its files replaced by the input. The
//! first byte picks the file.

#![no_main]

use libfuzzer_sys::fuzz_target;
use salmon_lcm::dataio::load_bundle;

const FILES: [(&str, &str); 8] = [
    ("manifest.json", include_str!("../base/manifest.json")),
    ("fisheries.json", include_str!("../base/fisheries.json")),
    ("bio_params.csv", include_str!("../base/bio_params.csv")),
    ("cls.csv", include_str!("../base/cls.csv")),
    ("returns.csv", include_str!("../base/returns.csv")),
    ("homewater.csv", include_str!("../base/homewater.csv")),
    ("sea_totals.csv", include_str!("../base/sea_totals.csv")),
    ("allocations.csv", include_str!("../base/allocations.csv")),
];

fuzz_target!(|data: &[u8]| {
    let Some((&pick, body)) = data.split_first() else {
        return;
    };
    let target = pick as usize % FILES.len();
    let dir = tempfile::tempdir().unwrap();
    for (i, (name, text)) in FILES.iter().enumerate() {
        let bytes = if i == target { body } else { text.as_bytes() };
        std::fs::write(dir.path().join(name), bytes).unwrap();
    }
    if let Ok(bundle) = load_bundle(&dir.path().join("manifest.json")) {
        assert!(bundle.config.n_years > 0);
    }
});
