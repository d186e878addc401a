#![no_main]

use libfuzzer_sys::fuzz_target;
use salmon_lcm::dataio::{parse_risk_report, risk_report_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(report) = parse_risk_report("fuzz", text) {
        let _ = risk_report_csv(&report);
    }
});
