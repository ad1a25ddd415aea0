#![no_main]

use libfuzzer_sys::fuzz_target;
use regscatter::harness::ProbeEstimator;
use regscatter::io::{parse_center, parse_f64_list, parse_matrix, parse_models, parse_radial, parse_target};
use regscatter::population::Radial;
use regscatter::tuning::{Criterion, EstimatorKind};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_f64_list(text);
    let _ = parse_center(text);
    let _ = parse_target(text);
    let _ = parse_radial(text);
    let _ = parse_matrix(text);
    for q in [2, 5] {
        let _ = parse_models(text, q, Radial::Normal);
    }
    let _ = text.parse::<ProbeEstimator>();
    let _ = text.parse::<EstimatorKind>();
    let _ = text.parse::<Criterion>();
});
