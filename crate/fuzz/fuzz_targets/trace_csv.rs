#![no_main]
use hinfsearch::solvers::IterationTrace;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(trace) = IterationTrace::from_csv(text) {
        let again = IterationTrace::from_csv(&trace.to_csv()).expect("written trace parses");
        assert_eq!(again, trace);
    }
});
