#![no_main]
use hinfsearch::problem::Problem;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(problem) = Problem::from_json(text) {
        let again = Problem::from_json(&problem.to_json()).expect("serialized problem parses");
        assert_eq!(again, problem);
    }
});
