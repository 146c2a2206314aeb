#![no_main]

use libfuzzer_sys::fuzz_target;
use ttpredict::match_data::{parse_matches, serialize_matches};

fuzz_target!(|data: &[u8]| {
    if let Ok(matches) = parse_matches(data) {
        let bytes = serialize_matches(&matches).expect("parsed matches serialize");
        let again = parse_matches(&bytes).expect("serialized matches parse");
        assert_eq!(again, matches);
    }
});
