#![no_main]

use libfuzzer_sys::fuzz_target;
use stsm_core::kv::KvDoc;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(doc) = KvDoc::parse(text) else {
        return;
    };
    let back = KvDoc::parse(&doc.to_string()).expect("roundtrip");
    assert_eq!(doc, back);
});
