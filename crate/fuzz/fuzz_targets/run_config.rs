#![no_main]

use libfuzzer_sys::fuzz_target;
use stsm_core::kv::KvDoc;
use stsm_core::ModelConfig;
use stsm_data::DatasetSpec;
use stsm_harness::TrainConfig;

// A run manifest read back as configuration.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(doc) = KvDoc::parse(text) else {
        return;
    };
    let mut model = ModelConfig::default();
    if model.apply_kv(&doc, "model.", false).is_ok() && model.validate().is_ok() {
        let _ = model.param_count_checked();
        let _ = model.dense_baseline().validate();
    }
    let mut train = TrainConfig::default();
    if train.apply_kv(&doc, "train.", false).is_ok() {
        let _ = train.validate();
    }
    let mut spec = DatasetSpec::default();
    if spec.apply_kv(&doc, "data.", false).is_ok() {
        let _ = spec.validate();
    }
});
