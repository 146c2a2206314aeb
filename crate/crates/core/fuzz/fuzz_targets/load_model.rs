#![no_main]

use libfuzzer_sys::fuzz_target;
use ttpredict::harness::ModelBundle;
use ttpredict::models::{Predictor, TrainedModel};

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = TrainedModel::from_json(data) {
        let x = vec![0.5; model.n_features()];
        let _ = model.predict(&x);
    }
    if let Ok(bundle) = ModelBundle::from_json(data) {
        let _ = bundle.to_json();
    }
});
