#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = icci_core::sensing::SensingSpec::from_toml(text);
    let _ = icci_core::channel::ChannelSpec::from_toml(text);
    let _ = icci_core::scene::SceneSpec::from_toml(text);
    let _ = icci_model::TrainConfig::from_toml(text);
    let _ = icci_sc::pipeline::ScConfig::from_toml(text);
    let _ = icci_cli::ExperimentSpec::from_toml(text);
});
