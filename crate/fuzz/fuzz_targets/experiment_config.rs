#![no_main]

use bobw::environment::{LossGenerator, LossScript};
use bobw::harness::{ExperimentConfig, MdpSource, WorldSpec};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cfg) = ExperimentConfig::from_json_str(text) else {
        return;
    };
    // Keep world construction cheap and away from the file system.
    let small = match &cfg.mdp {
        MdpSource::File(_) => false,
        MdpSource::Inline(_) => true,
        MdpSource::Random { layers, actions, .. } => {
            layers.len() <= 8 && layers.iter().all(|&n| n <= 8) && *actions <= 8
        }
    };
    let reads_script = matches!(
        &cfg.world,
        WorldSpec::Generator {
            generator: LossGenerator::AdversarialScripted {
                script: LossScript::File { .. }
            }
        }
    );
    if small && !reads_script && cfg.horizon <= 4096 {
        let _ = cfg.build();
    }
});
