#![no_main]

use bobw::mdp::LayeredMdp;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(mdp) = LayeredMdp::from_json_str(text) else {
        return;
    };
    // Anything accepted must survive a write/read cycle unchanged.
    let written = serde_json::to_string(&mdp.to_file()).expect("MDP serializes");
    let again = LayeredMdp::from_json_str(&written).expect("written MDP parses");
    assert_eq!(mdp, again);
});
