#![no_main]

use libfuzzer_sys::fuzz_target;
use usseg::net::checkpoint::{decode, encode};

fuzz_target!(|data: &[u8]| {
    if let Ok((net, state)) = decode(data) {
        let bytes = encode(&net, &state).expect("decoded checkpoint encodes");
        let (net2, state2) = decode(&bytes).expect("re-encoded checkpoint decodes");
        assert_eq!(net2, net);
        assert_eq!(state2, state);
    }
});
