#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| ldb_core::fuzz_entry::ic_json_bytes(data));
