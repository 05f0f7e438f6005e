#![no_main]

use libfuzzer_sys::fuzz_target;
use wholebody_teleop::protocol::{parse_command, TeleopCommand};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cmd) = parse_command(text) {
        let again = parse_command(&serde_json::to_string(&cmd).unwrap()).unwrap();
        assert_eq!(again, cmd);
        let _ = cmd.coalesce(TeleopCommand::idle(0));
    }
});
