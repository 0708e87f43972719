#![no_main]

use libfuzzer_sys::fuzz_target;
use smolsens::io::{parse_trajectory, write_trajectory};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(traj) = parse_trajectory(text) {
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &traj).unwrap();
        let back = parse_trajectory(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.len(), traj.len());
        assert_eq!(back.n_max(), traj.n_max());
    }
});
