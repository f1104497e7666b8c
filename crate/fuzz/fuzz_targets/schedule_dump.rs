#![no_main]

use libfuzzer_sys::fuzz_target;
use sparse_trotter::Schedule;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // Dumps are written with 17 significant digits, so a parsed schedule
    // must reproduce itself exactly.
    if let Ok(schedule) = Schedule::parse_dump(text) {
        let again = Schedule::parse_dump(&schedule.to_dump()).expect("re-parse of dumped schedule");
        assert_eq!(again, schedule);
    }
});
