#![no_main]

use libfuzzer_sys::fuzz_target;
use sparse_trotter::experiments::CsvTable;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(table) = CsvTable::parse(text) {
        assert!(table.rows.iter().all(|r| r.len() == table.header.len()));
        let again = CsvTable::parse(&table.to_csv_string()).expect("re-parse of written table");
        assert_eq!(again.header, table.header);
        assert_eq!(again.rows.len(), table.rows.len());
    }
});
