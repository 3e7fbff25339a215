//! Runs every acceptance criterion and prints one verdict line each.
//! Exits nonzero when any criterion fails.

use std::process::ExitCode;

use concord_harness::acceptance::{run_all, AcceptanceConfig};

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    let results = match run_all(&AcceptanceConfig::default(), dir.path(), |r| println!("{r}")) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("acceptance run aborted: {e}");
            return ExitCode::FAILURE;
        }
    };
    let failed = results.iter().filter(|r| !r.pass).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
