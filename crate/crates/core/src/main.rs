use std::io::{stderr, stdout};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;

use axkern::cli::{run, EXIT_INTERNAL};

fn main() -> ExitCode {
    let code = catch_unwind(AssertUnwindSafe(|| run(std::env::args_os(), &mut stdout(), &mut stderr())))
        .unwrap_or(EXIT_INTERNAL);
    ExitCode::from(code as u8)
}
