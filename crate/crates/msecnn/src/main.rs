use std::io::Write;
use std::panic;

fn main() {
    let code = panic::catch_unwind(|| {
        let stdout = std::io::stdout();
        let stderr = std::io::stderr();
        msecnn::cli::run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
    })
    .unwrap_or_else(|_| {
        let _ = writeln!(std::io::stderr(), "error: internal invariant violated (panic)");
        2
    });
    std::process::exit(code);
}
