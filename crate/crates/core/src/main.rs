use std::io::Write;

fn main() {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    let result = fock_feedback::cli::run(std::env::args_os(), &mut lock);
    let _ = lock.flush();
    if let Err(e) = result {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
