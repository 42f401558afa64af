fn main() {
    if let Err(e) = noncum::cli::run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
