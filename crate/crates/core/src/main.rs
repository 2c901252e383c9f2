fn main() {
    std::process::exit(difflab::cli::run(std::env::args_os()));
}
