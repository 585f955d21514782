fn main() {
    std::process::exit(hkit::cli::run_cli(std::env::args_os()));
}
