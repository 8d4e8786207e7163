fn main() {
    std::process::exit(levsense::cli::run_cli(std::env::args_os()));
}
