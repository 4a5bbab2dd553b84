fn main() {
    std::process::exit(galforge::cli::run_cli(std::env::args_os()));
}
