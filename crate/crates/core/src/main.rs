fn main() {
    std::process::exit(coopstore::harness::cli::run_cli(std::env::args_os()));
}
