fn main() {
    std::process::exit(ggmoe::cli::run_cli(std::env::args_os()));
}
