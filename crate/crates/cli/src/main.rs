fn main() {
    std::process::exit(signkit_cli::run_cli(std::env::args_os()));
}
