fn main() {
    std::process::exit(nnscene::cli::run_cli(std::env::args_os()));
}
