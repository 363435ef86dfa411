fn main() {
    std::process::exit(raopt::harness::cli::run(std::env::args_os()));
}
