fn main() {
    std::process::exit(pgmfuse::cli::run(std::env::args_os()));
}
