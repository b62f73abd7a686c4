fn main() {
    std::process::exit(covmany::cli::run(std::env::args_os()));
}
