fn main() {
    std::process::exit(heterolab::cli::run(std::env::args_os()));
}
