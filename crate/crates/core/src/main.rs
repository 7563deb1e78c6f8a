fn main() {
    std::process::exit(fingerdiff::cli::main_with_args(std::env::args_os()));
}
