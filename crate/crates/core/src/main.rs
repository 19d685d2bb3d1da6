fn main() {
    std::process::exit(edhmm::cli::main_with_args(std::env::args_os()));
}
