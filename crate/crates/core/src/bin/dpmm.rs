fn main() {
    std::process::exit(dpmm::cli::main_with_args(std::env::args_os()));
}
